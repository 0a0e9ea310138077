// Copyright 2026 The sacon Authors.
// SPDX-License-Identifier: Apache-2.0
#include "sacon/error.hpp"
#include "sacon/linalg.hpp"
#include "sacon/rng.hpp"
#include "sacon/tagged.hpp"

#include <cmath>

namespace sacon {

std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::BadRange: return "BadRange";
    case Errc::IndexOutOfRange: return "IndexOutOfRange";
    case Errc::NotStochastic: return "NotStochastic";
    case Errc::NotIrreducible: return "NotIrreducible";
    case Errc::SingularSystem: return "SingularSystem";
    case Errc::SingularReduced: return "SingularReduced";
    case Errc::EmptyDomain: return "EmptyDomain";
    case Errc::NoCertificate: return "NoCertificate";
    case Errc::NonFiniteIterate: return "NonFiniteIterate";
    case Errc::MissingNoiseLog: return "MissingNoiseLog";
    case Errc::DivergentTail: return "DivergentTail";
    case Errc::NoFeasibleD: return "NoFeasibleD";
    case Errc::Infeasible: return "Infeasible";
    case Errc::Inadmissible: return "Inadmissible";
    case Errc::NoConvergence: return "NoConvergence";
    case Errc::ConfigError: return "ConfigError";
    case Errc::ParseError: return "ParseError";
  }
  return "Unknown";
}

std::string_view to_string(Provenance p) {
  switch (p) {
    case Provenance::Declared: return "declared";
    case Provenance::User: return "user";
    case Provenance::Estimated: return "estimated";
    case Provenance::Optimistic: return "optimistic";
    case Provenance::Calibrated: return "calibrated";
    case Provenance::Derived: return "derived";
  }
  return "unknown";
}

//---------------------------------------------------------------------------//
// Norms and balls
//---------------------------------------------------------------------------//

double norm(const Vector& v, Norm kind) {
  if (v.size() == 0) return 0.0;
  switch (kind) {
    case Norm::Sup: return v.cwiseAbs().maxCoeff();
    case Norm::Euclidean: return v.norm();
    case Norm::One: return v.cwiseAbs().sum();
  }
  return 0.0;
}

Norm parse_norm(std::string_view name) {
  if (name == "sup" || name == "inf" || name == "max") return Norm::Sup;
  if (name == "euclidean" || name == "l2" || name == "2") return Norm::Euclidean;
  if (name == "one" || name == "l1" || name == "1") return Norm::One;
  throw Error(Errc::InvalidArgument, "unknown norm '" + std::string(name) + "'");
}

std::string_view to_string(Norm kind) {
  switch (kind) {
    case Norm::Sup: return "sup";
    case Norm::Euclidean: return "euclidean";
    case Norm::One: return "one";
  }
  return "unknown";
}

double kappa(int dim, Norm kind) {
  switch (kind) {
    case Norm::Sup: return 1.0;
    case Norm::Euclidean: return std::sqrt(static_cast<double>(dim));
    case Norm::One: return static_cast<double>(dim);
  }
  return 1.0;
}

Vector sample_in_ball(Rng& rng, int dim, double radius, Norm kind) {
  Vector v(dim);
  switch (kind) {
    case Norm::Sup:
      for (int k = 0; k < dim; ++k) v[k] = rng.uniform(-radius, radius);
      return v;
    case Norm::Euclidean: {
      for (int k = 0; k < dim; ++k) v[k] = rng.normal();
      double n = v.norm();
      if (n == 0.0) return Vector::Zero(dim);
      double r = radius * std::pow(rng.uniform(), 1.0 / dim);
      return v * (r / n);
    }
    case Norm::One: {
      // Exponential spacings give a uniform point on the simplex; random signs
      // and a volume-correct radial draw finish the cross-polytope sample.
      double total = 0.0;
      for (int k = 0; k < dim; ++k) {
        v[k] = -std::log1p(-rng.uniform());
        total += v[k];
      }
      double r = radius * std::pow(rng.uniform(), 1.0 / dim);
      for (int k = 0; k < dim; ++k) {
        double sign = (rng.bits() & 1u) ? 1.0 : -1.0;
        v[k] = sign * v[k] / total * r;
      }
      return v;
    }
  }
  return v;
}

std::vector<Vector> ball_vertices(Rng& rng, int dim, double radius, Norm kind, int max_count) {
  std::vector<Vector> out;
  if (kind == Norm::Sup) {
    if (dim < 31 && (1LL << dim) <= max_count) {
      for (long long mask = 0; mask < (1LL << dim); ++mask) {
        Vector v(dim);
        for (int k = 0; k < dim; ++k) v[k] = ((mask >> k) & 1) ? radius : -radius;
        out.push_back(std::move(v));
      }
    } else {
      for (int c = 0; c < max_count; ++c) {
        Vector v(dim);
        for (int k = 0; k < dim; ++k) v[k] = (rng.bits() & 1u) ? radius : -radius;
        out.push_back(std::move(v));
      }
    }
    return out;
  }
  for (int k = 0; k < dim && static_cast<int>(out.size()) + 2 <= max_count; ++k) {
    Vector e = Vector::Zero(dim);
    e[k] = radius;
    out.push_back(e);
    out.push_back(-e);
  }
  if (kind == Norm::Euclidean && dim > 1 && static_cast<int>(out.size()) + 2 <= max_count) {
    Vector diag = Vector::Constant(dim, radius / std::sqrt(static_cast<double>(dim)));
    out.push_back(diag);
    out.push_back(-diag);
  }
  return out;
}

double inf_operator_norm(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  return m.cwiseAbs().rowwise().sum().maxCoeff();
}

//---------------------------------------------------------------------------//
// RNG
//---------------------------------------------------------------------------//

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  std::uint64_t z = master + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

int Rng::categorical(const Eigen::Ref<const Eigen::RowVectorXd>& probs) {
  double u = uniform();
  double acc = 0.0;
  int last_positive = 0;
  for (int j = 0; j < probs.size(); ++j) {
    if (probs[j] <= 0.0) continue;
    last_positive = j;
    acc += probs[j];
    if (u < acc) return j;
  }
  // Rounding left a sliver above the cumulative sum.
  return last_positive;
}

}  // namespace sacon
