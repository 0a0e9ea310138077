// Copyright 2026 The sacon Authors.
// SPDX-License-Identifier: Apache-2.0
#include "sacon/markov.hpp"

#include "sacon/error.hpp"
#include "sacon/rng.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace sacon {

namespace {

std::vector<bool> reachable(const Matrix& p, double threshold, bool reverse) {
  const int n = static_cast<int>(p.rows());
  std::vector<bool> seen(n, false);
  std::vector<int> stack{0};
  seen[0] = true;
  while (!stack.empty()) {
    int i = stack.back();
    stack.pop_back();
    for (int j = 0; j < n; ++j) {
      double w = reverse ? p(j, i) : p(i, j);
      if (w > threshold && !seen[j]) {
        seen[j] = true;
        stack.push_back(j);
      }
    }
  }
  return seen;
}

void check_pinned(int n_states, int pinned) {
  if (pinned < 0 || pinned >= n_states) {
    throw Error(Errc::IndexOutOfRange,
                "pinned state " + std::to_string(pinned) + " outside [0, " + std::to_string(n_states) + ")");
  }
}

Matrix reduced_generator(const Matrix& p, int pinned) {
  const int n = static_cast<int>(p.rows());
  const auto keep = reduced_states(n, pinned);
  const int m = n - 1;
  Matrix a(m, m);
  for (int r = 0; r < m; ++r) {
    for (int c = 0; c < m; ++c) a(r, c) = (r == c ? 1.0 : 0.0) - p(keep[r], keep[c]);
  }
  return a;
}

}  // namespace

//---------------------------------------------------------------------------//
// FiniteChain
//---------------------------------------------------------------------------//

FiniteChain::FiniteChain(Matrix p) : p_(std::move(p)), cache_(std::make_shared<Cache>()) {}

const Vector& FiniteChain::pi() const {
  std::call_once(cache_->once, [this] { cache_->pi = stationary_distribution(p_); });
  return cache_->pi;
}

bool is_irreducible(const Matrix& p, double threshold) {
  if (p.rows() == 0) return false;
  auto fwd = reachable(p, threshold, false);
  auto bwd = reachable(p, threshold, true);
  for (std::size_t i = 0; i < fwd.size(); ++i) {
    if (!fwd[i] || !bwd[i]) return false;
  }
  return true;
}

FiniteChain validate_chain(const Matrix& p) {
  if (p.rows() == 0 || p.rows() != p.cols()) {
    throw Error(Errc::InvalidArgument, "transition matrix must be square and non-empty");
  }
  if (!p.allFinite() || p.minCoeff() < 0.0) {
    throw Error(Errc::InvalidArgument, "transition matrix entries must be finite and nonnegative");
  }
  Matrix q = p;
  for (int i = 0; i < q.rows(); ++i) {
    double s = q.row(i).sum();
    if (std::abs(s - 1.0) > kRowSumTolerance) {
      std::ostringstream msg;
      msg << "row " << i << " sums to " << std::setprecision(17) << s;
      throw Error(Errc::NotStochastic, msg.str());
    }
    q.row(i) /= s;
  }
  if (!is_irreducible(q)) {
    throw Error(Errc::NotIrreducible, "support graph is not strongly connected");
  }
  return FiniteChain(std::move(q));
}

//---------------------------------------------------------------------------//
// Stationary distribution
//---------------------------------------------------------------------------//

Vector stationary_distribution(const Matrix& p) {
  const int n = static_cast<int>(p.rows());
  Matrix a(n + 1, n);
  a.topRows(n) = Matrix::Identity(n, n) - p.transpose();
  a.row(n).setOnes();
  Vector b = Vector::Zero(n + 1);
  b[n] = 1.0;

  Eigen::ColPivHouseholderQR<Matrix> qr(a);
  qr.setThreshold(1e-13);
  if (qr.rank() < n) {
    throw Error(Errc::SingularSystem, "stationary system has rank " + std::to_string(qr.rank()) + " < " +
                                          std::to_string(n));
  }
  Vector pi = qr.solve(b);
  // One step of iterative refinement keeps ||pi P - pi||_1 at rounding level
  // for poorly mixing chains.
  Vector r = b - a * pi;
  pi += qr.solve(r);
  pi /= pi.sum();
  return pi;
}

Vector stationary_distribution(const FiniteChain& chain) { return chain.pi(); }

//---------------------------------------------------------------------------//
// Poisson equation
//---------------------------------------------------------------------------//

std::vector<int> reduced_states(int n_states, int pinned_state) {
  std::vector<int> keep;
  keep.reserve(n_states > 0 ? n_states - 1 : 0);
  for (int i = 0; i < n_states; ++i) {
    if (i != pinned_state) keep.push_back(i);
  }
  return keep;
}

PoissonSolver::PoissonSolver(const FiniteChain& chain, int pinned_state) : chain_(chain), pinned_(pinned_state) {
  check_pinned(chain.n_states(), pinned_state);
  if (chain.n_states() == 1) return;
  Matrix a = reduced_generator(chain.transition(), pinned_state);
  lu_.compute(a);
  if (!(lu_.rcond() > 1e-14)) {
    throw Error(Errc::SingularReduced, "I - P^{-i0} is numerically singular");
  }
}

PoissonSolution PoissonSolver::solve(const Matrix& f_values) const {
  const int n = chain_.n_states();
  if (f_values.rows() != n) {
    throw Error(Errc::InvalidArgument, "f_values must have one row per state");
  }
  const int d = static_cast<int>(f_values.cols());
  PoissonSolution out;
  out.pinned_state = pinned_;
  out.V = Matrix::Zero(n, d);
  if (n > 1) {
    const Eigen::RowVectorXd mean = chain_.pi().transpose() * f_values;
    const auto keep = reduced_states(n, pinned_);
    Matrix rhs(n - 1, d);
    for (int r = 0; r < n - 1; ++r) rhs.row(r) = f_values.row(keep[r]) - mean;
    Matrix v = lu_.solve(rhs);
    for (int r = 0; r < n - 1; ++r) out.V.row(keep[r]) = v.row(r);
  }
  out.V.row(pinned_).setZero();
  out.residual = poisson_residual(chain_, f_values, out.V);
  return out;
}

Matrix PoissonSolver::fundamental_matrix() const {
  const int m = chain_.n_states() - 1;
  if (m == 0) return Matrix(0, 0);
  return lu_.inverse();
}

PoissonSolution poisson_solve(const FiniteChain& chain, const Matrix& f_values, int pinned_state) {
  return PoissonSolver(chain, pinned_state).solve(f_values);
}

double poisson_residual(const FiniteChain& chain, const Matrix& f_values, const Matrix& V) {
  const Eigen::RowVectorXd mean = chain.pi().transpose() * f_values;
  Matrix expected = f_values.rowwise() - mean;
  expected += chain.transition() * V;
  if (V.size() == 0) return 0.0;
  return (V - expected).cwiseAbs().maxCoeff();
}

Matrix fundamental_matrix(const FiniteChain& chain, int pinned_state) {
  return PoissonSolver(chain, pinned_state).fundamental_matrix();
}

Vector hitting_time_vector(const FiniteChain& chain, int pinned_state) {
  return fundamental_matrix(chain, pinned_state).rowwise().sum();
}

//---------------------------------------------------------------------------//
// ParamChain
//---------------------------------------------------------------------------//

ParamChain ParamChain::constant(int dim, FiniteChain chain) {
  ParamChain pc;
  pc.dim_ = dim;
  pc.n_states_ = chain.n_states();
  pc.constant_ = std::move(chain);
  pc.l1_ = {0.0, Provenance::Declared};
  pc.l2_ = {0.0, Provenance::Declared};
  return pc;
}

ParamChain ParamChain::from_kernel(int dim, int n_states, Kernel kernel) {
  ParamChain pc;
  pc.dim_ = dim;
  pc.n_states_ = n_states;
  pc.kernel_ = std::move(kernel);
  return pc;
}

Matrix ParamChain::transition_matrix(const Vector& x) const {
  if (constant_) return constant_->transition();
  return kernel_(x);
}

FiniteChain ParamChain::chain_at(const Vector& x) const {
  if (constant_) return *constant_;
  FiniteChain c = validate_chain(kernel_(x));
  if (c.n_states() != n_states_) {
    throw Error(Errc::InvalidArgument, "kernel changed the state count");
  }
  return c;
}

const FiniteChain& ParamChain::constant_chain() const {
  if (!constant_) throw Error(Errc::InvalidArgument, "kernel is not constant");
  return *constant_;
}

KernelLipschitz estimate_kernel_lipschitz(const ParamChain& chain, double domain_radius, int n_samples,
                                          std::uint64_t seed, Norm kind) {
  if (!(domain_radius > 0.0)) throw Error(Errc::EmptyDomain, "domain radius must be positive");
  if (n_samples < 2) throw Error(Errc::BadRange, "need at least two samples");
  KernelLipschitz out;
  if (chain.is_constant()) return out;

  Rng rng(seed);
  const int d = chain.dim();
  std::vector<Vector> points;
  points.reserve(n_samples);
  for (auto& v : ball_vertices(rng, d, domain_radius, kind, n_samples / 4)) points.push_back(std::move(v));
  while (static_cast<int>(points.size()) < n_samples) points.push_back(sample_in_ball(rng, d, domain_radius, kind));

  auto slopes = [&](const Vector& w, const FiniteChain& cw, const Vector& v, const FiniteChain& cv) {
    double dist = norm(w - v, kind);
    if (dist <= 0.0) return;
    double l1 = inf_operator_norm(cw.transition() - cv.transition()) / dist;
    double l2 = (cw.pi() - cv.pi()).cwiseAbs().sum() / dist;
    out.L1 = std::max(out.L1, l1);
    out.L2 = std::max(out.L2, l2);
  };

  const double h = 1e-4 * domain_radius;
  std::optional<FiniteChain> prev;
  for (std::size_t k = 0; k < points.size(); ++k) {
    FiniteChain ck = chain.chain_at(points[k]);
    if (prev) slopes(points[k], ck, points[k - 1], *prev);
    // Local secant captures the slope where the kernel is steepest.
    Vector dir = sample_in_ball(rng, d, 1.0, kind);
    double dn = norm(dir, kind);
    if (dn > 0.0) {
      Vector near = points[k] + dir * (h / dn);
      slopes(near, chain.chain_at(near), points[k], ck);
    }
    prev = std::move(ck);
  }
  return out;
}

//---------------------------------------------------------------------------//
// Text format
//---------------------------------------------------------------------------//

FiniteChain read_chain(std::istream& in) {
  int n = 0;
  if (!(in >> n) || n <= 0) throw Error(Errc::ParseError, "expected a positive state count");
  Matrix p(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (!(in >> p(i, j))) {
        throw Error(Errc::ParseError, "missing probability at row " + std::to_string(i) + ", column " +
                                          std::to_string(j));
      }
    }
  }
  return validate_chain(p);
}

void write_chain(std::ostream& out, const FiniteChain& chain) {
  const int n = chain.n_states();
  out << n << '\n' << std::setprecision(17);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) out << (j ? " " : "") << chain.p(i, j);
    out << '\n';
  }
}

FiniteChain load_chain(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::ConfigError, "cannot open chain file '" + path + "'");
  return read_chain(in);
}

}  // namespace sacon
