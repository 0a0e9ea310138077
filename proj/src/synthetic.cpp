// Copyright 2026 The sacon Authors.
// SPDX-License-Identifier: Apache-2.0
#include "sacon/synthetic.hpp"

#include "sacon/error.hpp"

#include <cmath>
#include <memory>
#include <vector>

namespace sacon {

namespace {

Matrix random_dense_chain(Rng& rng, int n) {
  Matrix p(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) p(i, j) = 0.2 + rng.uniform();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

}  // namespace

SAProblem make_synthetic_problem(const SyntheticSpec& spec) {
  if (spec.dim < 1 || spec.n_states < 1) throw Error(Errc::InvalidArgument, "dim and n_states must be positive");
  if (!(spec.alpha > 0.0 && spec.alpha < 1.0)) throw Error(Errc::BadRange, "alpha must lie in (0, 1)");
  if (!(spec.noise >= 0.0)) throw Error(Errc::BadRange, "noise must be nonnegative");
  if (!(spec.tilt >= 0.0 && spec.tilt < 1.0)) throw Error(Errc::BadRange, "tilt must lie in [0, 1)");

  const int d = spec.dim;
  const int S = spec.n_states;
  Rng rng(derive_seed(spec.seed, 0x5a17));

  Vector xs = spec.x_star ? *spec.x_star : Vector(Vector::Ones(d));
  if (xs.size() != d) throw Error(Errc::InvalidArgument, "x_star dimension mismatch");

  auto diag = std::make_shared<Matrix>(S, d);
  for (int i = 0; i < S; ++i) {
    for (int l = 0; l < d; ++l) (*diag)(i, l) = spec.alpha * rng.uniform(0.1, 1.0);
  }
  (*diag)(0, 0) = spec.alpha;

  Matrix base = spec.base_chain ? *spec.base_chain : random_dense_chain(rng, S);
  FiniteChain base_chain = validate_chain(base);
  Matrix alt = random_dense_chain(rng, S);

  SAProblem pr;
  pr.name = "synthetic";
  pr.dim = d;
  pr.norm = spec.norm;
  pr.alpha = spec.alpha;
  pr.x_star = xs;
  pr.F = [diag, xs](const Vector& x, int i) -> Vector {
    return xs + diag->row(i).transpose().cwiseProduct(x - xs);
  };

  if (spec.tilt == 0.0) {
    pr.chain = ParamChain::constant(d, base_chain);
  } else {
    const double tilt = spec.tilt;
    const double anchor = xs[0];
    Matrix b = base_chain.transition();
    pr.chain = ParamChain::from_kernel(d, S, [b, alt, tilt, anchor](const Vector& x) -> Matrix {
      const double s = tilt * 0.5 * (1.0 + std::tanh(x[0] - anchor));
      return (1.0 - s) * b + s * alt;
    });
    // |ds/dx_1| <= tilt / 2 and |x_1| <= ||x|| in every supported norm.
    const double l1 = 0.5 * tilt * inf_operator_norm(b - alt);
    pr.chain.set_lipschitz({l1, Provenance::Declared}, {0.0, Provenance::Estimated});
  }

  if (spec.noise > 0.0) {
    const double sigma = spec.noise;
    pr.mds = [sigma, d](const Vector&, int, int, Rng& r) -> Vector {
      Vector m(d);
      for (int l = 0; l < d; ++l) m[l] = r.uniform(-sigma, sigma);
      return m;
    };
  }
  pr.K = (1.0 + spec.alpha) * norm(xs, spec.norm) + spec.noise * kappa(d, spec.norm);
  pr.K0 = spec.noise;
  pr.L3 = diag->maxCoeff();
  return pr;
}

}  // namespace sacon
