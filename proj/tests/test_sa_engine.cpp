// Copyright 2026 The sacon Authors.
// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"

#include "sacon/error.hpp"
#include "sacon/parallel.hpp"
#include "sacon/sa_engine.hpp"
#include "sacon/synthetic.hpp"

#include <cmath>
#include <sstream>

using namespace sacon;

namespace {

Errc code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return Errc::InvalidArgument;
}

FiniteChain two_state() {
  Matrix p(2, 2);
  p << 0.3, 0.7, 0.6, 0.4;
  return validate_chain(p);
}

SAProblem scaled_identity(double scale, int d = 1) {
  SAProblem pr;
  pr.dim = d;
  pr.F = [scale](const Vector& x, int) -> Vector { return scale * x; };
  pr.chain = ParamChain::constant(d, two_state());
  pr.alpha = scale;
  pr.x_star = Vector::Zero(d);
  return pr;
}

// d = 1, x* = 0, state-dependent gain and uniform noise in [-s, s].
SAProblem noisy_scalar(double s) {
  SAProblem pr;
  pr.dim = 1;
  pr.F = [](const Vector& x, int i) -> Vector { return (i == 0 ? 0.2 : 0.6) * x; };
  pr.chain = ParamChain::constant(1, two_state());
  pr.mds = [s](const Vector&, int, int, Rng& r) -> Vector { return Vector::Constant(1, r.uniform(-s, s)); };
  pr.alpha = 0.6;
  pr.x_star = Vector::Zero(1);
  pr.K = s;
  pr.K0 = s;
  pr.L3 = 0.6;
  return pr;
}

}  // namespace

TEST_CASE("simulate: stationary dynamics") {
  SAProblem pr = scaled_identity(1.0, 3);
  Vector x0(3);
  x0 << 1.0, -2.0, 0.5;
  auto tr = simulate(pr, StepSchedule::harmonic(1.0), x0, 0, 200, 7);
  REQUIRE(tr.xs.cols() == 201);
  REQUIRE(tr.ys.size() == 201u);
  for (std::int64_t n = 0; n <= 200; ++n) CHECK((tr.x(n) - x0).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("simulate: linear recursion with constant steps") {
  SAProblem pr = scaled_identity(0.5);
  auto tr = simulate(pr, StepSchedule::table({}, 0.5, 0.0), Vector::Constant(1, 8.0), 1, 30, 1);
  double expect = 8.0;
  for (std::int64_t n = 0; n <= 30; ++n) {
    CHECK(tr.x(n)[0] == doctest::Approx(expect).epsilon(1e-15));
    expect *= 0.75;
  }
}

TEST_CASE("simulate: preconditions and NaN guard") {
  SAProblem pr = scaled_identity(0.5);
  auto s = StepSchedule::harmonic(1.0);
  CHECK(code_of([&] { simulate(pr, s, Vector::Zero(1), 2, 10, 1); }) == Errc::IndexOutOfRange);
  CHECK(code_of([&] { simulate(pr, s, Vector::Zero(1), 0, 0, 1); }) == Errc::BadRange);
  CHECK(code_of([&] { simulate(pr, s, Vector::Zero(2), 0, 10, 1); }) == Errc::InvalidArgument);
  SAProblem bad = pr;
  bad.F = [](const Vector& x, int) -> Vector { return x.array() / (x.array() - x.array()); };
  CHECK(code_of([&] { simulate(bad, s, Vector::Ones(1), 0, 10, 1); }) == Errc::NonFiniteIterate);
}

TEST_CASE("simulate: state transitions follow the kernel row") {
  SAProblem pr = scaled_identity(0.5);
  auto tr = simulate(pr, StepSchedule::harmonic(1.0), Vector::Zero(1), 0, 100000, 3, {false, 200000});
  std::int64_t from0 = 0, to1 = 0;
  for (std::int64_t n = 0; n < tr.horizon(); ++n) {
    if (tr.ys[n] == 0) {
      ++from0;
      to1 += tr.ys[n + 1] == 1;
    }
  }
  const double p = static_cast<double>(to1) / from0;
  CHECK(std::abs(p - 0.7) <= 4.0 * std::sqrt(0.21 / from0));
}

TEST_CASE("simulate: determinism") {
  SAProblem pr = make_synthetic_problem({});
  auto s = StepSchedule::harmonic(1.0);
  auto a = simulate(pr, s, Vector::Constant(2, 3.0), 0, 2000, 99);
  auto b = simulate(pr, s, Vector::Constant(2, 3.0), 0, 2000, 99);
  CHECK((a.xs.array() == b.xs.array()).all());
  CHECK(a.ys == b.ys);
  CHECK((a.ms.array() == b.ms.array()).all());
  auto c = simulate(pr, s, Vector::Constant(2, 3.0), 0, 2000, 100);
  CHECK_FALSE((a.xs.array() == c.xs.array()).all());
}

TEST_CASE("iterate envelope on 1000 seeds (2-state chain, d=1)") {
  SAProblem pr = noisy_scalar(1.0);
  auto s = StepSchedule::harmonic(1.0);
  const auto N = certify_N(s);
  auto checks = run_indexed(1000, default_workers(), [&](std::size_t i) {
    auto tr = simulate(pr, s, Vector::Constant(1, 5.0), static_cast<int>(i % 2), 2000, derive_seed(42, i));
    return iterate_envelope_check(pr, tr, N);
  });
  std::int64_t violations = 0;
  for (auto& c : checks) violations += c.violations;
  CHECK(violations == 0);
}

TEST_CASE("simulate_auxiliary") {
  SUBCASE("starts at x_{n0} and stays inside the psi envelope") {
    SAProblem pr = noisy_scalar(1.0);
    auto s = StepSchedule::harmonic(1.0);
    auto tr = simulate(pr, s, Vector::Constant(1, 5.0), 0, 3000, 5);
    const std::int64_t n0 = 50;
    Matrix z = simulate_auxiliary(pr, s, tr, n0);
    REQUIRE(z.cols() == 3000 - n0 + 1);
    CHECK(z(0, 0) == tr.x(n0)[0]);
    const double pi_gain = 0.2 * two_state().pi()[0] + 0.6 * two_state().pi()[1];
    for (std::int64_t n = n0; n <= 3000; n += 7) {
      CHECK(std::abs(z(0, n - n0)) <= psi(s, pr.alpha, n, n0) * std::abs(tr.x(n0)[0]) * (1.0 + 1e-12));
      if (n == n0) continue;
      // Deterministic bound with the exact exponential.
      CHECK(std::abs(z(0, n - n0)) <=
            std::exp(-(1.0 - pr.alpha) * b_sum(s, n0, n - 1)) * std::abs(tr.x(n0)[0]) * (1.0 + 1e-12));
    }
    CHECK(pi_gain < pr.alpha);
  }
  SUBCASE("affine map matches the unrolled recursion") {
    SAProblem pr;
    pr.dim = 2;
    Matrix A(2, 2);
    A << 0.3, 0.1, -0.2, 0.4;
    Vector c(2);
    c << 1.0, -1.0;
    pr.F = [A, c](const Vector& x, int i) -> Vector { return A * x + c * (i + 1.0); };
    pr.chain = ParamChain::constant(2, two_state());
    const Vector pi = two_state().pi();
    const Vector cbar = c * (pi[0] * 1.0 + pi[1] * 2.0);
    auto s = StepSchedule::power(0.8, 0.7);
    auto tr = simulate(pr, s, Vector::Constant(2, 2.0), 0, 500, 3);
    const std::int64_t n0 = 20;
    Matrix z = simulate_auxiliary(pr, s, tr, n0);
    Vector ref = tr.x(n0);
    for (std::int64_t n = n0; n < 500; ++n) {
      CHECK((z.col(n - n0) - ref).cwiseAbs().maxCoeff() <= 1e-12);
      const double an = s.a(n);
      ref = (1.0 - an) * ref + an * (A * ref + cbar);
    }
  }
  SUBCASE("range errors") {
    SAProblem pr = noisy_scalar(1.0);
    auto s = StepSchedule::harmonic(1.0);
    auto tr = simulate(pr, s, Vector::Zero(1), 0, 10, 5);
    CHECK(code_of([&] { simulate_auxiliary(pr, s, tr, 11); }) == Errc::BadRange);
    CHECK(code_of([&] { simulate_auxiliary(pr, s, tr, -1); }) == Errc::BadRange);
  }
}

TEST_CASE("auxiliary sequence contracts toward x* on the synthetic family") {
  SyntheticSpec spec;
  spec.tilt = 0.3;
  SAProblem pr = make_synthetic_problem(spec);
  auto s = StepSchedule::harmonic(1.5);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto tr = simulate(pr, s, Vector::Constant(2, -4.0), 0, 2000, seed);
    const std::int64_t n0 = 10;
    Matrix z = simulate_auxiliary(pr, s, tr, n0);
    const double d0 = norm(tr.x(n0) - *pr.x_star, pr.norm);
    for (std::int64_t n = n0; n <= 2000; n += 11) {
      const double bound = n == n0 ? d0 : std::exp(-(1.0 - pr.alpha) * b_sum(s, n0, n - 1)) * d0;
      CHECK(norm(z.col(n - n0) - *pr.x_star, pr.norm) <= bound * (1.0 + 1e-12) + 1e-14);
    }
  }
}

TEST_CASE("gamma_diagnostic") {
  auto s = StepSchedule::harmonic(1.0);
  SUBCASE("vanishes without noise and with state-free F") {
    SAProblem pr = scaled_identity(0.5, 2);
    auto tr = simulate(pr, s, Vector::Constant(2, 1.0), 0, 300, 2);
    auto g = gamma_diagnostic(pr, s, tr, 10);
    REQUIRE(g.size() == 291u);
    CHECK(g[0] == 0.0);
    for (double v : g) CHECK(v <= 1e-15);
  }
  SUBCASE("requires a noise log") {
    SAProblem pr = noisy_scalar(1.0);
    auto tr = simulate(pr, s, Vector::Zero(1), 0, 50, 2, {false, 1000});
    CHECK(code_of([&] { gamma_diagnostic(pr, s, tr, 5); }) == Errc::MissingNoiseLog);
  }
  SUBCASE("matches the explicit weighted double sum") {
    SyntheticSpec spec;
    spec.tilt = 0.4;
    spec.dim = 2;
    SAProblem pr = make_synthetic_problem(spec);
    auto sch = StepSchedule::power(0.9, 0.8);
    auto tr = simulate(pr, sch, Vector::Constant(2, 2.0), 1, 120, 8);
    const std::int64_t n0 = 5;
    auto g = gamma_diagnostic(pr, sch, tr, n0);
    REQUIRE(g.size() == static_cast<std::size_t>(120 - n0 + 1));
    CHECK(g[0] == 0.0);

    // Oracle: form every w_r once, then sum with explicit chi(k-1, r+1) weights.
    std::vector<Vector> w;
    for (std::int64_t r = n0; r < 120; ++r) {
      Vector wr = tr.ms.col(r);
      if (r > n0) {
        const Vector xr = tr.x(r);
        const Matrix f = pr.f_values(xr);
        const FiniteChain c = pr.chain.chain_at(xr);
        const Matrix V = poisson_solve(c, f, 0).V;
        const Matrix pprev = pr.chain.transition_matrix(tr.x(r - 1));
        wr += V.row(tr.ys[r]).transpose() - (pprev.row(tr.ys[r - 1]) * V).transpose();
      }
      w.push_back(wr);
    }
    for (std::int64_t k = n0 + 1; k <= 120; ++k) {
      Vector sum = Vector::Zero(2);
      for (std::int64_t r = n0; r < k; ++r) sum += chi(sch, k - 1, r + 1) * sch.a(r) * w[r - n0];
      const double expect = kappa(2, pr.norm) * sum.cwiseAbs().maxCoeff();
      CHECK(g[k - n0] == doctest::Approx(expect).epsilon(1e-10));
    }
    auto zeta = running_max(g);
    for (std::size_t m = 1; m < zeta.size(); ++m) CHECK(zeta[m] >= zeta[m - 1]);
  }
}

TEST_CASE("check_problem") {
  SUBCASE("scaled identity has ratio 0.5") {
    SAProblem pr = scaled_identity(0.5, 3);
    pr.K = 0.0;
    auto rep = check_problem(pr, 300, 5.0, 1);
    CHECK(rep.contraction_ratio == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(rep.all_ok());
  }
  SUBCASE("envelope violation is flagged") {
    SAProblem pr = noisy_scalar(1.0);
    pr.K = 0.2;
    auto rep = check_problem(pr, 300, 3.0, 2);
    CHECK_FALSE(rep.envelope_ok);
    CHECK(rep.contraction_ok);
  }
  SUBCASE("biased noise is flagged") {
    SAProblem pr = noisy_scalar(1.0);
    pr.mds = [](const Vector&, int, int, Rng& r) -> Vector { return Vector::Constant(1, r.uniform(-0.5, 1.0)); };
    auto rep = check_problem(pr, 50, 3.0, 3);
    CHECK_FALSE(rep.zero_mean_ok);
  }
  SUBCASE("wrong fixed point is flagged") {
    SAProblem pr = scaled_identity(0.5);
    pr.x_star = Vector::Constant(1, 1.0);
    CHECK_FALSE(check_problem(pr, 50, 1.0, 4).fixed_point_ok);
  }
  SUBCASE("synthetic family passes every check") {
    for (Norm nk : {Norm::Sup, Norm::Euclidean, Norm::One}) {
      SyntheticSpec spec;
      spec.dim = 3;
      spec.norm = nk;
      spec.tilt = 0.5;
      auto rep = check_problem(make_synthetic_problem(spec), 400, 6.0, 5);
      CHECK(rep.all_ok());
      CHECK(rep.contraction_ratio <= spec.alpha + 1e-12);
    }
  }
}

TEST_CASE("gronwall bound dominates the path up to N") {
  SAProblem pr = noisy_scalar(1.0);
  auto s = StepSchedule::harmonic(3.0);
  const auto N = certify_N(s);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto tr = simulate(pr, s, Vector::Constant(1, -2.0), 0, N + 5, seed);
    CHECK(std::abs(tr.x(N)[0]) <= gronwall_bound(s, pr.K, pr.alpha, 2.0, N) + 1e-12);
  }
}

TEST_CASE("trajectory CSV layout") {
  SAProblem pr = noisy_scalar(1.0);
  auto s = StepSchedule::harmonic(1.0);
  auto tr = simulate(pr, s, Vector::Constant(1, 1.0), 0, 4, 1);
  tr.aux_n0 = 2;
  tr.zs = simulate_auxiliary(pr, s, tr, 2);
  tr.gammas = gamma_diagnostic(pr, s, tr, 2);
  std::ostringstream out;
  write_trajectory_csv(out, tr);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  CHECK(line == "n,Y_n,x_1,z_1,Gamma");
  std::getline(in, line);
  CHECK(line.substr(line.size() - 2) == ",,");
  int rows = 1;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 5);
}

TEST_CASE("run_indexed is order independent") {
  auto serial = run_indexed(200, 1, [](std::size_t i) { return derive_seed(9, i); });
  auto parallel = run_indexed(200, 4, [](std::size_t i) { return derive_seed(9, i); });
  CHECK(serial == parallel);
  CHECK_THROWS_AS(run_indexed(10, 3,
                              [](std::size_t i) -> int {
                                if (i == 7) throw Error(Errc::BadRange, "x");
                                return 0;
                              }),
                  Error);
}
