// Copyright 2026 The sacon Authors.
// SPDX-License-Identifier: Apache-2.0
#include "sacon/sa_engine.hpp"

#include "sacon/error.hpp"

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>

namespace sacon {

namespace {

void require_state(const SAProblem& problem, int y) {
  if (y < 0 || y >= problem.n_states()) {
    throw Error(Errc::IndexOutOfRange, "state " + std::to_string(y) + " outside [0, " +
                                           std::to_string(problem.n_states()) + ")");
  }
}

void require_dim(const SAProblem& problem, const Vector& x) {
  if (x.size() != problem.dim) {
    throw Error(Errc::InvalidArgument, "vector has dimension " + std::to_string(x.size()) + ", expected " +
                                           std::to_string(problem.dim));
  }
}

// Stationary distribution of P_x, reusing the constant chain when possible.
Vector pi_at(const SAProblem& problem, const Vector& x) {
  if (problem.chain.is_constant()) return problem.chain.constant_chain().pi();
  return problem.chain.chain_at(x).pi();
}

}  // namespace

Matrix SAProblem::f_values(const Vector& x) const {
  const int s = n_states();
  Matrix out(s, dim);
  for (int i = 0; i < s; ++i) out.row(i) = F(x, i).transpose();
  return out;
}

Vector SAProblem::mean_field(const Vector& x, const Vector& pi) const {
  Vector out = Vector::Zero(dim);
  for (int i = 0; i < n_states(); ++i) {
    if (pi[i] != 0.0) out += pi[i] * F(x, i);
  }
  return out;
}

Vector SAProblem::noise(const Vector& x, int state, int next_state, Rng& rng) const {
  if (!mds) return Vector::Zero(dim);
  return mds(x, state, next_state, rng);
}

//---------------------------------------------------------------------------//
// Simulation
//---------------------------------------------------------------------------//

Trajectory simulate(const SAProblem& problem, const StepSchedule& schedule, const Vector& x0, int y0,
                    std::int64_t T, std::uint64_t seed, const SimulateOptions& options) {
  require_dim(problem, x0);
  require_state(problem, y0);
  if (T < 1 || T > options.max_horizon) {
    throw Error(Errc::BadRange, "horizon " + std::to_string(T) + " outside [1, " +
                                    std::to_string(options.max_horizon) + "]");
  }
  const int d = problem.dim;
  Trajectory tr;
  tr.schedule_id = schedule.describe();
  tr.seed = seed;
  tr.xs.resize(d, T + 1);
  tr.ys.resize(static_cast<std::size_t>(T + 1));
  if (options.record_noise) tr.ms.resize(d, T);

  Rng rng(seed);
  const bool constant = problem.chain.is_constant();
  const Matrix* fixed_p = constant ? &problem.chain.constant_chain().transition() : nullptr;
  Matrix p;

  Vector x = x0;
  int y = y0;
  tr.xs.col(0) = x;
  tr.ys[0] = y;
  for (std::int64_t n = 0; n < T; ++n) {
    if (!constant) p = problem.chain.transition_matrix(x);
    const Matrix& pn = constant ? *fixed_p : p;
    const int y_next = rng.categorical(pn.row(y));
    Vector m = problem.noise(x, y, y_next, rng);
    const double an = schedule.a(n);
    x += an * (problem.F(x, y) - x + m);
    if (!x.allFinite()) {
      throw Error(Errc::NonFiniteIterate, "non-finite iterate at n = " + std::to_string(n + 1));
    }
    if (options.record_noise) tr.ms.col(n) = m;
    y = y_next;
    tr.xs.col(n + 1) = x;
    tr.ys[static_cast<std::size_t>(n + 1)] = y;
  }
  return tr;
}

Matrix simulate_auxiliary(const SAProblem& problem, const StepSchedule& schedule, const Trajectory& trajectory,
                          std::int64_t n0) {
  const std::int64_t T = trajectory.horizon();
  if (n0 < 0 || n0 > T) {
    throw Error(Errc::BadRange, "n0 = " + std::to_string(n0) + " outside [0, " + std::to_string(T) + "]");
  }
  Matrix zs(problem.dim, T - n0 + 1);
  Vector z = trajectory.x(n0);
  zs.col(0) = z;
  const bool constant = problem.chain.is_constant();
  Vector pi = constant ? problem.chain.constant_chain().pi() : Vector();
  for (std::int64_t n = n0; n < T; ++n) {
    if (!constant) pi = pi_at(problem, trajectory.x(n));
    z += schedule.a(n) * (problem.mean_field(z, pi) - z);
    zs.col(n - n0 + 1) = z;
  }
  return zs;
}

std::vector<double> gamma_diagnostic(const SAProblem& problem, const StepSchedule& schedule,
                                     const Trajectory& trajectory, std::int64_t n0) {
  const std::int64_t T = trajectory.horizon();
  if (!trajectory.has_noise_log()) {
    throw Error(Errc::MissingNoiseLog, "trajectory was simulated without recording M");
  }
  if (n0 < 0 || n0 > T) {
    throw Error(Errc::BadRange, "n0 = " + std::to_string(n0) + " outside [0, " + std::to_string(T) + "]");
  }
  const double kd = kappa(problem.dim, problem.norm);
  const bool constant = problem.chain.is_constant();
  std::optional<PoissonSolver> fixed;
  if (constant) fixed.emplace(problem.chain.constant_chain(), problem.pinned_state);

  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(T - n0 + 1));
  out.push_back(0.0);

  // G_k = sum_{r=n0}^{k-1} chi(k-1, r+1) a(r) w_r obeys
  // G_{k+1} = (1 - a(k)) G_k + a(k) w_k.
  Vector g = Vector::Zero(problem.dim);
  for (std::int64_t r = n0; r < T; ++r) {
    Vector w = trajectory.ms.col(r);
    if (r > n0) {
      const Vector xr = trajectory.x(r);
      const Vector xprev = trajectory.x(r - 1);
      const int yr = trajectory.ys[static_cast<std::size_t>(r)];
      const int yprev = trajectory.ys[static_cast<std::size_t>(r - 1)];
      Matrix V;
      Eigen::RowVectorXd prow;
      if (constant) {
        V = fixed->solve(problem.f_values(xr)).V;
        prow = problem.chain.constant_chain().transition().row(yprev);
      } else {
        V = PoissonSolver(problem.chain.chain_at(xr), problem.pinned_state).solve(problem.f_values(xr)).V;
        prow = problem.chain.transition_matrix(xprev).row(yprev);
      }
      w += (V.row(yr) - prow * V).transpose();
    }
    const double ar = schedule.a(r);
    g = (1.0 - ar) * g + ar * w;
    out.push_back(kd * g.cwiseAbs().maxCoeff());
  }
  return out;
}

std::vector<double> running_max(const std::vector<double>& gammas) {
  std::vector<double> out(gammas.size());
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < gammas.size(); ++k) {
    m = std::max(m, gammas[k]);
    out[k] = m;
  }
  return out;
}

//---------------------------------------------------------------------------//
// Assumption checks
//---------------------------------------------------------------------------//

ProblemCheck check_problem(const SAProblem& problem, int n_samples, double ball_radius, std::uint64_t seed) {
  ProblemCheck rep;
  const int d = problem.dim;
  const int S = problem.n_states();
  const Norm nk = problem.norm;
  const double radius = std::max(ball_radius, 0.0);
  n_samples = std::max(n_samples, 1);
  rep.samples = n_samples;
  Rng rng(seed);

  std::vector<Vector> vertices = ball_vertices(rng, d, radius, nk, std::max(2, n_samples / 4));
  auto draw_point = [&](int k) -> Vector {
    if (k < static_cast<int>(vertices.size()) && k % 2 == 0) return vertices[static_cast<std::size_t>(k)];
    return sample_in_ball(rng, d, radius, nk);
  };

  // Contraction of the averaged map. Random pairs, vertex pairs and
  // single-coordinate perturbations probe different faces of the ball.
  for (int k = 0; k < n_samples; ++k) {
    Vector w = sample_in_ball(rng, d, radius, nk);
    Vector x = draw_point(k);
    Vector z;
    switch (k % 3) {
      case 0:
        z = sample_in_ball(rng, d, radius, nk);
        break;
      case 1:
        z = vertices.empty() ? Vector(Vector::Zero(d)) : Vector(-vertices[static_cast<std::size_t>(k) % vertices.size()]);
        break;
      default: {
        z = x;
        const int l = static_cast<int>(rng.bits() % static_cast<std::uint64_t>(d));
        z[l] += rng.uniform(-1.0, 1.0) * std::max(radius, 1e-3);
      }
    }
    const double dist = norm(x - z, nk);
    if (!(dist > 0.0)) continue;
    const Vector pi = pi_at(problem, w);
    const double ratio = norm(problem.mean_field(x, pi) - problem.mean_field(z, pi), nk) / dist;
    rep.contraction_ratio = std::max(rep.contraction_ratio, ratio);
  }
  rep.contraction_ok = rep.contraction_ratio <= problem.alpha + 1e-9;

  if (problem.x_star) {
    rep.fixed_point_checked = true;
    const Vector& xs = *problem.x_star;
    const int n_w = std::min(n_samples, 64);
    for (int k = 0; k < n_w; ++k) {
      const Vector pi = pi_at(problem, sample_in_ball(rng, d, radius, nk));
      const double r = (problem.mean_field(xs, pi) - xs).cwiseAbs().maxCoeff();
      rep.fixed_point_residual = std::max(rep.fixed_point_residual, r);
    }
    rep.fixed_point_ok = rep.fixed_point_residual <= 1e-9 * std::max(1.0, xs.cwiseAbs().maxCoeff());
  }

  // Envelope on F + M and the componentwise noise bound, over every
  // (state, next state) pair with positive probability.
  rep.envelope_excess = -std::numeric_limits<double>::infinity();
  rep.noise_bound_excess = -std::numeric_limits<double>::infinity();
  constexpr int kNoiseDraws = 4;
  for (int k = 0; k < n_samples; ++k) {
    const Vector x = draw_point(k);
    const double xn = norm(x, nk);
    const Matrix p = problem.chain.transition_matrix(x);
    for (int i = 0; i < S; ++i) {
      const Vector fx = problem.F(x, i);
      for (int j = 0; j < S; ++j) {
        if (!(p(i, j) > 0.0)) continue;
        for (int t = 0; t < (problem.mds ? kNoiseDraws : 1); ++t) {
          const Vector m = problem.noise(x, i, j, rng);
          rep.envelope_excess = std::max(rep.envelope_excess, norm(fx + m, nk) - (problem.K + problem.alpha * xn));
          rep.noise_bound_excess = std::max(rep.noise_bound_excess,
                                            m.cwiseAbs().maxCoeff() - problem.K0 * (1.0 + xn));
        }
      }
    }
  }
  const double scale = std::max(1.0, problem.K + problem.alpha * radius);
  rep.envelope_ok = rep.envelope_excess <= 1e-9 * scale;
  rep.noise_bound_ok = rep.noise_bound_excess <= 1e-9 * std::max(1.0, problem.K0 * (1.0 + radius));

  // Zero conditional mean of M: per-component z-scores against a threshold of
  // three standard errors, widened (Bonferroni) for the number of tests.
  if (problem.mds) {
    constexpr int kDraws = 4000;
    const int n_points = std::min(n_samples, 8);
    const int n_tests = n_points * S * d;
    boost::math::normal_distribution<double> gauss;
    rep.noise_mean_threshold =
        std::max(3.0, boost::math::quantile(boost::math::complement(gauss, 0.0027 / (2.0 * n_tests))));
    for (int k = 0; k < n_points; ++k) {
      const Vector x = sample_in_ball(rng, d, radius, nk);
      const Matrix p = problem.chain.transition_matrix(x);
      for (int i = 0; i < S; ++i) {
        Vector sum = Vector::Zero(d);
        Vector sq = Vector::Zero(d);
        for (int t = 0; t < kDraws; ++t) {
          const int j = rng.categorical(p.row(i));
          const Vector m = problem.noise(x, i, j, rng);
          sum += m;
          sq += m.cwiseProduct(m);
        }
        for (int l = 0; l < d; ++l) {
          const double mean = sum[l] / kDraws;
          const double var = std::max(0.0, sq[l] / kDraws - mean * mean);
          const double se = std::sqrt(var / kDraws);
          double zscore = 0.0;
          if (se > 0.0) {
            zscore = std::abs(mean) / se;
          } else if (std::abs(mean) > 1e-12) {
            zscore = std::numeric_limits<double>::infinity();
          }
          rep.noise_mean_z = std::max(rep.noise_mean_z, zscore);
        }
      }
    }
    rep.zero_mean_ok = rep.noise_mean_z <= rep.noise_mean_threshold;
  }
  return rep;
}

EnvelopeCheck iterate_envelope_check(const SAProblem& problem, const Trajectory& trajectory, std::int64_t N, double slack) {
  const std::int64_t T = trajectory.horizon();
  if (N < 0 || N > T) throw Error(Errc::BadRange, "N outside the trajectory");
  EnvelopeCheck out;
  const double bound = norm(trajectory.x(N), problem.norm) + problem.K / (1.0 - problem.alpha);
  const double tol = slack * std::max(1.0, bound);
  out.worst_margin = -std::numeric_limits<double>::infinity();
  for (std::int64_t n = N; n <= T; ++n) {
    const double margin = norm(trajectory.x(n), problem.norm) - bound;
    out.worst_margin = std::max(out.worst_margin, margin);
    if (margin > tol) ++out.violations;
  }
  return out;
}

double gronwall_bound(const StepSchedule& schedule, double K, double alpha, double x0_norm, std::int64_t N) {
  double b = x0_norm;
  for (std::int64_t n = 0; n < N; ++n) {
    const double an = schedule.a(n);
    b = std::abs(1.0 - an) * b + an * (K + alpha * b);
  }
  return b;
}

void write_trajectory_csv(std::ostream& out, const Trajectory& trajectory) {
  const auto d = trajectory.xs.rows();
  const bool with_z = trajectory.zs.has_value();
  const bool with_g = trajectory.gammas.has_value();
  out << "n,Y_n";
  for (Eigen::Index l = 0; l < d; ++l) out << ",x_" << (l + 1);
  if (with_z) {
    for (Eigen::Index l = 0; l < d; ++l) out << ",z_" << (l + 1);
  }
  if (with_g) out << ",Gamma";
  out << '\n' << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (std::int64_t n = 0; n <= trajectory.horizon(); ++n) {
    out << n << ',' << trajectory.ys[static_cast<std::size_t>(n)];
    for (Eigen::Index l = 0; l < d; ++l) out << ',' << trajectory.xs(l, n);
    const std::int64_t j = n - trajectory.aux_n0;
    if (with_z) {
      for (Eigen::Index l = 0; l < d; ++l) {
        out << ',';
        if (j >= 0 && j < trajectory.zs->cols()) out << (*trajectory.zs)(l, j);
      }
    }
    if (with_g) {
      out << ',';
      if (j >= 0 && j < static_cast<std::int64_t>(trajectory.gammas->size())) {
        out << (*trajectory.gammas)[static_cast<std::size_t>(j)];
      }
    }
    out << '\n';
  }
}

}  // namespace sacon
