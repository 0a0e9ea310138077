// Copyright 2026 The sacon Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Simulation of x_{n+1} = x_n + a(n) (F(x_n, Y_n) - x_n + M_{n+1}(x_n)) with
// iterate-dependent Markov noise Y_n and martingale noise M, plus the
// deterministic comparison sequence z_n and the Gamma_k diagnostics used by
// the concentration bounds.
#pragma once

#include "sacon/linalg.hpp"
#include "sacon/markov.hpp"
#include "sacon/rng.hpp"
#include "sacon/schedule.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace sacon {

struct SAProblem {
  using Map = std::function<Vector(const Vector& x, int state)>;
  /// M_{n+1}(x) given (x, Y_n, Y_{n+1}) and fresh randomness.
  using Noise = std::function<Vector(const Vector& x, int state, int next_state, Rng& rng)>;

  std::string name;
  int dim = 0;
  Map F;
  ParamChain chain;
  Noise mds;  // empty means M == 0
  double alpha = 0.0;
  std::optional<Vector> x_star;
  double K = 0.0;
  double K0 = 0.0;
  double L3 = 0.0;
  Norm norm = Norm::Sup;
  int pinned_state = 0;
  /// Provenance of alpha (optimistic when it rests on a sampled minimum).
  Provenance alpha_provenance = Provenance::Derived;

  int n_states() const { return chain.n_states(); }
  /// Rows F(x, i) for every state i (n_states x dim).
  Matrix f_values(const Vector& x) const;
  /// sum_i pi(i) F(x, i).
  Vector mean_field(const Vector& x, const Vector& pi) const;
  Vector noise(const Vector& x, int state, int next_state, Rng& rng) const;
};

struct Trajectory {
  Matrix xs;             // dim x (T+1), column n is x_n
  std::vector<int> ys;   // Y_0 .. Y_T
  Matrix ms;             // dim x T, column n is M_{n+1}(x_n); empty when not logged
  std::string schedule_id;
  std::uint64_t seed = 0;
  /// Optional attachments: z_n for n >= aux_n0 (column j is z_{aux_n0+j}) and
  /// Gamma_k on the same index range.
  std::optional<Matrix> zs;
  std::optional<std::vector<double>> gammas;
  std::int64_t aux_n0 = 0;

  std::int64_t horizon() const { return static_cast<std::int64_t>(ys.size()) - 1; }
  Vector x(std::int64_t n) const { return xs.col(n); }
  bool has_noise_log() const { return ms.cols() > 0; }
};

struct SimulateOptions {
  bool record_noise = true;
  std::int64_t max_horizon = 100'000;
};

Trajectory simulate(const SAProblem& problem, const StepSchedule& schedule, const Vector& x0, int y0,
                    std::int64_t T, std::uint64_t seed, const SimulateOptions& options = {});

/// z_{n0} = x_{n0}, z_{n+1} = z_n + a(n) (sum_i pi_{x_n}(i) F(z_n, i) - z_n).
/// Column j of the result is z_{n0+j}, for n0 <= n0+j <= T.
Matrix simulate_auxiliary(const SAProblem& problem, const StepSchedule& schedule, const Trajectory& trajectory,
                          std::int64_t n0);

/// Gamma_k for k in [n0, T] (element j is Gamma_{n0+j}):
///   Gamma_k = kappa(d) max_l | sum_{r=n0}^{k-1} chi(k-1, r+1) a(r) (M_{r+1}^l(x_r) + Vt_r^l) |
/// with Vt_r = V(x_r, Y_r) - sum_j p_{x_{r-1}}(j | Y_{r-1}) V(x_r, j) and Vt_{n0} = 0.
std::vector<double> gamma_diagnostic(const SAProblem& problem, const StepSchedule& schedule,
                                     const Trajectory& trajectory, std::int64_t n0);

/// Running maximum zeta_m = max_{n0 <= k <= m} Gamma_k.
std::vector<double> running_max(const std::vector<double>& gammas);

struct ProblemCheck {
  int samples = 0;
  double contraction_ratio = 0.0;    // empirical lower bound for alpha
  bool contraction_ok = true;
  double fixed_point_residual = 0.0;  // max |sum_i pi_w(i) F(x*, i) - x*|
  bool fixed_point_ok = true;
  bool fixed_point_checked = false;
  double envelope_excess = 0.0;  // max ||F + M|| - (K + alpha ||x||)
  bool envelope_ok = true;
  double noise_bound_excess = 0.0;  // max |M^l| - K0 (1 + ||x||)
  bool noise_bound_ok = true;
  double noise_mean_z = 0.0;  // max |mean| / standard error
  double noise_mean_threshold = 3.0;
  bool zero_mean_ok = true;

  bool all_ok() const {
    return contraction_ok && fixed_point_ok && envelope_ok && noise_bound_ok && zero_mean_ok;
  }
};

/// Samples the standing assumptions of the iteration over a ball and reports
/// worst-case ratios with pass flags.
ProblemCheck check_problem(const SAProblem& problem, int n_samples, double ball_radius, std::uint64_t seed);

struct EnvelopeCheck {
  std::int64_t violations = 0;
  double worst_margin = 0.0;  // max over n >= N of ||x_n|| - bound (negative when satisfied)
};

/// Pathwise check of sup_{n >= N} ||x_n|| <= ||x_N|| + K/(1 - alpha).
EnvelopeCheck iterate_envelope_check(const SAProblem& problem, const Trajectory& trajectory, std::int64_t N,
                           double slack = 1e-9);

/// CSV with columns n,Y_n,x_1..x_d and, when attached, z_1..z_d,Gamma (empty
/// cells before aux_n0).
void write_trajectory_csv(std::ostream& out, const Trajectory& trajectory);

/// Discrete Gronwall bound on ||x_N|| from ||x_0||, valid pathwise under the
/// envelope assumption on F + M.
double gronwall_bound(const StepSchedule& schedule, double K, double alpha, double x0_norm, std::int64_t N);

}  // namespace sacon
