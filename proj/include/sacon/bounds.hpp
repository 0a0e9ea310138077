// Copyright 2026 The sacon Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Constants and tail curves of the concentration bound
//
//   ||x_n - x*|| <= exp(-(1-alpha) b_{n0}(n)) ||x_{n0} - x*|| + (delta + a(n0) c1) / (1-alpha)
//
// which holds with probability at least 1 - 2d sum_m exp(-D delta^p / beta_{n0}(m)),
// p = 2 when delta <= C and p = 1 otherwise.
#pragma once

#include "sacon/sa_engine.hpp"
#include "sacon/schedule.hpp"
#include "sacon/tagged.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace sacon {

inline constexpr double kDefaultDCeiling = 1e6;

struct BoundReport {
  std::string problem;
  std::string schedule;
  Norm norm = Norm::Sup;
  int dim = 1;
  double kappa = 1.0;
  std::int64_t N = 0;
  std::int64_t n0 = 0;
  double d1 = 0.0, d2 = 1.0, d3 = 1.0;

  Tagged alpha{0.0, Provenance::Declared};
  Tagged K{0.0, Provenance::Declared};
  Tagged K0{0.0, Provenance::Declared};
  Tagged x_N_norm{0.0, Provenance::Derived};
  Tagged K_star{0.0, Provenance::Derived};
  Tagged L{0.0, Provenance::Estimated};
  Tagged K_dagger{0.0, Provenance::Derived};
  Tagged V_max{0.0, Provenance::Estimated};
  Tagged V_prime_max{0.0, Provenance::Estimated};
  Tagged c1{0.0, Provenance::Derived};
  Tagged c2{0.0, Provenance::Derived};
  Tagged C{0.0, Provenance::Derived};
  /// Absent until supplied or calibrated.
  std::optional<Tagged> D;
  /// Other readings of constants (e.g. C with ||x_{n0}|| in place of ||x_N||).
  std::map<std::string, double> alternates;
  double a_n0 = 0.0;
};

struct VExtrema {
  double V_max = 0.0;        // max ||V(x, i)|| in the problem norm
  double V_prime_max = 0.0;  // max |V^l(x, i)|
  double L = 0.0;            // max ||V(x, i) - V(z, i)|| / ||x - z||
  int points = 0;
};

/// Sampled maxima of the pinned Poisson solution over ||x|| <= radius. The
/// sample set consists of fixed directions (ball vertices first) scaled along
/// the ladder radius * 2^-k down to 1e-6, so doubling the radius only adds
/// points and the estimates never decrease.
VExtrema v_extrema(const SAProblem& problem, double radius, int n_directions, std::uint64_t seed);

struct ReportOptions {
  /// Bound on ||x_N||; use gronwall_bound from a known x_0 when unknown.
  double x_N_norm = 0.0;
  Provenance x_N_provenance = Provenance::Derived;
  std::optional<double> x_n0_norm;  // for the alternate C reading
  int n_directions = 2000;
  std::uint64_t seed = 1;
  std::optional<Tagged> D;
  /// Overrides of the sampled Poisson quantities.
  std::optional<double> V_max, V_prime_max, L;
  /// Caps the radius sampled for the Poisson quantities (an invariant ball
  /// smaller than K*).
  std::optional<double> sample_radius;
};

BoundReport build_report(const SAProblem& problem, const StepSchedule& schedule, std::int64_t n0,
                         const ReportOptions& options);

/// exp(-(1-alpha) b_{n0}(n)) * dist + (delta + a(n0) c1) / (1-alpha) for n >= n0.
double concentration_envelope(const BoundReport& report, const StepSchedule& schedule, double delta, std::int64_t n,
                              double x_n0_dist);
/// Same formula with explicit ingredients.
double envelope_value(double alpha, double b_sum_n0_n, double x_n0_dist, double delta, double a_n0, double c1);

/// Exponent used by the tail: 2 when delta <= C, else 1.
int tail_exponent(double delta, double C);

/// 2d sum_{m=n0+1}^{n} exp(-D delta^p / beta_{n0}(m)) clipped to [0, 1]. With
/// cumulative = true the sum runs over every m >= n0+1 (n ignored) and a
/// bound on the truncated remainder is added.
double failure_bound(const BoundReport& report, double delta, std::int64_t n0, std::int64_t n, bool cumulative);

/// Raw (unclipped) sum of exp(-A / beta_{n0}(m)) for m in [first, last]
/// (last < 0 means infinity), stopping early once the partial sum exceeds
/// `stop_above`. Truncated remainders are bounded by integral comparison.
double tail_sum(double A, double d1, double d2, std::int64_t n0, std::int64_t first, std::int64_t last,
                double stop_above = 1e300);

/// Two-branch martingale tail: 2 exp(-D eps^2 / omega) when
/// eps <= C gamma1 / eps_moment, otherwise 2 exp(-D eps / omega).
double martingale_tail(double eps, double C, double gamma1, double gamma2, double omega, double D,
                       double eps_moment = 1.0);

struct CalibrationOptions {
  Vector x0;
  int y0 = 0;
  int workers = 1;
  double D_ceiling = kDefaultDCeiling;
  double rel_tol = 1e-3;
};

struct CalibrationResult {
  Tagged D{kDefaultDCeiling, Provenance::Calibrated};
  bool at_ceiling = false;
  std::vector<double> deltas;
  int n_trajectories = 0;
  std::int64_t T = 0;
  std::uint64_t seed = 0;
  /// Per delta, first n with zeta_n >= delta for each trajectory (-1: never).
  std::vector<std::vector<std::int64_t>> first_passage;
};

/// First m in [n0, n0 + size) with zeta_m >= delta, or -1.
std::int64_t first_passage(const std::vector<double>& gammas, std::int64_t n0, double delta);

/// Largest D for which the empirical frequency of {zeta_n >= delta} stays
/// below failure_bound(delta, n0, n) for all n <= T and every delta.
CalibrationResult calibrate_D(const SAProblem& problem, const StepSchedule& schedule, const BoundReport& report,
                              const std::vector<double>& deltas, int n_trajectories, std::int64_t T,
                              std::uint64_t seed, const CalibrationOptions& options);

/// Largest D satisfying freq_delta(n) <= failure_bound for the supplied
/// first-passage samples (used by calibrate_D; exposed for testing).
double fit_D(const BoundReport& report, const std::vector<double>& deltas,
             const std::vector<std::vector<std::int64_t>>& first_passage, int n_trajectories, double D_ceiling,
             double rel_tol);

struct StitchResult {
  std::int64_t n0 = 0;
  std::int64_t n1 = 0;
  std::int64_t chebyshev_n0 = 0;  // smallest n0 from the moment leg alone
  double moment_ratio = 0.0;      // upsilon(n0) / K_breve^2
  double tail = 0.0;              // 2d sum_{n >= n0} exp(-D delta^p / beta_{n0}(n))
  double envelope_n1 = 0.0;
  double floor = 0.0;  // (delta + a(n0) c1) / (1 - alpha)
};

/// Combines a moment bound E||x_n - x*||^2 <= upsilon(n) with the
/// concentration bound for the harmonic rule: the smallest n0 with
/// upsilon(n0) / K_breve^2 < nu/2 and tail < nu/2, then the smallest n1 >= n0
/// whose envelope (with ||x_{n0} - x*|| <= K_breve) is at most eps.
StitchResult stitch(const BoundReport& report, const StepSchedule& schedule,
                    const std::function<double(std::int64_t)>& moment_bound, double K_breve, double nu, double eps,
                    double delta, std::int64_t horizon = 4'000'000'000'000LL);

void write_report_json(std::ostream& out, const BoundReport& report);

/// CSV `n,delta,envelope,failure_bound` for each delta on the sampled n grid.
void write_curves_csv(std::ostream& out, const BoundReport& report, const StepSchedule& schedule,
                      const std::vector<double>& deltas, const std::vector<std::int64_t>& ns, double x_n0_dist);

}  // namespace sacon
