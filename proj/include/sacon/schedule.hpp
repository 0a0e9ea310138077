// Copyright 2026 The sacon Authors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace sacon {

enum class ScheduleRule { Power, Harmonic, Table };

/// Step-size sequence a(n) with its regularity certificate (d1, d2, d3, N):
/// for n >= N, a(n) < 1, a(n+1) <= a(n) and d1/n <= a(n) <= d3 n^{-d2}.
///
/// Power:    a(n) = d3 / (n+1)^{d2}
/// Harmonic: a(n) = b / (n+1)            (d2 = 1, d3 = b)
/// Table:    explicit prefix, then d3 / (n+1)^{d2}
class StepSchedule {
 public:
  static StepSchedule harmonic(double b);
  static StepSchedule harmonic(double b, double d1);
  static StepSchedule power(double d3, double d2);
  static StepSchedule power(double d3, double d2, double d1);
  /// A tail exponent of zero gives a constant tail (useful for algebra, never
  /// certifiable).
  static StepSchedule table(std::vector<double> prefix, double tail_d3, double tail_d2);
  static StepSchedule table(std::vector<double> prefix, double tail_d3, double tail_d2, double d1);

  /// `rule=harmonic b=1.0`, `rule=power d3=1.0 d2=0.6`, `rule=table file=...`
  /// (optionally `tail_d3=... tail_d2=... d1=...`).
  static StepSchedule parse(std::string_view descriptor);

  ScheduleRule rule() const { return rule_; }
  double d1() const { return d1_; }
  double d2() const { return d2_; }
  double d3() const { return d3_; }
  /// b for harmonic rules (equal to d3).
  double b() const { return d3_; }
  const std::vector<double>& prefix() const { return prefix_; }
  std::string describe() const;

  double operator()(std::int64_t n) const { return a(n); }
  double a(std::int64_t n) const;

 private:
  ScheduleRule rule_ = ScheduleRule::Harmonic;
  double d1_ = 0.5;
  double d2_ = 1.0;
  double d3_ = 1.0;
  std::vector<double> prefix_;
};

inline double a(const StepSchedule& s, std::int64_t n) { return s.a(n); }

/// Smallest N at which the envelope conditions hold from N on (N >= 1 since
/// the lower envelope d1/n is undefined at n = 0). Throws NoCertificate when
/// the conditions fail beyond `horizon`.
std::int64_t certify_N(const StepSchedule& s, std::int64_t horizon = 10'000'000);

/// b_k(n) = sum_{m=k}^{n} a(m).
double b_sum(const StepSchedule& s, std::int64_t k, std::int64_t n);

/// beta_k(n) = k^{-(d2-d1)} n^{-d1} if d1 <= d2, else n^{-d2}.
double beta(const StepSchedule& s, std::int64_t k, std::int64_t n);
double beta(double d1, double d2, std::int64_t k, std::int64_t n);

/// chi(n, m) = prod_{k=m}^{n} (1 - a(k)), 1 when n < m.
double chi(const StepSchedule& s, std::int64_t n, std::int64_t m);

/// psi(n, m) = prod_{k=m}^{n-1} (1 - (1-alpha) a(k)), 1 when n <= m.
double psi(const StepSchedule& s, double alpha, std::int64_t n, std::int64_t m);

/// Prefix sums of a(k) and log(1 - a(k)) up to a horizon, for O(1) b/chi
/// queries inside long simulations.
class ScheduleTable {
 public:
  ScheduleTable(const StepSchedule& s, std::int64_t horizon);

  std::int64_t horizon() const { return static_cast<std::int64_t>(a_.size()) - 1; }
  double a(std::int64_t n) const { return a_[static_cast<std::size_t>(n)]; }
  double b_sum(std::int64_t k, std::int64_t n) const;
  double chi(std::int64_t n, std::int64_t m) const;

 private:
  std::vector<double> a_;
  std::vector<long double> sum_a_;    // sum_{k<j} a(k)
  std::vector<long double> sum_log_;  // sum_{k<j} log1p(-a(k))
  std::vector<std::int64_t> nonpos_;  // count of k<j with a(k) >= 1
};

}  // namespace sacon
