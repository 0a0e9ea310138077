// Copyright 2026 The sacon Authors.
// SPDX-License-Identifier: Apache-2.0
#include "sacon/bounds.hpp"

#include "sacon/error.hpp"
#include "sacon/parallel.hpp"

#include <boost/math/special_functions/gamma.hpp>
#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>

namespace sacon {

namespace {

constexpr double kRemainderTolerance = 1e-12;
constexpr std::int64_t kMaxTerms = 10'000'000;
constexpr double kLadderFloor = 1e-6;

Provenance weakest(std::initializer_list<Provenance> tags) {
  bool estimated = false;
  for (Provenance p : tags) {
    if (p == Provenance::Optimistic) return Provenance::Optimistic;
    if (p == Provenance::Estimated) estimated = true;
  }
  return estimated ? Provenance::Estimated : Provenance::Derived;
}

// log of the upper incomplete gamma function Gamma(a, x).
double log_upper_gamma(double a, double x) {
  if (x <= 0.0) return std::lgamma(a);
  const double q = boost::math::gamma_q(a, x);
  if (q > 0.0) return std::log(q) + std::lgamma(a);
  // Asymptotic form Gamma(a, x) ~ x^{a-1} e^{-x} once gamma_q underflows.
  return (a - 1.0) * std::log(x) - x;
}

// Bound on sum_{m > M} exp(-B m^e) by the integral from M to infinity.
double remainder_bound(double B, double e, double M) {
  const double a = 1.0 / e;
  const double x = B * std::pow(M, e);
  const double lg = -std::log(e) - a * std::log(B) + log_upper_gamma(a, x);
  return std::exp(lg);
}

double require_D(const BoundReport& report) {
  if (!report.D) throw Error(Errc::InvalidArgument, "the report has no D; supply one or calibrate");
  return report.D->value;
}

nlohmann::json tagged_json(const Tagged& t) {
  nlohmann::json j;
  if (std::isfinite(t.value)) {
    j["value"] = t.value;
  } else {
    j["value"] = std::isnan(t.value) ? "nan" : (t.value > 0 ? "inf" : "-inf");
  }
  j["provenance"] = std::string(to_string(t.provenance));
  return j;
}

}  // namespace

//---------------------------------------------------------------------------//
// Poisson extrema
//---------------------------------------------------------------------------//

VExtrema v_extrema(const SAProblem& problem, double radius, int n_directions, std::uint64_t seed) {
  const int d = problem.dim;
  const Norm nk = problem.norm;
  VExtrema out;
  Rng rng(seed);

  std::vector<Vector> dirs = ball_vertices(rng, d, 1.0, nk, std::max(1, n_directions / 4));
  while (static_cast<int>(dirs.size()) < std::max(n_directions, 1)) dirs.push_back(sample_in_ball(rng, d, 1.0, nk));

  std::vector<double> radii;
  for (double r = radius; r >= kLadderFloor && radii.size() < 64; r *= 0.5) radii.push_back(r);

  const bool constant = problem.chain.is_constant();
  std::optional<PoissonSolver> fixed;
  if (constant) fixed.emplace(problem.chain.constant_chain(), problem.pinned_state);
  auto solve = [&](const Vector& x) -> Matrix {
    const Matrix f = problem.f_values(x);
    if (constant) return fixed->solve(f).V;
    return PoissonSolver(problem.chain.chain_at(x), problem.pinned_state).solve(f).V;
  };
  auto absorb = [&](const Matrix& V) {
    for (int i = 0; i < V.rows(); ++i) out.V_max = std::max(out.V_max, norm(V.row(i).transpose(), nk));
    if (V.size() > 0) out.V_prime_max = std::max(out.V_prime_max, V.cwiseAbs().maxCoeff());
    ++out.points;
  };
  auto slope = [&](const Vector& x, const Matrix& Vx, const Vector& z, const Matrix& Vz) {
    const double dist = norm(x - z, nk);
    if (!(dist > 0.0)) return;
    for (int i = 0; i < Vx.rows(); ++i) {
      out.L = std::max(out.L, norm((Vx.row(i) - Vz.row(i)).transpose(), nk) / dist);
    }
  };

  const Vector origin = Vector::Zero(d);
  const Matrix V0 = solve(origin);
  absorb(V0);
  std::vector<Matrix> prev_ring;  // V at the previous direction, per radius
  std::vector<Vector> prev_pts;
  for (const Vector& u : dirs) {
    std::vector<Matrix> ring;
    std::vector<Vector> pts;
    ring.reserve(radii.size());
    for (std::size_t k = 0; k < radii.size(); ++k) {
      Vector x = radii[k] * u;
      Matrix V = solve(x);
      absorb(V);
      // Secants along the ray and across neighbouring directions.
      if (k > 0) slope(x, V, pts.back(), ring.back());
      if (!prev_pts.empty()) slope(x, V, prev_pts[k], prev_ring[k]);
      ring.push_back(std::move(V));
      pts.push_back(std::move(x));
    }
    if (!radii.empty()) slope(pts.back(), ring.back(), origin, V0);
    prev_ring = std::move(ring);
    prev_pts = std::move(pts);
  }
  return out;
}

//---------------------------------------------------------------------------//
// Report
//---------------------------------------------------------------------------//

BoundReport build_report(const SAProblem& problem, const StepSchedule& schedule, std::int64_t n0,
                         const ReportOptions& options) {
  if (!(problem.alpha > 0.0 && problem.alpha < 1.0)) throw Error(Errc::BadRange, "alpha must lie in (0, 1)");
  BoundReport r;
  r.problem = problem.name;
  r.schedule = schedule.describe();
  r.norm = problem.norm;
  r.dim = problem.dim;
  r.kappa = kappa(problem.dim, problem.norm);
  r.N = certify_N(schedule);
  if (n0 < r.N) {
    throw Error(Errc::BadRange, "n0 = " + std::to_string(n0) + " is below N = " + std::to_string(r.N));
  }
  r.n0 = n0;
  r.d1 = schedule.d1();
  r.d2 = schedule.d2();
  r.d3 = schedule.d3();
  r.a_n0 = schedule.a(n0);

  const double alpha = problem.alpha;
  r.alpha = {alpha, problem.alpha_provenance};
  r.K = {problem.K, Provenance::Declared};
  r.K0 = {problem.K0, Provenance::Declared};
  r.x_N_norm = {options.x_N_norm, options.x_N_provenance};
  const double k_star = options.x_N_norm + problem.K / (1.0 - alpha);
  r.K_star = {k_star, weakest({options.x_N_provenance, problem.alpha_provenance})};

  VExtrema ve;
  if (!(options.V_max && options.V_prime_max && options.L)) {
    const double radius = options.sample_radius ? std::min(k_star, *options.sample_radius) : k_star;
    ve = v_extrema(problem, radius, options.n_directions, options.seed);
  }
  r.V_max = options.V_max ? Tagged{*options.V_max, Provenance::User} : Tagged{ve.V_max, Provenance::Estimated};
  r.V_prime_max = options.V_prime_max ? Tagged{*options.V_prime_max, Provenance::User}
                                      : Tagged{ve.V_prime_max, Provenance::Estimated};
  r.L = options.L ? Tagged{*options.L, Provenance::User} : Tagged{ve.L, Provenance::Estimated};

  const double k_dagger = r.L.value * (problem.K + 2.0 * k_star);
  r.K_dagger = {k_dagger, weakest({r.L.provenance, r.K_star.provenance})};
  r.c1 = {4.0 * r.V_max.value + k_dagger, weakest({r.V_max.provenance, r.K_dagger.provenance})};
  r.c2 = {2.0 * r.V_prime_max.value, weakest({r.V_prime_max.provenance})};
  const double log_c = r.kappa * (problem.K0 * (1.0 + k_star) + r.c2.value);
  r.C = {std::exp(log_c), weakest({r.c2.provenance, r.K_star.provenance})};
  r.alternates["log_C"] = log_c;
  if (options.x_n0_norm) {
    const double lp =
        r.kappa * (problem.K0 * (1.0 + *options.x_n0_norm + problem.K / (1.0 - alpha)) + 2.0 * r.V_prime_max.value);
    r.alternates["log_C_with_x_n0"] = lp;
    r.alternates["C_with_x_n0"] = std::exp(lp);
  }
  r.D = options.D;
  return r;
}

double envelope_value(double alpha, double b_sum_n0_n, double x_n0_dist, double delta, double a_n0, double c1) {
  return std::exp(-(1.0 - alpha) * b_sum_n0_n) * x_n0_dist + (delta + a_n0 * c1) / (1.0 - alpha);
}

double concentration_envelope(const BoundReport& report, const StepSchedule& schedule, double delta, std::int64_t n,
                              double x_n0_dist) {
  if (n < report.n0) throw Error(Errc::BadRange, "envelope needs n >= n0");
  return envelope_value(report.alpha.value, b_sum(schedule, report.n0, n), x_n0_dist, delta, report.a_n0,
                        report.c1.value);
}

int tail_exponent(double delta, double C) { return delta <= C ? 2 : 1; }

double tail_sum(double A, double d1, double d2, std::int64_t n0, std::int64_t first, std::int64_t last,
                double stop_above) {
  if (n0 < 1) throw Error(Errc::BadRange, "tail sums need n0 >= 1");
  if (first < n0) throw Error(Errc::BadRange, "tail sums start at or after n0");
  const bool infinite = last < 0;
  if (!infinite && last < first) return 0.0;
  // A / beta_{n0}(m) = B m^e
  double B = A;
  double e = d2;
  if (d1 <= d2) {
    B = A * std::pow(static_cast<double>(n0), d2 - d1);
    e = d1;
  }
  if (!(B > 0.0) || !(e > 0.0)) {
    if (infinite) throw Error(Errc::DivergentTail, "tail terms do not decay");
    return static_cast<double>(last - first + 1);
  }

  long double s = 0.0L;
  for (std::int64_t m = first; infinite || m <= last; ++m) {
    const double term = std::exp(-B * std::pow(static_cast<double>(m), e));
    s += term;
    if (s > stop_above) return static_cast<double>(s);
    const std::int64_t done = m - first + 1;
    if (term < 1e-14 || done % 64 == 0 || done >= kMaxTerms) {
      if (!infinite && m == last) break;
      const double rem = remainder_bound(B, e, static_cast<double>(m));
      if (rem < kRemainderTolerance || done >= kMaxTerms) {
        // The remainder is kept so the result stays an upper bound.
        return static_cast<double>(s) + rem;
      }
    }
  }
  return static_cast<double>(s);
}

double failure_bound(const BoundReport& report, double delta, std::int64_t n0, std::int64_t n, bool cumulative) {
  if (!(delta > 0.0)) throw Error(Errc::BadRange, "delta must be positive");
  const double D = require_D(report);
  if (!cumulative && n <= n0) return 0.0;
  const int p = tail_exponent(delta, report.C.value);
  const double A = D * std::pow(delta, p);
  const double scale = 2.0 * report.dim;
  const double raw = tail_sum(A, report.d1, report.d2, n0, n0 + 1, cumulative ? -1 : n, 1.0 / scale);
  return std::clamp(scale * raw, 0.0, 1.0);
}

double martingale_tail(double eps, double C, double gamma1, double /*gamma2*/, double omega, double D,
                       double eps_moment) {
  const double threshold = C * gamma1 / eps_moment;
  const double expo = eps <= threshold ? eps * eps : eps;
  if (!(omega > 0.0)) return 0.0;
  return std::min(1.0, 2.0 * std::exp(-D * expo / omega));
}

//---------------------------------------------------------------------------//
// Calibration of D
//---------------------------------------------------------------------------//

std::int64_t first_passage(const std::vector<double>& gammas, std::int64_t n0, double delta) {
  for (std::size_t j = 0; j < gammas.size(); ++j) {
    if (gammas[j] >= delta) return n0 + static_cast<std::int64_t>(j);
  }
  return -1;
}

double fit_D(const BoundReport& report, const std::vector<double>& deltas,
             const std::vector<std::vector<std::int64_t>>& passages, int n_trajectories, double D_ceiling,
             double rel_tol) {
  const std::int64_t n0 = report.n0;
  // Per delta: sorted distinct passage times with the cumulative frequency.
  struct Step {
    std::int64_t n;
    double freq;
  };
  std::vector<std::vector<Step>> steps(deltas.size());
  std::int64_t last = n0;
  for (std::size_t q = 0; q < deltas.size(); ++q) {
    std::vector<std::int64_t> t;
    for (auto v : passages[q]) {
      if (v >= 0) t.push_back(v);
    }
    std::sort(t.begin(), t.end());
    for (std::size_t k = 0; k < t.size(); ++k) {
      if (k + 1 < t.size() && t[k + 1] == t[k]) continue;
      steps[q].push_back({t[k], static_cast<double>(k + 1) / n_trajectories});
      last = std::max(last, t[k]);
    }
  }

  const double scale = 2.0 * report.dim;
  auto feasible = [&](double D) {
    for (std::size_t q = 0; q < deltas.size(); ++q) {
      if (steps[q].empty()) continue;
      const int p = tail_exponent(deltas[q], report.C.value);
      const double A = D * std::pow(deltas[q], p);
      long double s = 0.0L;
      std::int64_t m = n0 + 1;
      for (const Step& st : steps[q]) {
        for (; m <= st.n; ++m) s += std::exp(-A / beta(report.d1, report.d2, n0, m));
        if (st.freq > std::min(1.0L, scale * s)) return false;
      }
    }
    return true;
  };

  if (feasible(D_ceiling)) return D_ceiling;
  double hi = D_ceiling;
  double lo = D_ceiling;
  do {
    hi = lo;
    lo *= 1e-2;
    if (lo < 1e-300) throw Error(Errc::NoFeasibleD, "no positive D dominates the empirical frequencies");
  } while (!feasible(lo));
  while (hi / lo - 1.0 > rel_tol) {
    const double mid = std::sqrt(lo * hi);
    if (feasible(mid)) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return lo;
}

CalibrationResult calibrate_D(const SAProblem& problem, const StepSchedule& schedule, const BoundReport& report,
                              const std::vector<double>& deltas, int n_trajectories, std::int64_t T,
                              std::uint64_t seed, const CalibrationOptions& options) {
  if (deltas.empty()) throw Error(Errc::BadRange, "delta list is empty");
  for (double dl : deltas) {
    if (!(dl > 0.0)) throw Error(Errc::BadRange, "delta values must be positive");
  }
  if (n_trajectories < 100) throw Error(Errc::BadRange, "calibration needs at least 100 trajectories");
  const std::int64_t n0 = report.n0;
  if (T <= n0) throw Error(Errc::BadRange, "horizon must exceed n0");

  SimulateOptions sim;
  sim.max_horizon = std::max<std::int64_t>(T, sim.max_horizon);
  auto passages = run_indexed(static_cast<std::size_t>(n_trajectories), options.workers, [&](std::size_t i) {
    Trajectory tr = simulate(problem, schedule, options.x0, options.y0, T, derive_seed(seed, i), sim);
    const auto zeta = running_max(gamma_diagnostic(problem, schedule, tr, n0));
    std::vector<std::int64_t> fp(deltas.size());
    for (std::size_t q = 0; q < deltas.size(); ++q) fp[q] = first_passage(zeta, n0, deltas[q]);
    return fp;
  });

  CalibrationResult res;
  res.deltas = deltas;
  res.n_trajectories = n_trajectories;
  res.T = T;
  res.seed = seed;
  res.first_passage.assign(deltas.size(), std::vector<std::int64_t>(static_cast<std::size_t>(n_trajectories)));
  for (std::size_t i = 0; i < passages.size(); ++i) {
    for (std::size_t q = 0; q < deltas.size(); ++q) res.first_passage[q][i] = passages[i][q];
  }
  const double D = fit_D(report, deltas, res.first_passage, n_trajectories, options.D_ceiling, options.rel_tol);
  res.D = {D, Provenance::Calibrated};
  res.at_ceiling = D >= options.D_ceiling;
  return res;
}

//---------------------------------------------------------------------------//
// Stitching
//---------------------------------------------------------------------------//

namespace {

// Smallest n in [start, horizon] with ok(n), assuming ok is monotone.
template <class Pred>
std::int64_t smallest_satisfying(std::int64_t start, std::int64_t horizon, Pred ok, const char* what) {
  if (ok(start)) return start;
  std::int64_t lo = start;  // fails
  std::int64_t step = 1;
  std::int64_t hi = start + step;
  while (!ok(hi)) {
    lo = hi;
    if (hi >= horizon) {
      throw Error(Errc::Infeasible, std::string(what) + " not met within the search horizon");
    }
    step *= 2;
    hi = std::min(horizon, start + step);
  }
  while (hi - lo > 1) {
    const std::int64_t mid = lo + (hi - lo) / 2;
    if (ok(mid)) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  return hi;
}

}  // namespace

StitchResult stitch(const BoundReport& report, const StepSchedule& schedule,
                    const std::function<double(std::int64_t)>& moment_bound, double K_breve, double nu, double eps,
                    double delta, std::int64_t horizon) {
  if (schedule.rule() != ScheduleRule::Harmonic) {
    throw Error(Errc::InvalidArgument, "stitching is specialised to the harmonic rule a(n) = b/(n+1)");
  }
  if (!(K_breve > 0.0) || !(nu > 0.0) || !(eps > 0.0) || !(delta > 0.0)) {
    throw Error(Errc::BadRange, "K_breve, nu, eps and delta must be positive");
  }
  const double D = require_D(report);
  const double alpha = report.alpha.value;
  const double scale = 2.0 * report.dim;
  const double half_nu = 0.5 * nu;
  const int p = tail_exponent(delta, report.C.value);
  const double A = D * std::pow(delta, p);
  const std::int64_t start = std::max<std::int64_t>({report.N, 1, 1});

  auto cheb_ok = [&](std::int64_t n0) { return half_nu >= 1.0 || moment_bound(n0) / (K_breve * K_breve) < half_nu; };
  auto tail_of = [&](std::int64_t n0) {
    return scale * tail_sum(A, schedule.d1(), schedule.d2(), n0, n0, -1, half_nu / scale);
  };
  auto tail_ok = [&](std::int64_t n0) { return tail_of(n0) < half_nu; };

  StitchResult out;
  out.chebyshev_n0 = smallest_satisfying(start, horizon, cheb_ok, "moment condition");
  const std::int64_t tail_n0 = smallest_satisfying(start, horizon, tail_ok, "tail condition");
  out.n0 = std::max(out.chebyshev_n0, tail_n0);
  out.moment_ratio = moment_bound(out.n0) / (K_breve * K_breve);
  out.tail = tail_of(out.n0);

  const double a0 = schedule.a(out.n0);
  out.floor = (delta + a0 * report.c1.value) / (1.0 - alpha);
  if (out.floor >= eps) {
    std::ostringstream msg;
    msg << "envelope floor " << out.floor << " >= eps " << eps
        << " at n0 = " << out.n0 << "; use a smaller delta or a larger n0";
    throw Error(Errc::Infeasible, msg.str());
  }
  auto env = [&](std::int64_t n) {
    return envelope_value(alpha, b_sum(schedule, out.n0, n), K_breve, delta, a0, report.c1.value);
  };
  out.n1 = smallest_satisfying(out.n0, horizon, [&](std::int64_t n) { return env(n) <= eps; }, "envelope target");
  out.envelope_n1 = env(out.n1);
  return out;
}

//---------------------------------------------------------------------------//
// Serialisation
//---------------------------------------------------------------------------//

void write_report_json(std::ostream& out, const BoundReport& r) {
  nlohmann::json j;
  j["problem"] = r.problem;
  j["schedule"] = r.schedule;
  j["norm"] = std::string(to_string(r.norm));
  j["dim"] = r.dim;
  j["kappa"] = r.kappa;
  j["N"] = r.N;
  j["n0"] = r.n0;
  j["a_n0"] = r.a_n0;
  j["d1"] = r.d1;
  j["d2"] = r.d2;
  j["d3"] = r.d3;
  j["alpha"] = tagged_json(r.alpha);
  j["K"] = tagged_json(r.K);
  j["K0"] = tagged_json(r.K0);
  j["x_N_norm"] = tagged_json(r.x_N_norm);
  j["K_star"] = tagged_json(r.K_star);
  j["L"] = tagged_json(r.L);
  j["K_dagger"] = tagged_json(r.K_dagger);
  j["V_max"] = tagged_json(r.V_max);
  j["V_prime_max"] = tagged_json(r.V_prime_max);
  j["c1"] = tagged_json(r.c1);
  j["c2"] = tagged_json(r.c2);
  j["C"] = tagged_json(r.C);
  j["D"] = r.D ? tagged_json(*r.D) : nlohmann::json(nullptr);
  nlohmann::json alt = nlohmann::json::object();
  for (const auto& [k, v] : r.alternates) alt[k] = std::isfinite(v) ? nlohmann::json(v) : nlohmann::json("inf");
  j["alternates"] = alt;
  out << std::setw(2) << j << '\n';
}

void write_curves_csv(std::ostream& out, const BoundReport& report, const StepSchedule& schedule,
                      const std::vector<double>& deltas, const std::vector<std::int64_t>& ns, double x_n0_dist) {
  out << "n,delta,envelope,failure_bound\n" << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (double delta : deltas) {
    for (std::int64_t n : ns) {
      out << n << ',' << delta << ',' << concentration_envelope(report, schedule, delta, n, x_n0_dist) << ',';
      if (report.D) out << failure_bound(report, delta, report.n0, n, false);
      out << '\n';
    }
  }
}

}  // namespace sacon
