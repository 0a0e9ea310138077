// Copyright 2026 The sacon Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
#include "sacon/bounds.hpp"
#include "sacon/error.hpp"
#include "sacon/lab.hpp"
#include "sacon/linalg.hpp"
#include "sacon/markov.hpp"
#include "sacon/parallel.hpp"
#include "sacon/rl.hpp"
#include "sacon/rng.hpp"
#include "sacon/sa_engine.hpp"
#include "sacon/schedule.hpp"
#include "sacon/synthetic.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace sacon;
namespace fs = std::filesystem;

namespace {

// Tolerances.
constexpr double kPoissonTol = 1e-9;
constexpr double kPoissonSeconds = 10.0;
constexpr double kEnvelopeSlack = 1e-9;
constexpr double kEnvelopeSeconds = 120.0;
constexpr double kRoundoff = 1e-12;  // relative slack on ratio comparisons
constexpr double kBellmanTol = 1e-10;
constexpr double kProjectedTol = 1e-9;
constexpr double kWorkedRTol = 1e-9;
constexpr double kWorkedAlphaTol = 1e-6;
constexpr double kConvergenceFraction = 0.05;
constexpr int kConvergenceSeeds = 100;
constexpr int kConvergencePass = 95;
constexpr std::int64_t kConvergenceT = 100'000;
constexpr double kConvergenceSeconds = 300.0;
constexpr int kDominationEval = 1000;
constexpr int kDominationCalib = 500;
constexpr double kTelescopeTol = 1e-12;
constexpr int kTriples = 10'000;

// Hand evaluation for the 2-state TD instance: lambda_M = 1/2,
// mu_min(Phi^T D Phi) = 1/4, gamma = 1/2, so
// alpha^2 = 1 - (1/4)(2 (1/2) - (1/4)(9/4)) = 1 - 7/64 = 57/64.
constexpr double kWorkedAlpha = 0.9437293044088437;  // sqrt(57/64)
constexpr double kWorkedAlphaListed = 0.9436557;     // figure listed with the criterion
constexpr double kWorkedR = 4.0;                     // (1/2) r = 1 + (1/2)(1/2) r

const fs::path kSource = SACON_SOURCE_DIR;

int g_failures = 0;

void report(int id, const std::string& name, bool ok, const std::string& detail) {
  std::cout << (ok ? "PASS" : "FAIL") << " [" << id << "] " << name << ": " << detail << std::endl;
  if (!ok) ++g_failures;
}

void note(const std::string& text) { std::cout << "  note: " << text << std::endl; }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Matrix random_stochastic(Rng& rng, int n, double zero_prob) {
  Matrix p = Matrix::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (rng.uniform() >= zero_prob) p(i, j) = rng.uniform(0.05, 1.0);
    }
    p(i, (i + 1) % n) += 0.1;  // cycle keeps the support strongly connected
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

// Stationary law from the null space of (I - P)^T, independent of the library.
Vector oracle_stationary(const Matrix& p) {
  const int n = static_cast<int>(p.rows());
  Matrix a = (Matrix::Identity(n, n) - p).transpose();
  a.row(n - 1).setOnes();
  Vector rhs = Vector::Zero(n);
  rhs[n - 1] = 1.0;
  return a.fullPivLu().solve(rhs);
}

MDP random_mdp(Rng& rng, int s, int r, double gamma) {
  MDP m;
  m.s = s;
  m.r = r;
  m.gamma = gamma;
  m.p.resize(s * r, s);
  for (int q = 0; q < s * r; ++q) {
    for (int j = 0; j < s; ++j) m.p(q, j) = rng.uniform(0.05, 1.0);
    m.p.row(q) /= m.p.row(q).sum();
  }
  m.k.resize(s, r);
  for (int i = 0; i < s; ++i) {
    for (int u = 0; u < r; ++u) m.k(i, u) = rng.uniform(0.0, 2.0);
  }
  return m;
}

double oracle_bellman_residual(const MDP& m, const Matrix& Q) {
  double worst = 0.0;
  for (int i = 0; i < m.s; ++i) {
    for (int u = 0; u < m.r; ++u) {
      double next = 0.0;
      for (int j = 0; j < m.s; ++j) next += m.p(m.pair(i, u), j) * Q.row(j).minCoeff();
      worst = std::max(worst, std::abs(m.k(i, u) + m.gamma * next - Q(i, u)));
    }
  }
  return worst;
}

// Features Phi = sqrt(c) D^{-1/2} U with orthonormal U, so Phi^T D Phi = c I.
TDInstance orthogonal_td(const Matrix& p, const Vector& k, double gamma, int M, double c, Rng& rng) {
  TDInstance td{validate_chain(p), k, gamma, Matrix()};
  const Vector pi = td.chain.pi();
  Matrix g(p.rows(), M);
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = rng.normal();
  Matrix u = Eigen::HouseholderQR<Matrix>(g).householderQ() * Matrix::Identity(p.rows(), M);
  td.Phi = std::sqrt(c) * pi.cwiseSqrt().cwiseInverse().asDiagonal() * u;
  return td;
}

TDInstance random_td(Rng& rng, int s, int M, double gamma) {
  Matrix p = random_stochastic(rng, s, 0.0);
  Vector k(s);
  for (int i = 0; i < s; ++i) k[i] = rng.uniform(0.0, 2.0);
  Matrix phi(s, M);
  for (Eigen::Index i = 0; i < phi.size(); ++i) phi.data()[i] = rng.uniform(-1.0, 1.0);
  return rescale_features(TDInstance{validate_chain(p), k, gamma, phi}).td;
}

double oracle_projected_residual(const TDInstance& td, const Vector& r) {
  const Vector pi = oracle_stationary(td.chain.transition());
  const Matrix D = pi.asDiagonal();
  const Matrix& Phi = td.Phi;
  const Vector target = td.k + td.gamma * td.chain.transition() * Phi * r;
  const Vector w = (Phi.transpose() * D * Phi).ldlt().solve(Phi.transpose() * D * target);
  return (Phi * w - Phi * r).cwiseAbs().maxCoeff();
}

const MDP& envelope_mdp() {
  static const MDP m = load_mdp((kSource / "data" / "mdp_3x2.txt").string());
  return m;
}

//---------------------------------------------------------------------------//

void poisson() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(20260101);
  double worst = 0.0;
  bool pinned_exact = true;
  int chains = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 2 + trial % 7;
    const int d = 1 + trial % 3;
    const Matrix p = random_stochastic(rng, n, 0.4);
    const FiniteChain chain = validate_chain(p);
    Matrix f(n, d);
    for (Eigen::Index i = 0; i < f.size(); ++i) f.data()[i] = rng.uniform(-5.0, 5.0);
    const int i0 = static_cast<int>(rng.bits() % static_cast<std::uint64_t>(n));
    const PoissonSolution sol = poisson_solve(chain, f, i0);
    // V(i) = f(i) - pi.f + sum_j p(i,j) V(j), checked against an independent pi.
    const Vector pi = oracle_stationary(p);
    const Eigen::RowVectorXd mean = pi.transpose() * f;
    const Matrix resid = f.rowwise() - mean + p * sol.V - sol.V;
    for (int i = 0; i < n; ++i) {
      if (i != i0) worst = std::max(worst, resid.row(i).cwiseAbs().maxCoeff());
    }
    for (int l = 0; l < d; ++l) pinned_exact = pinned_exact && sol.V(i0, l) == 0.0;
    ++chains;
  }
  const double secs = seconds_since(t0);
  report(1, "poisson", worst <= kPoissonTol && pinned_exact && secs < kPoissonSeconds,
         fmt("%d chains (2-8 states), max residual %.3g (tol %.0e), V(i0)=0 exactly: %s, %.2fs (limit %.0fs)", chains,
             worst, kPoissonTol, pinned_exact ? "yes" : "no", secs, kPoissonSeconds));
}

//---------------------------------------------------------------------------//

struct Family {
  std::string name;
  SAProblem problem;
  double x0_radius = 5.0;
};

std::vector<Family> envelope_families() {
  std::vector<Family> out;
  SyntheticSpec spec;
  spec.dim = 3;
  spec.n_states = 4;
  spec.alpha = 0.7;
  spec.noise = 0.8;
  spec.tilt = 0.3;
  spec.seed = 17;
  out.push_back({"synthetic", make_synthetic_problem(spec)});

  QLearningOptions qo;
  qo.tau = 2.0;
  qo.seed = 5;
  out.push_back({"qlearning", q_as_sa_problem(make_q_instance(envelope_mdp(), qo))});

  Rng rng(404);
  out.push_back({"td0", td_as_sa_problem(random_td(rng, 4, 2, 0.6))});
  return out;
}

void iterate_envelope() {
  const auto t0 = std::chrono::steady_clock::now();
  const StepSchedule schedule = StepSchedule::harmonic(1.0);
  const std::int64_t N = certify_N(schedule);
  constexpr int kTraj = 1000;
  constexpr std::int64_t kT = 2000;
  std::int64_t total = 0;
  double worst = -1e300;
  std::ostringstream per;
  for (const Family& fam : envelope_families()) {
    const auto results = run_indexed(kTraj, default_workers(), [&](std::size_t i) {
      Rng rng(derive_seed(0xe11e, i));
      const Vector x0 = sample_in_ball(rng, fam.problem.dim, fam.x0_radius, fam.problem.norm);
      const int y0 = static_cast<int>(rng.bits() % static_cast<std::uint64_t>(fam.problem.n_states()));
      SimulateOptions so;
      so.record_noise = false;
      const Trajectory tr = simulate(fam.problem, schedule, x0, y0, kT, derive_seed(0xe11f, i), so);
      return iterate_envelope_check(fam.problem, tr, N, kEnvelopeSlack);
    });
    std::int64_t v = 0;
    for (const auto& r : results) {
      v += r.violations;
      worst = std::max(worst, r.worst_margin);
    }
    total += v;
    per << ' ' << fam.name << '=' << v;
  }
  const double secs = seconds_since(t0);
  report(2, "iterate envelope", total == 0 && secs < kEnvelopeSeconds,
         fmt("1000 trajectories x 3 families, T=%lld, N=%lld, violations:%s, worst margin %.3g (slack %.0e), %.1fs "
             "(limit %.0fs)",
             static_cast<long long>(kT), static_cast<long long>(N), per.str().c_str(), worst, kEnvelopeSlack, secs,
             kEnvelopeSeconds));
}

//---------------------------------------------------------------------------//

struct RatioStats {
  double worst = 0.0;
  int counterexamples = 0;
};

// Pairs (x, z) and a kernel point w sampled in the ball; the averaged map uses
// the stationary law of P_w from the independent solver.
RatioStats sampled_ratios(const SAProblem& pr, double radius, int pairs, std::uint64_t seed) {
  Rng rng(seed);
  const std::vector<Vector> vertices = ball_vertices(rng, pr.dim, radius, pr.norm, 256);
  RatioStats st;
  for (int k = 0; k < pairs; ++k) {
    const Vector w = sample_in_ball(rng, pr.dim, radius, pr.norm);
    Vector x = k % 4 == 0 ? vertices[static_cast<std::size_t>(k / 4) % vertices.size()]
                          : sample_in_ball(rng, pr.dim, radius, pr.norm);
    Vector z = k % 4 == 1 ? Vector(-x) : sample_in_ball(rng, pr.dim, radius, pr.norm);
    const double dist = norm(x - z, pr.norm);
    if (dist <= 0.0) continue;
    const Vector pi = oracle_stationary(pr.chain.transition_matrix(w));
    const double ratio = norm(pr.mean_field(x, pi) - pr.mean_field(z, pi), pr.norm) / dist;
    st.worst = std::max(st.worst, ratio);
    if (ratio > pr.alpha * (1.0 + kRoundoff)) ++st.counterexamples;
  }
  return st;
}

void contraction() {
  QLearningOptions qo;
  qo.tau = 2.0;
  qo.seed = 5;
  const QLearningInstance q = make_q_instance(envelope_mdp(), qo);
  const SAProblem qp = q_as_sa_problem(q);
  const RatioStats qs = sampled_ratios(qp, q.K(), 10'000, 91);

  Rng rng(92);
  const TDInstance td = random_td(rng, 4, 2, 0.6);
  const SAProblem tp = td_as_sa_problem(td);
  const double r_radius = 2.0 * td_fixed_point(td).norm() + 1.0;
  const RatioStats ts = sampled_ratios(tp, r_radius, 10'000, 93);
  // Closed form evaluated here from Phi, D and gamma.
  const Vector pi = oracle_stationary(td.chain.transition());
  const Matrix G = td.Phi.transpose() * pi.asDiagonal() * td.Phi;
  const double lam = (td.Phi.transpose() * pi.cwiseSqrt().asDiagonal()).jacobiSvd().singularValues()[0];
  const double mu = Eigen::SelfAdjointEigenSolver<Matrix>(G).eigenvalues().minCoeff();
  const double g = td.gamma;
  const double td_alpha = std::sqrt(1.0 - mu * (2.0 * (1.0 - g) - lam * lam * (1.0 + g) * (1.0 + g)));

  const bool ok = qs.counterexamples == 0 && ts.counterexamples == 0 &&
                  std::abs(td_alpha - tp.alpha) <= 1e-12 && qs.worst <= qp.alpha * (1.0 + kRoundoff);
  report(3, "contraction", ok,
         fmt("Q-learning: worst ratio %.6f vs alpha %.6f, %d counterexamples in 1e4 pairs; TD(0): worst %.6f vs alpha "
             "%.6f (closed form %.6f), %d counterexamples in 1e4 pairs",
             qs.worst, qp.alpha, qs.counterexamples, ts.worst, tp.alpha, td_alpha, ts.counterexamples));
  note(fmt("Q-learning alpha rests on a sampled pi_min = %.6g (%s); it is an estimate over the working ball, not a "
           "certified minimum",
           q.pi_min.value, to_string(q.pi_min.provenance).data()));
}

//---------------------------------------------------------------------------//

void fixed_points() {
  Rng rng(404040);
  double bellman_worst = 0.0;
  for (int t = 0; t < 50; ++t) {
    const MDP m = random_mdp(rng, 2 + t % 5, 1 + t % 3, rng.uniform(0.0, 0.95));
    bellman_worst = std::max(bellman_worst, oracle_bellman_residual(m, q_value_iteration(m, 1e-12)));
  }
  double projected_worst = 0.0;
  for (int t = 0; t < 50; ++t) {
    const TDInstance td = random_td(rng, 3 + t % 5, 1 + t % 2, rng.uniform(0.0, 0.9));
    projected_worst = std::max(projected_worst, oracle_projected_residual(td, td_fixed_point(td)));
  }
  const TDInstance worked = load_td((kSource / "data" / "td_worked" / "chain.txt").string(),
                                    (kSource / "data" / "td_worked" / "cost.txt").string(),
                                    (kSource / "data" / "td_worked" / "features.txt").string(), 0.5);
  const double r = td_fixed_point(worked)[0];
  const double alpha = td_contraction_factor(worked);
  const bool ok = bellman_worst <= kBellmanTol && projected_worst <= kProjectedTol &&
                  std::abs(r - kWorkedR) <= kWorkedRTol && std::abs(alpha - kWorkedAlpha) <= kWorkedAlphaTol;
  report(4, "fixed points", ok,
         fmt("Bellman residual %.3g (tol %.0e) over 50 MDPs; projected residual %.3g (tol %.0e) over 50 TD instances; "
             "worked r* = %.12f (4 +- %.0e), alpha = %.10f (oracle %.10f +- %.0e)",
             bellman_worst, kBellmanTol, projected_worst, kProjectedTol, r, kWorkedRTol, alpha, kWorkedAlpha,
             kWorkedAlphaTol));
  note(fmt("listed alpha %.7f differs from sqrt(57/64) = %.10f by %.2e; the closed form is the oracle",
           kWorkedAlphaListed, kWorkedAlpha, kWorkedAlpha - kWorkedAlphaListed));
}

//---------------------------------------------------------------------------//

std::vector<double> final_errors(const SAProblem& pr, const Vector& x_star, Norm kind, std::uint64_t master) {
  const StepSchedule schedule = StepSchedule::harmonic(1.0);
  return run_indexed(kConvergenceSeeds, default_workers(), [&](std::size_t i) {
    SimulateOptions so;
    so.record_noise = false;
    so.max_horizon = kConvergenceT;
    const Trajectory tr = simulate(pr, schedule, Vector::Zero(pr.dim), 0, kConvergenceT, derive_seed(master, i), so);
    return norm(tr.x(kConvergenceT) - x_star, kind);
  });
}

int count_below(const std::vector<double>& v, double tol) {
  return static_cast<int>(std::count_if(v.begin(), v.end(), [&](double e) { return e < tol; }));
}

void convergence() {
  const auto t0 = std::chrono::steady_clock::now();
  // One state, two actions, softmax behaviour.
  MDP m;
  m.s = 1;
  m.r = 2;
  m.gamma = 0.3;
  m.p = Matrix::Ones(2, 1);
  m.k.resize(1, 2);
  m.k << 1.0, 0.7;
  QLearningOptions qo;
  qo.tau = 1.0;
  const QLearningInstance q = make_q_instance(m, qo);
  const double q_tol = kConvergenceFraction * q.K();
  const auto q_err = final_errors(q_as_sa_problem(q), flatten_q(q.Q_star), Norm::Sup, 0xc0417);
  const int q_pass = count_below(q_err, q_tol);

  // Three states, orthogonal features inside the admissible region.
  Matrix p(3, 3);
  p << 0.2, 0.5, 0.3, 0.4, 0.2, 0.4, 0.3, 0.3, 0.4;
  Vector k(3);
  k << 1.0, 2.0, 0.5;
  Rng rng(77);
  const double gamma = 0.1;
  const double limit = td_admissibility_limit(gamma);
  const TDInstance td = orthogonal_td(p, k, gamma, 2, 0.8 * limit * limit, rng);
  const Vector r_star = td_fixed_point(td);
  const double td_tol = kConvergenceFraction * r_star.norm();
  const auto td_err = final_errors(td_as_sa_problem(td), r_star, Norm::Euclidean, 0xc0418);
  const int td_pass = count_below(td_err, td_tol);

  const double secs = seconds_since(t0);
  report(5, "convergence", q_pass >= kConvergencePass && td_pass >= kConvergencePass && secs < kConvergenceSeconds,
         fmt("b=1, T=%lld, %d seeds: Q-learning %d/%d under 0.05 K = %.4g (max %.3g); TD(0) %d/%d under 0.05 "
             "||r*|| = %.4g (max %.3g); need %d each; %.1fs (limit %.0fs)",
             static_cast<long long>(kConvergenceT), kConvergenceSeeds, q_pass, kConvergenceSeeds, q_tol,
             *std::max_element(q_err.begin(), q_err.end()), td_pass, kConvergenceSeeds, td_tol,
             *std::max_element(td_err.begin(), td_err.end()), kConvergencePass, secs, kConvergenceSeconds));
  note("Q-learning instance has one state and two actions; with b=1 each state-action pair forgets its start like "
       "n^-(pi(i,u)(1-gamma)), so 4 or more pairs (pi <= 1/4) cannot reach 0.05 K by T=1e5 from Q_0 = 0");
}

//---------------------------------------------------------------------------//

void domination() {
  const Config cfg = Config::load(kSource / "configs" / "synthetic.cfg");
  const Experiment ex = make_experiment(cfg);
  BoundReport rep = experiment_report(ex);
  const std::uint64_t calib_seed = 0xca11b;
  const std::uint64_t eval_seed = 0xe7a1;
  std::set<std::uint64_t> pool;
  for (int i = 0; i < kDominationCalib; ++i) pool.insert(derive_seed(calib_seed, static_cast<std::uint64_t>(i)));
  bool disjoint = true;
  for (int i = 0; i < kDominationEval; ++i) {
    disjoint = disjoint && !pool.count(derive_seed(eval_seed, static_cast<std::uint64_t>(i)));
  }
  CalibrationOptions co;
  co.x0 = ex.x0;
  co.y0 = ex.y0;
  co.workers = default_workers();
  const CalibrationResult fit =
      calibrate_D(ex.problem, ex.schedule, rep, ex.deltas, kDominationCalib, ex.T, calib_seed, co);
  rep.D = fit.D;
  const DominationResult dom = check_domination(ex.problem, ex.schedule, rep, ex.deltas, ex.x0, ex.y0, ex.T,
                                                kDominationEval, eval_seed, default_workers());
  std::ostringstream per;
  for (std::size_t q = 0; q < ex.deltas.size(); ++q) {
    per << fmt(" delta=%g: freq %.3f, worst freq-bound %.3g;", ex.deltas[q], dom.final_frequency[q],
               dom.worst_margin[q]);
  }
  report(6, "domination", dom.ok && disjoint && dom.n_trajectories >= kDominationEval,
         fmt("D=%.4g calibrated on %d trajectories, evaluated on %d disjoint ones (disjoint: %s), T=%lld;%s", fit.D.value,
             kDominationCalib, dom.n_trajectories, disjoint ? "yes" : "no", static_cast<long long>(ex.T),
             per.str().c_str()));
}

//---------------------------------------------------------------------------//

void schedule_algebra() {
  Rng rng(777);
  constexpr int kSchedules = 100;
  constexpr std::int64_t kHorizon = 4000;
  double tele_worst = 0.0;
  int discount_violations = 0;
  int triples = 0;
  for (int s_i = 0; s_i < kSchedules; ++s_i) {
    const StepSchedule s = s_i % 2 ? StepSchedule::harmonic(rng.uniform(0.2, 4.0))
                                   : StepSchedule::power(rng.uniform(0.2, 3.0), rng.uniform(0.5, 1.0));
    const std::int64_t N = certify_N(s);
    const ScheduleTable tab(s, kHorizon + 2);
    const double c = s.d3() * std::pow(2.0, s.d1());
    for (int t = 0; t < kTriples / kSchedules; ++t) {
      const std::int64_t n0 = N + static_cast<std::int64_t>(rng.bits() % 200);
      const std::int64_t n = n0 + static_cast<std::int64_t>(rng.bits() % static_cast<std::uint64_t>(kHorizon - n0));
      const std::int64_t m = n0 + static_cast<std::int64_t>(rng.bits() % static_cast<std::uint64_t>(n - n0 + 1));
      long double total = chi(s, m, n0);
      for (std::int64_t k = n0; k <= m; ++k) total += static_cast<long double>(tab.chi(m, k + 1)) * tab.a(k);
      tele_worst = std::max(tele_worst, std::abs(static_cast<double>(total) - 1.0));
      if (tab.a(m) * tab.chi(n, m + 1) > c * beta(s, n0, n)) ++discount_violations;
      ++triples;
    }
  }
  report(7, "schedule algebra", tele_worst <= kTelescopeTol && discount_violations == 0 && triples >= kTriples,
         fmt("%d triples over %d schedules: telescoping error %.3g (tol %.0e), discount bound violations %d", triples,
             kSchedules, tele_worst, kTelescopeTol, discount_violations));
}

//---------------------------------------------------------------------------//

void stitching() {
  SyntheticSpec spec;
  spec.dim = 2;
  spec.alpha = 0.6;
  spec.noise = 0.5;
  spec.tilt = 0.0;
  spec.seed = 3;
  const SAProblem pr = make_synthetic_problem(spec);
  const StepSchedule sch = StepSchedule::harmonic(1.0);
  int cases = 0;
  int bad = 0;
  double min_slack = 1e300;
  for (double D : {5.0, 50.0}) {
    ReportOptions ro;
    ro.x_N_norm = 3.0;
    ro.n_directions = 300;
    ro.D = Tagged{D, Provenance::User};
    const BoundReport rep = build_report(pr, sch, certify_N(sch), ro);
    const double delta = 0.05;
    const int p = tail_exponent(delta, rep.C.value);
    const double A = D * std::pow(delta, p);
    const double scale = 2.0 * rep.dim;
    for (double c : {0.1, 1.0, 10.0}) {
      for (double G : {0.5, 1.0, 1.5}) {
        for (double Kb : {0.5, 1.0, 2.0}) {
          for (double nu : {0.01, 0.05, 0.2}) {
            auto ups = [&](std::int64_t n) { return c / std::pow(static_cast<double>(n), G); };
            const double eps = 2.0 * (delta + sch.a(1) * rep.c1.value) / (1.0 - rep.alpha.value) + 1.0;
            const StitchResult st = stitch(rep, sch, ups, Kb, nu, eps, delta);
            ++cases;
            auto moment_ok = [&](std::int64_t n) { return ups(n) / (Kb * Kb) < nu / 2.0; };
            auto tail_ok = [&](std::int64_t n) { return scale * tail_sum(A, sch.d1(), sch.d2(), n, n, -1) < nu / 2.0; };
            auto env = [&](std::int64_t n) {
              return std::exp(-(1.0 - rep.alpha.value) * b_sum(sch, st.n0, n)) * Kb +
                     (delta + sch.a(st.n0) * rep.c1.value) / (1.0 - rep.alpha.value);
            };
            bool ok = moment_ok(st.n0) && tail_ok(st.n0) && env(st.n1) <= eps && st.n1 >= st.n0;
            if (st.n0 > rep.N) ok = ok && !(moment_ok(st.n0 - 1) && tail_ok(st.n0 - 1));
            if (st.n1 > st.n0) ok = ok && env(st.n1 - 1) > eps;
            const double closed = std::pow(2.0 * c / (nu * Kb * Kb), 1.0 / G);
            ok = ok && static_cast<double>(st.n0) >= closed;
            min_slack = std::min(min_slack, static_cast<double>(st.n0) - closed);
            if (!ok) ++bad;
          }
        }
      }
    }
  }
  report(8, "stitching", bad == 0,
         fmt("%d (D, c, Gamma, K_breve, nu) cases re-evaluated: %d failures; min n0 - (2c/(nu K_breve^2))^(1/Gamma) = "
             "%.4g",
             cases, bad, min_slack));
}

}  // namespace

int main() {
  std::cout.setf(std::ios::unitbuf);
  const std::vector<std::function<void()>> steps = {poisson,     iterate_envelope, contraction,      fixed_points,
                                                    convergence, domination,       schedule_algebra, stitching};
  for (std::size_t i = 0; i < steps.size(); ++i) {
    try {
      steps[i]();
    } catch (const std::exception& e) {
      report(static_cast<int>(i + 1), "exception", false, e.what());
    }
  }
  std::cout << (g_failures == 0 ? "ALL PASS" : fmt("%d FAILED", g_failures)) << std::endl;
  return g_failures == 0 ? 0 : 1;
}
