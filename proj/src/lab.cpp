// Copyright 2026 The sacon Authors.
// SPDX-License-Identifier: Apache-2.0
#include "sacon/lab.hpp"

#include "CLI11.hpp"
#include "json.hpp"
#include "sacon/error.hpp"
#include "sacon/parallel.hpp"
#include "sacon/synthetic.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>

namespace sacon {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
  return os.str();
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p);
  if (!out) throw Error(Errc::ConfigError, "cannot write " + p.string());
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  return out;
}

void write_json(const fs::path& p, const ojson& j) {
  auto out = open_out(p);
  out << j.dump(2) << '\n';
}

ojson number(double v) {
  if (std::isfinite(v)) return v;
  return std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf");
}

void write_run_readme(const fs::path& dir, const std::string& command, const std::vector<std::string>& lines) {
  auto out = open_out(dir / "README.txt");
  out << "Output of `sacon_lab " << command << "`.\n\n";
  for (const auto& l : lines) out << l << '\n';
  out << "\nIndices of states and actions are 0-based. Numbers are written with 17 significant digits.\n";
}

Vector x_star_of(const SAProblem& pr) {
  if (!pr.x_star) throw Error(Errc::InvalidArgument, "problem has no known fixed point");
  return *pr.x_star;
}

double problem_scale(const Experiment& ex) {
  if (ex.q) return ex.q->K();
  const double s = norm(x_star_of(ex.problem), ex.problem.norm);
  return s > 0.0 ? s : 1.0;
}

}  // namespace

//---------------------------------------------------------------------------//
// Config
//---------------------------------------------------------------------------//

Config Config::parse(std::istream& in, const std::string& source) {
  Config c;
  c.source_ = source;
  std::string section;
  std::string raw;
  int line_no = 0;
  auto error = [&](const std::string& msg) {
    throw Error(Errc::ConfigError, source + ":" + std::to_string(line_no) + ": " + msg);
  };
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = raw;
    if (auto h = line.find('#'); h != std::string::npos) line = line.substr(0, h);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') error("unterminated section header");
      section = lower(trim(line.substr(1, line.size() - 2)));
      if (section.empty()) error("empty section name");
      c.data_[section];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) error("expected `key = value`");
    if (section.empty()) error("key outside of any [section]");
    const std::string key = lower(trim(line.substr(0, eq)));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) error("empty key");
    auto& sec = c.data_[section];
    if (sec.count(key)) error("duplicate key `" + key + "` in [" + section + "]");
    sec[key] = Entry{value, line_no};
  }
  return c;
}

Config Config::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::ConfigError, "cannot open config " + path.string());
  Config c = parse(in, path.string());
  c.base_dir_ = path.parent_path();
  return c;
}

const Config::Entry* Config::find(const std::string& section, const std::string& key) const {
  auto s = data_.find(section);
  if (s == data_.end()) return nullptr;
  auto k = s->second.find(key);
  if (k == s->second.end()) return nullptr;
  used_.insert(section + "." + key);
  return &k->second;
}

void Config::fail(const std::string& section, const std::string& key, const std::string& msg) const {
  std::string where = source_;
  auto s = data_.find(section);
  if (s != data_.end()) {
    auto k = s->second.find(key);
    if (k != s->second.end()) where += ":" + std::to_string(k->second.line);
  }
  throw Error(Errc::ConfigError, where + ": [" + section + "] " + key + ": " + msg);
}

bool Config::has(const std::string& section, const std::string& key) const { return find(section, key) != nullptr; }

std::optional<std::string> Config::get(const std::string& section, const std::string& key) const {
  const Entry* e = find(section, key);
  if (!e) return std::nullopt;
  return e->value;
}

std::string Config::require(const std::string& section, const std::string& key) const {
  auto v = get(section, key);
  if (!v || v->empty()) fail(section, key, "required but missing");
  return *v;
}

std::string Config::get_or(const std::string& section, const std::string& key, const std::string& fallback) const {
  return get(section, key).value_or(fallback);
}

double Config::get_double(const std::string& section, const std::string& key, double fallback) const {
  auto v = get(section, key);
  if (!v) return fallback;
  try {
    std::size_t used = 0;
    const double d = std::stod(*v, &used);
    if (used != v->size()) throw std::invalid_argument(*v);
    return d;
  } catch (const std::exception&) {
    fail(section, key, "expected a number, got `" + *v + "`");
  }
}

std::int64_t Config::get_int(const std::string& section, const std::string& key, std::int64_t fallback) const {
  auto v = get(section, key);
  if (!v) return fallback;
  try {
    std::size_t used = 0;
    const long long n = std::stoll(*v, &used);
    if (used != v->size()) throw std::invalid_argument(*v);
    return n;
  } catch (const std::exception&) {
    fail(section, key, "expected an integer, got `" + *v + "`");
  }
}

bool Config::get_bool(const std::string& section, const std::string& key, bool fallback) const {
  auto v = get(section, key);
  if (!v) return fallback;
  const std::string s = lower(*v);
  if (s == "true" || s == "yes" || s == "1" || s == "on") return true;
  if (s == "false" || s == "no" || s == "0" || s == "off") return false;
  fail(section, key, "expected true or false, got `" + *v + "`");
}

std::vector<double> Config::get_list(const std::string& section, const std::string& key) const {
  auto v = get(section, key);
  if (!v) return {};
  std::string s = *v;
  std::replace(s.begin(), s.end(), ',', ' ');
  std::istringstream is(s);
  std::vector<double> out;
  std::string tok;
  while (is >> tok) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      fail(section, key, "not a number: `" + tok + "`");
    }
  }
  return out;
}

std::string Config::section_descriptor(const std::string& section) const {
  auto s = data_.find(section);
  if (s == data_.end()) return "";
  std::string out;
  for (const auto& [k, e] : s->second) {
    used_.insert(section + "." + k);
    if (!out.empty()) out += ' ';
    out += k + "=" + e.value;
  }
  return out;
}

fs::path Config::path(const std::string& section, const std::string& key) const {
  fs::path p = require(section, key);
  if (p.is_relative()) p = base_dir_ / p;
  if (!fs::exists(p)) fail(section, key, "file not found: " + p.string());
  return p;
}

void Config::set(const std::string& section, const std::string& key, const std::string& value) {
  data_[section][key] = Entry{value, 0};
}

void Config::reject_unused() const {
  for (const auto& [sec, keys] : data_) {
    for (const auto& [k, e] : keys) {
      if (!used_.count(sec + "." + k)) fail(sec, k, "unknown key");
    }
  }
}

//---------------------------------------------------------------------------//
// Experiment
//---------------------------------------------------------------------------//

namespace {

void build_problem(const Config& c, Experiment& ex) {
  ex.kind = lower(c.require("problem", "kind"));
  if (ex.kind == "synthetic") {
    SyntheticSpec spec;
    spec.dim = static_cast<int>(c.get_int("problem", "dim", spec.dim));
    spec.n_states = static_cast<int>(c.get_int("problem", "n_states", spec.n_states));
    spec.alpha = c.get_double("problem", "alpha", spec.alpha);
    spec.noise = c.get_double("problem", "noise", spec.noise);
    spec.tilt = c.get_double("problem", "tilt", spec.tilt);
    spec.seed = static_cast<std::uint64_t>(c.get_int("problem", "seed", 1));
    if (auto n = c.get("problem", "norm")) {
      try {
        spec.norm = parse_norm(*n);
      } catch (const Error& e) {
        throw Error(Errc::ConfigError, "[problem] norm: " + std::string(e.what()));
      }
    }
    if (c.has("problem", "x_star")) {
      auto v = c.get_list("problem", "x_star");
      spec.x_star = Eigen::Map<Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
    }
    try {
      ex.problem = make_synthetic_problem(spec);
    } catch (const Error& e) {
      throw Error(Errc::ConfigError, "[problem] synthetic: " + std::string(e.what()));
    }
  } else if (ex.kind == "qlearning") {
    const fs::path mdp_path = c.path("problem", "mdp");
    QLearningOptions opt;
    opt.tau = c.get_double("problem", "tau", opt.tau);
    const std::string policy = lower(c.get_or("problem", "policy", "softmax"));
    opt.pi_min_samples = static_cast<int>(c.get_int("problem", "pi_min_samples", opt.pi_min_samples));
    opt.seed = static_cast<std::uint64_t>(c.get_int("problem", "seed", 1));
    if (c.has("problem", "pi_min")) opt.declared_pi_min = c.get_double("problem", "pi_min", 0.0);
    MDP mdp;
    try {
      mdp = load_mdp(mdp_path.string());
    } catch (const Error& e) {
      throw Error(Errc::ConfigError, "[problem] mdp: " + mdp_path.string() + ": " + e.what());
    }
    if (policy == "uniform") {
      opt.fixed_policy = Matrix::Constant(mdp.s, mdp.r, 1.0 / mdp.r);
    } else if (policy != "softmax") {
      throw Error(Errc::ConfigError, "[problem] policy: expected softmax or uniform, got `" + policy + "`");
    }
    try {
      ex.q = make_q_instance(mdp, opt);
    } catch (const Error& e) {
      if (e.code() == Errc::NotIrreducible) throw;
      throw Error(Errc::ConfigError, "[problem] qlearning: " + std::string(e.what()));
    }
    ex.problem = q_as_sa_problem(*ex.q);
  } else if (ex.kind == "td0") {
    const fs::path chain = c.path("problem", "chain");
    const fs::path cost = c.path("problem", "cost");
    const fs::path features = c.path("problem", "features");
    const double gamma = c.get_double("problem", "gamma", std::numeric_limits<double>::quiet_NaN());
    if (std::isnan(gamma)) throw Error(Errc::ConfigError, "[problem] gamma: required for td0");
    const bool rescale = c.get_bool("problem", "rescale", false);
    TDInstance td{validate_chain(Matrix::Ones(1, 1)), Vector(), gamma, Matrix()};
    try {
      td = load_td(chain.string(), cost.string(), features.string(), gamma);
    } catch (const Error& e) {
      throw Error(Errc::ConfigError, "[problem] td0 files: " + std::string(e.what()));
    }
    if (rescale) {
      auto rs = rescale_features(td);
      td = rs.td;
      ex.td_rescale = rs.factor;
    }
    ex.td = td;
    ex.problem = td_as_sa_problem(td);  // Inadmissible propagates
  } else {
    throw Error(Errc::ConfigError, "[problem] kind: expected synthetic, qlearning or td0, got `" + ex.kind + "`");
  }
}

}  // namespace

Experiment make_experiment(const Config& c, const Overrides& overrides) {
  Experiment ex;
  build_problem(c, ex);

  std::string desc = c.section_descriptor("schedule");
  if (desc.empty()) desc = "rule=harmonic b=1.0";
  try {
    ex.schedule = StepSchedule::parse(desc);
  } catch (const Error& e) {
    throw Error(Errc::ConfigError, "[schedule]: " + std::string(e.what()));
  }
  std::int64_t N = 0;
  try {
    N = certify_N(ex.schedule);
  } catch (const Error& e) {
    throw Error(Errc::ConfigError, "[schedule]: " + std::string(e.what()));
  }

  ex.T = c.get_int("run", "t", 1000);
  ex.n0 = c.get_int("run", "n0", N);
  const std::int64_t n_traj = c.get_int("run", "n_trajectories", 100);
  ex.seed = static_cast<std::uint64_t>(c.get_int("run", "seed", 1));
  ex.y0 = static_cast<int>(c.get_int("run", "y0", 0));
  ex.write_trajectories = static_cast<int>(c.get_int("run", "write_trajectories", 0));
  if (ex.T < 1) throw Error(Errc::ConfigError, "[run] T: must be positive");
  if (n_traj < 1) throw Error(Errc::ConfigError, "[run] n_trajectories: must be positive");
  ex.n_trajectories = static_cast<int>(n_traj);
  if (ex.n0 < N) {
    throw Error(Errc::ConfigError, "[run] n0: must be at least N = " + std::to_string(N) + " for this schedule");
  }
  if (ex.n0 >= ex.T) throw Error(Errc::ConfigError, "[run] n0: must be below T");
  if (ex.y0 < 0 || ex.y0 >= ex.problem.n_states()) throw Error(Errc::ConfigError, "[run] y0: state out of range");
  if (ex.write_trajectories < 0) throw Error(Errc::ConfigError, "[run] write_trajectories: must be nonnegative");
  const int d = ex.problem.dim;
  auto x0 = c.get_list("run", "x0");
  if (x0.empty()) {
    ex.x0 = Vector::Zero(d);
  } else if (x0.size() == 1) {
    ex.x0 = Vector::Constant(d, x0[0]);
  } else if (static_cast<int>(x0.size()) == d) {
    ex.x0 = Eigen::Map<Vector>(x0.data(), d);
  } else {
    throw Error(Errc::ConfigError, "[run] x0: expected 1 or " + std::to_string(d) + " values");
  }

  ex.deltas = c.has("bound", "deltas") ? c.get_list("bound", "deltas") : std::vector<double>{0.1};
  if (auto dv = c.get("bound", "d")) {
    if (lower(*dv) == "calibrate") {
      ex.d_source = DSource::Calibrate;
    } else {
      ex.d_source = DSource::Value;
      ex.D = c.get_double("bound", "d", 0.0);
      if (!(ex.D > 0.0)) throw Error(Errc::ConfigError, "[bound] D: must be positive");
    }
  }
  ex.calib_trajectories = static_cast<int>(c.get_int("bound", "calib_trajectories", 200));
  ex.calib_seed = static_cast<std::uint64_t>(c.get_int("bound", "calib_seed", 0));
  ex.n_directions = static_cast<int>(c.get_int("bound", "n_directions", 500));
  if (ex.n_directions < 1) throw Error(Errc::ConfigError, "[bound] n_directions: must be positive");
  if (c.get_bool("bound", "stitch", false)) {
    StitchConfig s;
    s.c = c.get_double("bound", "stitch_c", s.c);
    s.exponent = c.get_double("bound", "stitch_exponent", s.exponent);
    s.K_breve = c.get_double("bound", "k_breve", s.K_breve);
    s.nu = c.get_double("bound", "nu", s.nu);
    s.eps = c.get_double("bound", "eps", s.eps);
    s.delta = c.get_double("bound", "stitch_delta", s.delta);
    ex.stitch = s;
  }

  ex.out_dir = c.get_or("output", "dir", "sacon_out");
  c.reject_unused();

  if (overrides.seed) ex.seed = *overrides.seed;
  if (overrides.out) ex.out_dir = *overrides.out;
  if (ex.calib_seed == 0) ex.calib_seed = derive_seed(ex.seed, 0xca1b);
  ex.workers = default_workers();
  return ex;
}

namespace {

// Q-learning iterates stay in the sup-ball of radius max(K, ||x0||) while
// every step is at most 1; far outside it the softmax chain underflows.
std::optional<double> invariant_radius(const Experiment& ex) {
  if (!ex.q || ex.problem.norm != Norm::Sup) return std::nullopt;
  const std::int64_t last = std::max<std::int64_t>(ex.T, static_cast<std::int64_t>(ex.schedule.prefix().size()) + 1);
  for (std::int64_t n = 1; n <= last; ++n) {
    if (ex.schedule.a(n) > 1.0) return std::nullopt;
  }
  return std::max(ex.problem.K, norm(ex.x0, Norm::Sup));
}

}  // namespace

BoundReport experiment_report(const Experiment& ex, std::optional<Tagged> D) {
  const SAProblem& pr = ex.problem;
  const std::int64_t N = certify_N(ex.schedule);
  const double x0n = norm(ex.x0, pr.norm);
  ReportOptions opt;
  opt.sample_radius = invariant_radius(ex);
  opt.x_N_norm = gronwall_bound(ex.schedule, pr.K, pr.alpha, x0n, N);
  opt.x_N_provenance = Provenance::Derived;
  opt.x_n0_norm = gronwall_bound(ex.schedule, pr.K, pr.alpha, x0n, ex.n0);
  opt.n_directions = ex.n_directions;
  opt.seed = ex.seed;
  opt.D = D;
  return build_report(pr, ex.schedule, ex.n0, opt);
}

//---------------------------------------------------------------------------//
// Domination
//---------------------------------------------------------------------------//

DominationResult check_domination(const SAProblem& problem, const StepSchedule& schedule, const BoundReport& report,
                                  const std::vector<double>& deltas, const Vector& x0, int y0, std::int64_t T,
                                  int n_trajectories, std::uint64_t seed, int workers) {
  if (!report.D) throw Error(Errc::InvalidArgument, "domination needs D");
  const Vector xs = x_star_of(problem);
  const std::int64_t n0 = report.n0;
  if (T <= n0) throw Error(Errc::BadRange, "horizon must exceed n0");
  const double alpha = report.alpha.value;
  const ScheduleTable table(schedule, T);
  std::vector<double> decay(static_cast<std::size_t>(T - n0 + 1));
  for (std::int64_t n = n0; n <= T; ++n) {
    decay[static_cast<std::size_t>(n - n0)] = std::exp(-(1.0 - alpha) * table.b_sum(n0, n));
  }

  SimulateOptions sim;
  sim.record_noise = false;
  sim.max_horizon = std::max<std::int64_t>(T, sim.max_horizon);
  auto first = run_indexed(static_cast<std::size_t>(n_trajectories), workers, [&](std::size_t i) {
    Trajectory tr = simulate(problem, schedule, x0, y0, T, derive_seed(seed, i), sim);
    const double d0 = norm(tr.x(n0) - xs, problem.norm);
    std::vector<std::int64_t> out(deltas.size(), -1);
    for (std::size_t q = 0; q < deltas.size(); ++q) {
      const double floor = (deltas[q] + report.a_n0 * report.c1.value) / (1.0 - alpha);
      for (std::int64_t n = n0 + 1; n <= T; ++n) {
        const double env = decay[static_cast<std::size_t>(n - n0)] * d0 + floor;
        if (norm(tr.x(n) - xs, problem.norm) > env) {
          out[q] = n;
          break;
        }
      }
    }
    return out;
  });

  DominationResult res;
  res.n_trajectories = n_trajectories;
  const double scale = 2.0 * report.dim;
  const double D = report.D->value;
  for (std::size_t q = 0; q < deltas.size(); ++q) {
    std::vector<std::int64_t> t;
    for (const auto& f : first) {
      if (f[q] >= 0) t.push_back(f[q]);
    }
    std::sort(t.begin(), t.end());
    const int p = tail_exponent(deltas[q], report.C.value);
    const double A = D * std::pow(deltas[q], p);
    long double s = 0.0L;
    std::int64_t m = n0 + 1;
    double worst = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < t.size(); ++k) {
      if (k + 1 < t.size() && t[k + 1] == t[k]) continue;
      for (; m <= t[k]; ++m) s += std::exp(-A / beta(report.d1, report.d2, n0, m));
      const double bound = std::min(1.0, static_cast<double>(scale * s));
      const double freq = static_cast<double>(k + 1) / n_trajectories;
      worst = std::max(worst, freq - bound);
    }
    if (t.empty()) worst = 0.0 - failure_bound(report, deltas[q], n0, T, false);
    res.worst_margin.push_back(worst);
    res.final_frequency.push_back(static_cast<double>(t.size()) / n_trajectories);
    if (worst > 0.0) res.ok = false;
  }
  return res;
}

//---------------------------------------------------------------------------//
// Commands
//---------------------------------------------------------------------------//

namespace {

std::optional<Tagged> resolve_D(const Experiment& ex, const BoundReport& report, std::ostream& log,
                                std::optional<CalibrationResult>* calibration = nullptr) {
  switch (ex.d_source) {
    case DSource::Value:
      return Tagged{ex.D, Provenance::User};
    case DSource::Calibrate: {
      CalibrationOptions opt;
      opt.x0 = ex.x0;
      opt.y0 = ex.y0;
      opt.workers = ex.workers;
      auto res = calibrate_D(ex.problem, ex.schedule, report, ex.deltas, ex.calib_trajectories, ex.T, ex.calib_seed,
                             opt);
      log << "calibrated D = " << res.D.value << (res.at_ceiling ? " (search ceiling)" : "") << '\n';
      if (calibration) *calibration = res;
      return res.D;
    }
    case DSource::None:
      break;
  }
  return std::nullopt;
}

ojson report_json(const BoundReport& r) {
  std::ostringstream os;
  write_report_json(os, r);
  return ojson::parse(os.str());
}

std::vector<std::int64_t> curve_grid(std::int64_t n0, std::int64_t T) {
  std::vector<std::int64_t> ns;
  const double lo = std::log(static_cast<double>(n0));
  const double hi = std::log(static_cast<double>(T));
  for (int k = 0; k <= 200; ++k) {
    const auto n = static_cast<std::int64_t>(std::llround(std::exp(lo + (hi - lo) * k / 200.0)));
    if (ns.empty() || n > ns.back()) ns.push_back(std::clamp(n, n0, T));
  }
  if (ns.back() != T) ns.push_back(T);
  return ns;
}

ojson experiment_json(const Experiment& ex) {
  ojson j;
  j["kind"] = ex.kind;
  j["schedule"] = ex.schedule.describe();
  j["n0"] = ex.n0;
  j["T"] = ex.T;
  j["n_trajectories"] = ex.n_trajectories;
  j["seed"] = ex.seed;
  j["deltas"] = ex.deltas;
  if (ex.q) {
    j["pi_min"] = {{"value", ex.q->pi_min.value}, {"provenance", std::string(to_string(ex.q->pi_min.provenance))}};
    j["tau"] = ex.q->tau;
    j["offline_policy"] = ex.q->fixed_policy.has_value();
  }
  if (ex.td) {
    j["lambda_M"] = td_lambda_M(*ex.td);
    j["admissibility_limit"] = td_admissibility_limit(ex.td->gamma);
    j["feature_rescale"] = ex.td_rescale;
  }
  if (ex.problem.x_star) {
    std::vector<double> xs(ex.problem.x_star->data(), ex.problem.x_star->data() + ex.problem.x_star->size());
    j["x_star"] = xs;
  }
  return j;
}

}  // namespace

int cmd_simulate(const Experiment& ex, std::ostream& log) {
  fs::create_directories(ex.out_dir);
  const SAProblem& pr = ex.problem;
  const Vector xs = x_star_of(pr);
  const BoundReport report =
      experiment_report(ex, ex.d_source == DSource::Value ? std::optional<Tagged>(Tagged{ex.D, Provenance::User})
                                                          : std::nullopt);
  const ScheduleTable table(ex.schedule, ex.T);
  const double alpha = report.alpha.value;
  if (ex.write_trajectories > 0) fs::create_directories(ex.out_dir / "trajectories");

  struct Row {
    std::uint64_t seed;
    double sup_dist;
    std::vector<bool> violated;
  };
  SimulateOptions sim;
  sim.max_horizon = std::max<std::int64_t>(ex.T, sim.max_horizon);
  auto rows = run_indexed(static_cast<std::size_t>(ex.n_trajectories), ex.workers, [&](std::size_t i) {
    const std::uint64_t seed = derive_seed(ex.seed, i);
    const bool dump = static_cast<int>(i) < ex.write_trajectories;
    SimulateOptions o = sim;
    o.record_noise = dump;
    Trajectory tr = simulate(pr, ex.schedule, ex.x0, ex.y0, ex.T, seed, o);
    Row row{seed, 0.0, std::vector<bool>(ex.deltas.size(), false)};
    const double d0 = norm(tr.x(ex.n0) - xs, pr.norm);
    for (std::int64_t n = ex.n0 + 1; n <= ex.T; ++n) {
      const double dist = norm(tr.x(n) - xs, pr.norm);
      row.sup_dist = std::max(row.sup_dist, dist);
      const double decay = std::exp(-(1.0 - alpha) * table.b_sum(ex.n0, n)) * d0;
      for (std::size_t q = 0; q < ex.deltas.size(); ++q) {
        const double env = decay + (ex.deltas[q] + report.a_n0 * report.c1.value) / (1.0 - alpha);
        if (dist > env) row.violated[q] = true;
      }
    }
    if (dump) {
      tr.zs = simulate_auxiliary(pr, ex.schedule, tr, ex.n0);
      tr.gammas = gamma_diagnostic(pr, ex.schedule, tr, ex.n0);
      tr.aux_n0 = ex.n0;
      auto out = open_out(ex.out_dir / "trajectories" / ("traj_" + std::to_string(i) + ".csv"));
      write_trajectory_csv(out, tr);
    }
    return row;
  });

  auto out = open_out(ex.out_dir / "summary.csv");
  out << "seed,delta,sup_dist_after_n0,envelope_violated\n";
  std::vector<int> count(ex.deltas.size(), 0);
  for (const Row& r : rows) {
    for (std::size_t q = 0; q < ex.deltas.size(); ++q) {
      out << r.seed << ',' << fmt(ex.deltas[q]) << ',' << fmt(r.sup_dist) << ',' << (r.violated[q] ? 1 : 0) << '\n';
      count[q] += r.violated[q] ? 1 : 0;
    }
  }
  for (std::size_t q = 0; q < ex.deltas.size(); ++q) {
    log << "delta=" << ex.deltas[q] << " violation frequency " << static_cast<double>(count[q]) / ex.n_trajectories;
    if (report.D) log << " (failure bound " << failure_bound(report, ex.deltas[q], ex.n0, ex.T, false) << ")";
    log << '\n';
  }
  write_run_readme(ex.out_dir, "simulate",
                   {"summary.csv: seed,delta,sup_dist_after_n0,envelope_violated",
                    "  seed: per-trajectory seed derived from the master seed and the trajectory index",
                    "  sup_dist_after_n0: max over n0 < n <= T of ||x_n - x*|| in the problem norm",
                    "  envelope_violated: 1 if ||x_n - x*|| exceeded the concentration envelope for this delta",
                    "trajectories/traj_<i>.csv (first write_trajectories runs): n,Y_n,x_1..x_d,z_1..z_d,Gamma",
                    "  z and Gamma are empty before n0"});
  return kExitOk;
}

int cmd_bound(const Experiment& ex, std::ostream& log) {
  if (ex.d_source == DSource::None) {
    throw Error(Errc::ConfigError, "[bound] D is not set; add `D = <value>` or `D = calibrate`");
  }
  fs::create_directories(ex.out_dir);
  BoundReport report = experiment_report(ex);
  std::optional<CalibrationResult> calib;
  report.D = resolve_D(ex, report, log, &calib);

  ojson j = report_json(report);
  j["experiment"] = experiment_json(ex);
  ojson branches = ojson::array();
  for (double delta : ex.deltas) {
    const int p = tail_exponent(delta, report.C.value);
    branches.push_back({{"delta", delta},
                        {"exponent", p},
                        {"branch", p == 2 ? "delta<=C" : "delta>C"},
                        {"failure_bound_T", failure_bound(report, delta, ex.n0, ex.T, false)},
                        {"failure_bound_all_n", failure_bound(report, delta, ex.n0, 0, true)}});
  }
  j["deltas"] = branches;

  // ||x_n0 - x*|| <= ||x_n0|| + ||x*|| with ||x_n0|| from the Gronwall bound.
  const double x_n0_dist =
      gronwall_bound(ex.schedule, ex.problem.K, ex.problem.alpha, norm(ex.x0, ex.problem.norm), ex.n0) +
      norm(x_star_of(ex.problem), ex.problem.norm);
  j["x_n0_dist_bound"] = x_n0_dist;
  if (ex.stitch) {
    const StitchConfig s = *ex.stitch;
    auto ups = [s](std::int64_t n) { return s.c / std::pow(static_cast<double>(n), s.exponent); };
    const StitchResult st = stitch(report, ex.schedule, ups, s.K_breve, s.nu, s.eps, s.delta);
    j["stitch"] = {{"c", s.c},
                   {"exponent", s.exponent},
                   {"K_breve", s.K_breve},
                   {"nu", s.nu},
                   {"eps", s.eps},
                   {"delta", s.delta},
                   {"n0", st.n0},
                   {"n1", st.n1},
                   {"chebyshev_n0", st.chebyshev_n0},
                   {"moment_ratio", st.moment_ratio},
                   {"tail", st.tail},
                   {"envelope_n1", st.envelope_n1},
                   {"floor", st.floor}};
    log << "stitch: n0 = " << st.n0 << ", n1 = " << st.n1 << '\n';
  }
  write_json(ex.out_dir / "report.json", j);
  {
    auto out = open_out(ex.out_dir / "curves.csv");
    write_curves_csv(out, report, ex.schedule, ex.deltas, curve_grid(ex.n0, ex.T), x_n0_dist);
  }
  log << "alpha = " << fmt(report.alpha.value) << " (" << to_string(report.alpha.provenance) << ")\n";
  log << "c1 = " << report.c1.value << ", c2 = " << report.c2.value << ", C = " << report.C.value
      << ", D = " << report.D->value << " (" << to_string(report.D->provenance) << ")\n";
  write_run_readme(
      ex.out_dir, "bound",
      {"report.json: constants with provenance tags (declared, user, estimated, optimistic, calibrated, derived),",
       "  per-delta tail branch, the experiment description and the optional stitch result",
       "curves.csv: n,delta,envelope,failure_bound on a log-spaced grid from n0 to T",
       "  envelope uses x_n0_dist_bound from report.json as ||x_n0 - x*||"});
  return kExitOk;
}

int cmd_calibrate(const Experiment& ex, std::ostream& log) {
  fs::create_directories(ex.out_dir);
  const BoundReport report = experiment_report(ex);
  CalibrationOptions opt;
  opt.x0 = ex.x0;
  opt.y0 = ex.y0;
  opt.workers = ex.workers;
  auto res = calibrate_D(ex.problem, ex.schedule, report, ex.deltas, ex.calib_trajectories, ex.T, ex.calib_seed, opt);
  ojson j;
  j["D"] = res.D.value;
  j["provenance"] = std::string(to_string(res.D.provenance));
  j["at_ceiling"] = res.at_ceiling;
  j["ceiling"] = opt.D_ceiling;
  j["deltas"] = res.deltas;
  j["n_trajectories"] = res.n_trajectories;
  j["T"] = res.T;
  j["n0"] = ex.n0;
  j["seed"] = res.seed;
  j["C"] = number(report.C.value);
  j["experiment"] = experiment_json(ex);
  ojson freq = ojson::array();
  for (std::size_t q = 0; q < res.deltas.size(); ++q) {
    const auto hits = std::count_if(res.first_passage[q].begin(), res.first_passage[q].end(),
                                    [](std::int64_t t) { return t >= 0; });
    freq.push_back({{"delta", res.deltas[q]}, {"passage_frequency", static_cast<double>(hits) / res.n_trajectories}});
  }
  j["first_passage"] = freq;
  write_json(ex.out_dir / "D.json", j);
  log << "D = " << fmt(res.D.value) << (res.at_ceiling ? " (search ceiling)" : "") << '\n';
  write_run_readme(ex.out_dir, "calibrate-d",
                   {"D.json: calibrated D with the seeds, trajectory count, horizon and deltas used;",
                    "  passage_frequency is the fraction of runs whose running max of Gamma reached delta"});
  return kExitOk;
}

int cmd_verify(const Experiment& ex, std::ostream& log) {
  fs::create_directories(ex.out_dir);
  const SAProblem& pr = ex.problem;
  const Vector xs = x_star_of(pr);
  ojson checks = ojson::array();
  bool all_ok = true;
  auto add = [&](const std::string& name, const std::string& status, double measured, double threshold,
                 const std::string& note) {
    if (status == "fail") all_ok = false;
    checks.push_back({{"name", name},
                      {"status", status},
                      {"measured", number(measured)},
                      {"threshold", number(threshold)},
                      {"note", note}});
    log << std::left << std::setw(28) << name << ' ' << std::setw(12) << status << " measured=" << measured
        << " threshold=" << threshold << '\n';
  };
  auto pf = [](bool ok) { return std::string(ok ? "pass" : "fail"); };

  const std::int64_t N = certify_N(ex.schedule);
  const double x0n = norm(ex.x0, pr.norm);
  double radius = std::max(1.0, gronwall_bound(ex.schedule, pr.K, pr.alpha, x0n, N) + pr.K / (1.0 - pr.alpha));
  if (const auto cap = invariant_radius(ex)) radius = std::min(radius, *cap);

  const ProblemCheck pc = check_problem(pr, 2000, radius, derive_seed(ex.seed, 0xc4ec));
  add("contraction", pf(pc.contraction_ok), pc.contraction_ratio, pr.alpha, "sampled pairs in the working ball");
  add("fixed_point_mean_field", pf(pc.fixed_point_ok), pc.fixed_point_residual, 1e-9 * std::max(1.0, xs.cwiseAbs().maxCoeff()),
      "sum_i pi(i) F(x*, i) - x*");
  add("envelope_assumption", pf(pc.envelope_ok), pc.envelope_excess, 0.0, "||F + M|| - (K + alpha ||x||)");
  add("noise_bound", pf(pc.noise_bound_ok), pc.noise_bound_excess, 0.0, "|M^l| - K0 (1 + ||x||)");
  add("noise_zero_mean", pf(pc.zero_mean_ok), pc.noise_mean_z, pc.noise_mean_threshold, "max z-score of sample means");

  {
    Rng rng(derive_seed(ex.seed, 0x9015));
    double worst = 0.0;
    bool pinned_zero = true;
    for (int t = 0; t < 64; ++t) {
      const Vector x = sample_in_ball(rng, pr.dim, radius, pr.norm);
      const FiniteChain ch = pr.chain.chain_at(x);
      const Matrix f = pr.f_values(x);
      const PoissonSolution sol = poisson_solve(ch, f, pr.pinned_state);
      worst = std::max(worst, poisson_residual(ch, f, sol.V));
      if (sol.V.row(pr.pinned_state).cwiseAbs().maxCoeff() != 0.0) pinned_zero = false;
    }
    add("poisson_residual", pf(worst <= 1e-9 && pinned_zero), worst, 1e-9, "64 sampled iterates");
  }

  if (ex.q) {
    const Matrix& Q = ex.q->Q_star;
    const double res = (bellman(ex.q->mdp, Q) - Q).cwiseAbs().maxCoeff();
    add("bellman_residual", pf(res <= 1e-10), res, 1e-10, "value-iteration Q*");
  }
  if (ex.td) {
    const double res = td_fixed_point_residual(*ex.td, xs);
    add("projected_fixed_point", pf(res <= 1e-9), res, 1e-9, "H(Phi r*) - Phi r*");
  }

  // Pathwise envelope and end-point convergence share one campaign.
  SimulateOptions sim;
  sim.record_noise = false;
  sim.max_horizon = std::max<std::int64_t>(ex.T, sim.max_horizon);
  const double tol = 0.05 * problem_scale(ex);
  struct Run {
    std::int64_t violations;
    double margin;
    double final_dist;
  };
  auto runs = run_indexed(static_cast<std::size_t>(ex.n_trajectories), ex.workers, [&](std::size_t i) {
    Trajectory tr = simulate(pr, ex.schedule, ex.x0, ex.y0, ex.T, derive_seed(ex.seed, i), sim);
    const EnvelopeCheck ec = iterate_envelope_check(pr, tr, N);
    return Run{ec.violations, ec.worst_margin, norm(tr.x(ex.T) - xs, pr.norm)};
  });
  std::int64_t violations = 0;
  double margin = -std::numeric_limits<double>::infinity();
  int converged = 0;
  for (const Run& r : runs) {
    violations += r.violations;
    margin = std::max(margin, r.margin);
    converged += r.final_dist < tol ? 1 : 0;
  }
  add("iterate_envelope", pf(violations == 0), margin, 0.0,
      std::to_string(violations) + " violations over " + std::to_string(ex.n_trajectories) + " runs");
  {
    const double frac = static_cast<double>(converged) / ex.n_trajectories;
    std::string status = "pass";
    std::string note = "fraction with ||x_T - x*|| < " + fmt(tol);
    if (frac < 0.95) {
      // The contraction alone cannot shrink the initial error below tol by T:
      // the horizon is too short to call this a failure.
      const double reach = std::exp(-(1.0 - pr.alpha) * b_sum(ex.schedule, N, ex.T)) * (norm(ex.x0 - xs, pr.norm) + tol);
      status = reach > tol ? "inconclusive" : "fail";
      if (status == "inconclusive") note += "; horizon too short for the contraction factor";
    }
    add("convergence", status, frac, 0.95, note);
  }

  {
    BoundReport report = experiment_report(ex);
    std::optional<Tagged> D;
    if (ex.d_source == DSource::Value) {
      D = Tagged{ex.D, Provenance::User};
    } else {
      CalibrationOptions opt;
      opt.x0 = ex.x0;
      opt.y0 = ex.y0;
      opt.workers = ex.workers;
      D = calibrate_D(pr, ex.schedule, report, ex.deltas, std::max(ex.calib_trajectories, 100), ex.T, ex.calib_seed,
                      opt)
              .D;
    }
    report.D = D;
    const auto dom = check_domination(pr, ex.schedule, report, ex.deltas, ex.x0, ex.y0, ex.T, ex.n_trajectories,
                                      derive_seed(ex.seed, 0xd0e1), ex.workers);
    double worst = -std::numeric_limits<double>::infinity();
    for (double w : dom.worst_margin) worst = std::max(worst, w);
    add("bound_domination", pf(dom.ok), worst, 0.0,
        "max over delta and n of violation frequency minus failure bound (D = " + fmt(D->value) + ")");
  }

  ojson j;
  j["experiment"] = experiment_json(ex);
  j["checks"] = checks;
  j["overall"] = all_ok ? "pass" : "fail";
  write_json(ex.out_dir / "verify.json", j);
  write_run_readme(ex.out_dir, "verify",
                   {"verify.json: one entry per invariant with status pass, fail or inconclusive,",
                    "  the measured value and the threshold it is compared against"});
  log << "overall: " << (all_ok ? "pass" : "fail") << '\n';
  return all_ok ? kExitOk : kExitInvariant;
}

//---------------------------------------------------------------------------//
// CLI
//---------------------------------------------------------------------------//

namespace {

int exit_code_for(Errc code) {
  switch (code) {
    case Errc::Infeasible:
    case Errc::Inadmissible:
    case Errc::NoFeasibleD:
      return kExitInfeasible;
    case Errc::ConfigError:
    case Errc::ParseError:
    case Errc::BadRange:
    case Errc::InvalidArgument:
    case Errc::IndexOutOfRange:
    case Errc::NotStochastic:
    case Errc::NotIrreducible:
    case Errc::NoCertificate:
      return kExitConfig;
    default:
      return kExitInvariant;
  }
}

}  // namespace

int run_lab(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Concentration bounds for Markov-modulated stochastic approximation", "sacon_lab"};
  app.require_subcommand(1);
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  for (const char* name : {"simulate", "bound", "calibrate-d", "verify"}) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "experiment config file")->required();
    sub->add_option("--seed", seed, "master seed override");
    sub->add_option("--out", out_dir, "output directory override");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e, out, err);
    return rc == 0 ? kExitOk : kExitConfig;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  try {
    Config config = Config::load(config_path);
    Overrides ov;
    ov.seed = seed;
    if (out_dir) ov.out = fs::path(*out_dir);
    const Experiment ex = make_experiment(config, ov);
    if (command == "simulate") return cmd_simulate(ex, out);
    if (command == "bound") return cmd_bound(ex, out);
    if (command == "calibrate-d") return cmd_calibrate(ex, out);
    return cmd_verify(ex, out);
  } catch (const Error& e) {
    err << "sacon_lab " << command << ": " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const fs::filesystem_error& e) {
    err << "sacon_lab " << command << ": " << e.what() << '\n';
    return kExitConfig;
  }
}

}  // namespace sacon
