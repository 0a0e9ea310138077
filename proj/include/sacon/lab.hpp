// Copyright 2026 The sacon Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Experiment configs and the simulate / bound / calibrate-d / verify commands.
#pragma once

#include "sacon/bounds.hpp"
#include "sacon/rl.hpp"
#include "sacon/sa_engine.hpp"
#include "sacon/schedule.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace sacon {

enum ExitCode : int { kExitOk = 0, kExitInvariant = 1, kExitConfig = 2, kExitInfeasible = 3 };

/// Flat `key = value` text with `[section]` headers; `#` starts a comment.
class Config {
 public:
  static Config parse(std::istream& in, const std::string& source);
  static Config load(const std::filesystem::path& path);

  bool has(const std::string& section, const std::string& key) const;
  std::optional<std::string> get(const std::string& section, const std::string& key) const;
  std::string require(const std::string& section, const std::string& key) const;
  std::string get_or(const std::string& section, const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& section, const std::string& key, double fallback) const;
  std::int64_t get_int(const std::string& section, const std::string& key, std::int64_t fallback) const;
  bool get_bool(const std::string& section, const std::string& key, bool fallback) const;
  /// Comma- or space-separated reals.
  std::vector<double> get_list(const std::string& section, const std::string& key) const;
  /// `key=value` pairs of a whole section joined by spaces.
  std::string section_descriptor(const std::string& section) const;
  /// Path relative to the config file's directory.
  std::filesystem::path path(const std::string& section, const std::string& key) const;

  void set(const std::string& section, const std::string& key, const std::string& value);
  /// Throws ConfigError naming the first key that nothing read.
  void reject_unused() const;

  const std::string& source() const { return source_; }

 private:
  struct Entry {
    std::string value;
    int line = 0;
  };
  [[noreturn]] void fail(const std::string& section, const std::string& key, const std::string& msg) const;
  const Entry* find(const std::string& section, const std::string& key) const;

  std::string source_;
  std::filesystem::path base_dir_;
  std::map<std::string, std::map<std::string, Entry>> data_;
  mutable std::set<std::string> used_;
};

enum class DSource { None, Value, Calibrate };

struct StitchConfig {
  double c = 1.0;         // upsilon(n) = c / n^exponent
  double exponent = 0.5;
  double K_breve = 1.0;
  double nu = 0.05;
  double eps = 1.0;
  double delta = 0.1;
};

struct Experiment {
  std::string kind;  // synthetic | qlearning | td0
  SAProblem problem;
  StepSchedule schedule;
  std::optional<QLearningInstance> q;
  std::optional<TDInstance> td;
  double td_rescale = 1.0;

  std::int64_t n0 = 1;
  std::int64_t T = 1000;
  int n_trajectories = 100;
  std::uint64_t seed = 1;
  Vector x0;
  int y0 = 0;
  int write_trajectories = 0;

  std::vector<double> deltas;
  DSource d_source = DSource::None;
  double D = 0.0;
  int calib_trajectories = 200;
  std::uint64_t calib_seed = 0;  // 0: derived from seed
  int n_directions = 500;
  std::optional<StitchConfig> stitch;

  std::filesystem::path out_dir;
  int workers = 1;
};

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out;
};

/// Builds the problem and run parameters; every failure is a ConfigError.
Experiment make_experiment(const Config& config, const Overrides& overrides = {});

/// Bound report with ||x_N|| from the Gronwall bound started at x0.
BoundReport experiment_report(const Experiment& ex, std::optional<Tagged> D = std::nullopt);

struct DominationResult {
  int n_trajectories = 0;
  /// Per delta: max over n of empirical violation frequency minus failure bound.
  std::vector<double> worst_margin;
  std::vector<double> final_frequency;
  bool ok = true;
};

/// Runs fresh trajectories and compares the frequency of
/// {exists m in (n0, n]: ||x_m - x*|| > envelope(m)} with failure_bound(n) for
/// every n <= T.
DominationResult check_domination(const SAProblem& problem, const StepSchedule& schedule, const BoundReport& report,
                                  const std::vector<double>& deltas, const Vector& x0, int y0, std::int64_t T,
                                  int n_trajectories, std::uint64_t seed, int workers);

int cmd_simulate(const Experiment& ex, std::ostream& log);
int cmd_bound(const Experiment& ex, std::ostream& log);
int cmd_calibrate(const Experiment& ex, std::ostream& log);
int cmd_verify(const Experiment& ex, std::ostream& log);

/// Entry point shared by the CLI and tests.
int run_lab(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace sacon
