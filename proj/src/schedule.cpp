// Copyright 2026 The sacon Authors.
// SPDX-License-Identifier: Apache-2.0
#include "sacon/schedule.hpp"

#include "sacon/error.hpp"

#include <boost/math/special_functions/digamma.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace sacon {

namespace {

void check_tail(double d3, double d2, bool allow_constant) {
  if (!(d3 > 0.0) || !std::isfinite(d3)) throw Error(Errc::InvalidArgument, "d3 must be positive");
  double lo = allow_constant ? 0.0 : std::nextafter(0.0, 1.0);
  if (!(d2 >= lo && d2 <= 1.0)) throw Error(Errc::InvalidArgument, "d2 must lie in (0, 1]");
}

void check_d1(double d1) {
  if (!(d1 > 0.0) || !std::isfinite(d1)) throw Error(Errc::InvalidArgument, "d1 must be positive");
}

double power_value(double d3, double d2, std::int64_t n) {
  return d3 / std::pow(static_cast<double>(n) + 1.0, d2);
}

/// Smallest n >= 1 with pred(n) true, assuming pred is monotone false->true.
/// Returns -1 when pred fails at the horizon.
template <class Pred>
std::int64_t first_true(Pred pred, std::int64_t horizon) {
  if (pred(1)) return 1;
  std::int64_t lo = 1;
  std::int64_t hi = 2;
  while (!pred(hi)) {
    if (hi >= horizon) return -1;
    lo = hi;
    hi = std::min(horizon, hi * 2);
  }
  while (hi - lo > 1) {
    std::int64_t mid = lo + (hi - lo) / 2;
    (pred(mid) ? hi : lo) = mid;
  }
  return hi;
}

/// N for the power form d3/(n+1)^{d2} with lower constant d1, from index 1.
std::int64_t power_certificate(double d1, double d2, double d3, std::int64_t horizon) {
  if (d2 <= 0.0) return -1;
  auto below_one = [&](std::int64_t n) { return power_value(d3, d2, n) < 1.0; };
  auto lower_ok = [&](std::int64_t n) { return d1 / static_cast<double>(n) <= power_value(d3, d2, n); };
  std::int64_t n_dagger = below_one(0) ? 0 : first_true(below_one, horizon);
  std::int64_t n_lower = first_true(lower_ok, horizon);
  if (n_dagger < 0 || n_lower < 0) return -1;
  return std::max<std::int64_t>({1, n_dagger, n_lower});
}

std::vector<double> read_table_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::ConfigError, "cannot open schedule table '" + path + "'");
  std::vector<double> values;
  std::string line;
  while (std::getline(in, line)) {
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    double v;
    while (ls >> v) values.push_back(v);
    if (!ls.eof()) throw Error(Errc::ParseError, "non-numeric entry in schedule table '" + path + "'");
  }
  return values;
}

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> values;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, ',')) {
    try {
      values.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw Error(Errc::ParseError, "bad table value '" + item + "'");
    }
  }
  return values;
}

}  // namespace

StepSchedule StepSchedule::harmonic(double b) { return harmonic(b, 0.5 * b); }

StepSchedule StepSchedule::harmonic(double b, double d1) {
  check_tail(b, 1.0, false);
  check_d1(d1);
  StepSchedule s;
  s.rule_ = ScheduleRule::Harmonic;
  s.d3_ = b;
  s.d2_ = 1.0;
  s.d1_ = d1;
  return s;
}

StepSchedule StepSchedule::power(double d3, double d2) { return power(d3, d2, d3 * std::pow(2.0, -d2)); }

StepSchedule StepSchedule::power(double d3, double d2, double d1) {
  check_tail(d3, d2, false);
  check_d1(d1);
  StepSchedule s;
  s.rule_ = ScheduleRule::Power;
  s.d3_ = d3;
  s.d2_ = d2;
  s.d1_ = d1;
  return s;
}

StepSchedule StepSchedule::table(std::vector<double> prefix, double tail_d3, double tail_d2) {
  return table(std::move(prefix), tail_d3, tail_d2, tail_d3 * std::pow(2.0, -tail_d2));
}

StepSchedule StepSchedule::table(std::vector<double> prefix, double tail_d3, double tail_d2, double d1) {
  check_tail(tail_d3, tail_d2, true);
  check_d1(d1);
  for (double v : prefix) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw Error(Errc::InvalidArgument, "step sizes must be nonnegative");
  }
  StepSchedule s;
  s.rule_ = ScheduleRule::Table;
  s.prefix_ = std::move(prefix);
  s.d3_ = tail_d3;
  s.d2_ = tail_d2;
  s.d1_ = d1;
  return s;
}

StepSchedule StepSchedule::parse(std::string_view descriptor) {
  std::map<std::string, std::string> kv;
  std::istringstream in{std::string(descriptor)};
  std::string token;
  while (in >> token) {
    auto eq = token.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw Error(Errc::ParseError, "schedule token '" + token + "' is not key=value");
    }
    kv[token.substr(0, eq)] = token.substr(eq + 1);
  }
  auto num = [&](const std::string& key) -> double {
    auto it = kv.find(key);
    if (it == kv.end()) throw Error(Errc::ParseError, "schedule descriptor missing '" + key + "'");
    try {
      std::size_t used = 0;
      double v = std::stod(it->second, &used);
      if (used != it->second.size()) throw std::invalid_argument(key);
      return v;
    } catch (const std::exception&) {
      throw Error(Errc::ParseError, "schedule field '" + key + "' is not a number");
    }
  };
  auto has = [&](const std::string& key) { return kv.count(key) > 0; };

  const std::string rule = has("rule") ? kv["rule"] : "";
  if (rule == "harmonic") {
    return has("d1") ? harmonic(num("b"), num("d1")) : harmonic(num("b"));
  }
  if (rule == "power") {
    return has("d1") ? power(num("d3"), num("d2"), num("d1")) : power(num("d3"), num("d2"));
  }
  if (rule == "table") {
    std::vector<double> prefix;
    if (has("file")) {
      prefix = read_table_file(kv["file"]);
    } else if (has("values")) {
      prefix = parse_list(kv["values"]);
    } else {
      throw Error(Errc::ParseError, "table schedule needs file= or values=");
    }
    if (prefix.empty()) throw Error(Errc::ParseError, "table schedule has no entries");
    // Default tail continues harmonically from the last prefix entry.
    double d2 = has("tail_d2") ? num("tail_d2") : 1.0;
    double d3 = has("tail_d3") ? num("tail_d3")
                               : prefix.back() * std::pow(static_cast<double>(prefix.size()), d2);
    return has("d1") ? table(std::move(prefix), d3, d2, num("d1")) : table(std::move(prefix), d3, d2);
  }
  throw Error(Errc::ParseError, "unknown schedule rule '" + rule + "'");
}

std::string StepSchedule::describe() const {
  std::ostringstream out;
  out.precision(17);
  switch (rule_) {
    case ScheduleRule::Harmonic: out << "rule=harmonic b=" << d3_ << " d1=" << d1_; break;
    case ScheduleRule::Power: out << "rule=power d3=" << d3_ << " d2=" << d2_ << " d1=" << d1_; break;
    case ScheduleRule::Table:
      out << "rule=table prefix_len=" << prefix_.size() << " tail_d3=" << d3_ << " tail_d2=" << d2_
          << " d1=" << d1_;
      break;
  }
  return out.str();
}

double StepSchedule::a(std::int64_t n) const {
  if (n < 0) throw Error(Errc::BadRange, "step index must be nonnegative");
  switch (rule_) {
    case ScheduleRule::Harmonic: return d3_ / (static_cast<double>(n) + 1.0);
    case ScheduleRule::Power: return power_value(d3_, d2_, n);
    case ScheduleRule::Table:
      if (static_cast<std::size_t>(n) < prefix_.size()) return prefix_[static_cast<std::size_t>(n)];
      return power_value(d3_, d2_, n);
  }
  return 0.0;
}

std::int64_t certify_N(const StepSchedule& s, std::int64_t horizon) {
  std::int64_t tail = power_certificate(s.d1(), s.d2(), s.d3(), horizon);
  if (tail < 0) throw Error(Errc::NoCertificate, "envelope conditions fail past horizon for " + s.describe());
  if (s.rule() != ScheduleRule::Table) return tail;

  const auto len = static_cast<std::int64_t>(s.prefix().size());
  std::int64_t last_bad = 0;
  for (std::int64_t n = 1; n <= len; ++n) {
    double an = s.a(n);
    bool ok = an < 1.0 && s.a(n + 1) <= an && s.d1() / static_cast<double>(n) <= an &&
              an <= s.d3() * std::pow(static_cast<double>(n), -s.d2());
    if (!ok) last_bad = n;
  }
  std::int64_t n_cert = std::max(tail, last_bad + 1);
  if (n_cert > horizon) {
    throw Error(Errc::NoCertificate, "table prefix violates the envelope up to index " + std::to_string(last_bad));
  }
  return n_cert;
}

double b_sum(const StepSchedule& s, std::int64_t k, std::int64_t n) {
  if (k < 0 || k > n) throw Error(Errc::BadRange, "b_sum needs 0 <= k <= n");
  if (s.rule() == ScheduleRule::Harmonic && n - k > 100'000) {
    // sum_{m=k}^{n} b/(m+1) = b (digamma(n+2) - digamma(k+1))
    return s.b() * (boost::math::digamma(static_cast<double>(n) + 2.0) -
                    boost::math::digamma(static_cast<double>(k) + 1.0));
  }
  long double acc = 0.0L;
  for (std::int64_t m = k; m <= n; ++m) acc += s.a(m);
  return static_cast<double>(acc);
}

double beta(double d1, double d2, std::int64_t k, std::int64_t n) {
  if (k < 1 || k > n) throw Error(Errc::BadRange, "beta needs 1 <= k <= n");
  const double kd = static_cast<double>(k);
  const double nd = static_cast<double>(n);
  if (d1 <= d2) return std::pow(kd, -(d2 - d1)) * std::pow(nd, -d1);
  return std::pow(nd, -d2);
}

double beta(const StepSchedule& s, std::int64_t k, std::int64_t n) { return beta(s.d1(), s.d2(), k, n); }

namespace {

template <class Factor>
double log_product(std::int64_t first, std::int64_t last, Factor factor) {
  if (last < first) return 1.0;
  long double log_sum = 0.0L;
  for (std::int64_t k = first; k <= last; ++k) {
    double step = factor(k);
    if (step >= 1.0) {
      // Non-positive factor present; fall back to the direct product.
      long double prod = 1.0L;
      for (std::int64_t j = first; j <= last; ++j) prod *= 1.0L - factor(j);
      return static_cast<double>(prod);
    }
    log_sum += std::log1p(-static_cast<long double>(step));
  }
  return static_cast<double>(std::exp(log_sum));
}

}  // namespace

double chi(const StepSchedule& s, std::int64_t n, std::int64_t m) {
  if (n < 0 || m < 0) throw Error(Errc::BadRange, "chi indices must be nonnegative");
  return log_product(m, n, [&](std::int64_t k) { return s.a(k); });
}

double psi(const StepSchedule& s, double alpha, std::int64_t n, std::int64_t m) {
  if (n < 0 || m < 0) throw Error(Errc::BadRange, "psi indices must be nonnegative");
  const double c = 1.0 - alpha;
  return log_product(m, n - 1, [&](std::int64_t k) { return c * s.a(k); });
}

ScheduleTable::ScheduleTable(const StepSchedule& s, std::int64_t horizon) {
  if (horizon < 0) throw Error(Errc::BadRange, "horizon must be nonnegative");
  const auto len = static_cast<std::size_t>(horizon) + 1;
  a_.resize(len);
  sum_a_.assign(len + 1, 0.0L);
  sum_log_.assign(len + 1, 0.0L);
  nonpos_.assign(len + 1, 0);
  for (std::size_t k = 0; k < len; ++k) {
    a_[k] = s.a(static_cast<std::int64_t>(k));
    sum_a_[k + 1] = sum_a_[k] + a_[k];
    bool bad = a_[k] >= 1.0;
    sum_log_[k + 1] = sum_log_[k] + (bad ? 0.0L : std::log1p(-static_cast<long double>(a_[k])));
    nonpos_[k + 1] = nonpos_[k] + (bad ? 1 : 0);
  }
}

double ScheduleTable::b_sum(std::int64_t k, std::int64_t n) const {
  if (k < 0 || k > n || n > horizon()) throw Error(Errc::BadRange, "b_sum range outside table");
  return static_cast<double>(sum_a_[static_cast<std::size_t>(n) + 1] - sum_a_[static_cast<std::size_t>(k)]);
}

double ScheduleTable::chi(std::int64_t n, std::int64_t m) const {
  if (n < m) return 1.0;
  if (m < 0 || n > horizon()) throw Error(Errc::BadRange, "chi range outside table");
  const auto hi = static_cast<std::size_t>(n) + 1;
  const auto lo = static_cast<std::size_t>(m);
  if (nonpos_[hi] != nonpos_[lo]) {
    long double prod = 1.0L;
    for (std::size_t k = lo; k < hi; ++k) prod *= 1.0L - a_[k];
    return static_cast<double>(prod);
  }
  return static_cast<double>(std::exp(sum_log_[hi] - sum_log_[lo]));
}

}  // namespace sacon
