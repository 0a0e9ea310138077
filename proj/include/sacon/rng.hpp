// Copyright 2026 The sacon Authors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Core>

namespace sacon {

/// Mix a master seed with a stream index (splitmix64 finaliser) so that every
/// trajectory owns an independent stream regardless of scheduling order.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform on [0, 1) with 53 random bits; bit-identical across platforms.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal() { return normal_(engine_); }
  std::uint64_t bits() { return engine_(); }

  /// Draw an index from an unnormalised-safe probability row (sums to ~1).
  int categorical(const Eigen::Ref<const Eigen::RowVectorXd>& probs);

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_;
};

}  // namespace sacon
