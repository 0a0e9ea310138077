// Copyright 2026 The sacon Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Contractive test problems with known fixed point:
//   F(x, i) = x* + A_i (x - x*),   A_i diagonal with entries in [0, alpha]
//   P_x = (1 - s(x)) B + s(x) C,   s(x) = tilt (1 + tanh(x_1 - x*_1)) / 2
//   M   = noise * U,               U uniform on [-1, 1]^d
#pragma once

#include "sacon/sa_engine.hpp"

#include <cstdint>
#include <optional>

namespace sacon {

struct SyntheticSpec {
  int dim = 2;
  int n_states = 3;
  double alpha = 0.6;
  double noise = 0.5;
  /// Weight of the secondary kernel; 0 gives a constant kernel. Must be < 1.
  double tilt = 0.2;
  Norm norm = Norm::Sup;
  std::optional<Vector> x_star;  // defaults to the all-ones vector
  std::uint64_t seed = 1;
  /// Base kernel B; drawn at random (irreducible, dense) when absent.
  std::optional<Matrix> base_chain;
};

/// Builds the problem together with K, K0, L3 and the declared L1 of the
/// kernel. The largest diagonal entry of the A_i equals alpha exactly.
SAProblem make_synthetic_problem(const SyntheticSpec& spec);

}  // namespace sacon
