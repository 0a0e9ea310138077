// Copyright 2026 The sacon Authors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string_view>

namespace sacon {

/// Where a reported number came from.
enum class Provenance {
  Declared,    // supplied by the user as a known constant
  User,        // supplied by the user without further justification (D)
  Estimated,   // sampled; a lower bound of a supremum
  Optimistic,  // derived from an estimate whose direction favours the bound
  Calibrated,  // fitted to Monte-Carlo data
  Derived,     // closed form from other quantities
};

std::string_view to_string(Provenance p);

struct Tagged {
  double value = 0.0;
  Provenance provenance = Provenance::Derived;
};

}  // namespace sacon
