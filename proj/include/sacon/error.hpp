// Copyright 2026 The sacon Authors.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace sacon {

enum class Errc {
  InvalidArgument,
  BadRange,
  IndexOutOfRange,
  NotStochastic,
  NotIrreducible,
  SingularSystem,
  SingularReduced,
  EmptyDomain,
  NoCertificate,
  NonFiniteIterate,
  MissingNoiseLog,
  DivergentTail,
  NoFeasibleD,
  Infeasible,
  Inadmissible,
  NoConvergence,
  ConfigError,
  ParseError,
};

std::string_view to_string(Errc code);

/// Every failure raised by the library carries one of the codes above so that
/// callers (and the CLI exit-status mapping) can branch without string matching.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace sacon
