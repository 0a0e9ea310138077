// Copyright 2026 The sacon Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Finite Markov chain algebra: validation, stationary distributions, Poisson
// equations pinned at a reference state, fundamental matrices and hitting
// times, and sampled Lipschitz estimates for iterate-dependent kernels.
#pragma once

#include "sacon/linalg.hpp"
#include "sacon/tagged.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace sacon {

inline constexpr double kRowSumTolerance = 1e-9;
inline constexpr double kSupportThreshold = 1e-14;
inline constexpr double kPoissonTolerance = 1e-10;

/// A validated irreducible row-stochastic chain. Immutable; the stationary
/// distribution is computed on first use and shared between copies.
class FiniteChain {
 public:
  int n_states() const { return static_cast<int>(p_.rows()); }
  const Matrix& transition() const { return p_; }
  double p(int from, int to) const { return p_(from, to); }

  /// Stationary distribution (computed once, thread-safe).
  const Vector& pi() const;

 private:
  friend FiniteChain validate_chain(const Matrix& p);
  explicit FiniteChain(Matrix p);

  struct Cache {
    std::once_flag once;
    Vector pi;
  };

  Matrix p_;
  std::shared_ptr<Cache> cache_;
};

/// Checks stochasticity (rows within 1e-9 of one, then renormalised) and
/// irreducibility of the support graph.
FiniteChain validate_chain(const Matrix& p);

/// True when the positive-entry graph of p is strongly connected.
bool is_irreducible(const Matrix& p, double threshold = kSupportThreshold);

/// Solves pi (I - P) = 0 with the normalisation row appended.
Vector stationary_distribution(const FiniteChain& chain);
Vector stationary_distribution(const Matrix& p);

struct PoissonSolution {
  Matrix V;  // n_states x d, row i holds V(i)
  int pinned_state = 0;
  double residual = 0.0;
};

/// Factorises I - P^{-i0} once so that repeated solves against different
/// right-hand sides (one per iterate) stay cheap.
class PoissonSolver {
 public:
  PoissonSolver(const FiniteChain& chain, int pinned_state = 0);

  PoissonSolution solve(const Matrix& f_values) const;
  int pinned_state() const { return pinned_; }
  const FiniteChain& chain() const { return chain_; }

  /// (I - P^{-i0})^{-1} over the reduced state set, in increasing state order.
  Matrix fundamental_matrix() const;

 private:
  FiniteChain chain_;
  int pinned_;
  Eigen::PartialPivLU<Matrix> lu_;
};

PoissonSolution poisson_solve(const FiniteChain& chain, const Matrix& f_values, int pinned_state = 0);

/// Max-norm residual of V = f - pi.f + P V over every state.
double poisson_residual(const FiniteChain& chain, const Matrix& f_values, const Matrix& V);

/// Entry (a, b) is the expected number of visits to reduced state b starting
/// from reduced state a before the chain hits pinned_state.
Matrix fundamental_matrix(const FiniteChain& chain, int pinned_state = 0);

/// Mean hitting times of pinned_state from every other state, in increasing
/// state order (pinned_state omitted).
Vector hitting_time_vector(const FiniteChain& chain, int pinned_state = 0);

/// State indices with pinned_state removed, matching the reduced ordering.
std::vector<int> reduced_states(int n_states, int pinned_state);

/// Iterate-dependent kernel x -> P_x with Lipschitz metadata.
class ParamChain {
 public:
  using Kernel = std::function<Matrix(const Vector&)>;

  /// Kernel independent of x; L1 = L2 = 0 declared.
  static ParamChain constant(int dim, FiniteChain chain);
  static ParamChain from_kernel(int dim, int n_states, Kernel kernel);

  int dim() const { return dim_; }
  int n_states() const { return n_states_; }
  bool is_constant() const { return constant_.has_value(); }

  /// Raw transition matrix at x (not re-validated; use chain_at for that).
  Matrix transition_matrix(const Vector& x) const;
  FiniteChain chain_at(const Vector& x) const;
  /// Only valid when is_constant().
  const FiniteChain& constant_chain() const;

  Tagged L1() const { return l1_; }
  Tagged L2() const { return l2_; }
  void set_lipschitz(Tagged l1, Tagged l2) {
    l1_ = l1;
    l2_ = l2;
  }

 private:
  int dim_ = 0;
  int n_states_ = 0;
  Kernel kernel_;
  std::optional<FiniteChain> constant_;
  Tagged l1_{0.0, Provenance::Estimated};
  Tagged l2_{0.0, Provenance::Estimated};
};

struct KernelLipschitz {
  double L1 = 0.0;
  double L2 = 0.0;
  bool estimated = true;
};

/// Sampled lower bounds of the kernel and stationary-distribution Lipschitz
/// constants over the ball of the given radius.
KernelLipschitz estimate_kernel_lipschitz(const ParamChain& chain, double domain_radius, int n_samples,
                                          std::uint64_t seed, Norm kind = Norm::Sup);

/// Plain-text format: first line n_states, then n_states rows of probabilities.
FiniteChain read_chain(std::istream& in);
void write_chain(std::ostream& out, const FiniteChain& chain);
FiniteChain load_chain(const std::string& path);

}  // namespace sacon
