// Copyright 2026 The sacon Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Asynchronous Q-learning and TD(0) with linear features, cast as
// Markov-modulated stochastic approximation problems.
#pragma once

#include "sacon/markov.hpp"
#include "sacon/sa_engine.hpp"
#include "sacon/tagged.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>

namespace sacon {

/// Finite controlled chain. Row i*r+u of `p` holds p(.|i,u); k is s x r.
struct MDP {
  int s = 0;
  int r = 0;
  Matrix p;
  Matrix k;
  double gamma = 0.5;

  int n_pairs() const { return s * r; }
  int pair(int i, int u) const { return i * r + u; }
};

/// Checks shapes, row sums (1e-12), k >= 0 and gamma in [0, 1).
void validate_mdp(const MDP& mdp);

/// (gQ)(i,u) = k(i,u) + gamma sum_j p(j|i,u) min_a Q(j,a).
Matrix bellman(const MDP& mdp, const Matrix& Q);

/// Value iteration until the sup-norm Bellman residual is at most tol.
Matrix q_value_iteration(const MDP& mdp, double tol = 1e-12, int max_iter = 1'000'000);

/// Row-major flattening over (state, action).
Vector flatten_q(const Matrix& Q);
Matrix unflatten_q(const Vector& x, int s, int r);

Matrix q_learning_step(const MDP& mdp, const Matrix& Q, int i, int u, int j, double a_n);

/// Phi_Q(u|i) proportional to exp(-Q(i,u)/tau).
Matrix softmax_policy(const Matrix& Q, double tau);

/// Joint (state, action) kernel p(i'|i,u) * policy(u'|i').
Matrix joint_transition(const MDP& mdp, const Matrix& policy);

struct QLearningInstance {
  MDP mdp;
  double tau = 1.0;
  /// When set the behaviour policy ignores Q (offline Q-learning).
  std::optional<Matrix> fixed_policy;
  Tagged pi_min{0.0, Provenance::Estimated};
  Matrix Q_star;

  double K() const;
  /// 1 - (1 - gamma) pi_min; optimistic unless pi_min was declared.
  Tagged alpha() const;
  Matrix policy(const Matrix& Q) const;
};

struct PiMinEstimate {
  double value = 0.0;
  int samples = 0;
  bool low_confidence = false;
};

/// Minimum over sampled Q with ||Q||_inf <= radius of min_{i,u} pi_Q(i,u).
PiMinEstimate estimate_pi_min(const QLearningInstance& instance, double radius, int n_samples, std::uint64_t seed);

struct QLearningOptions {
  double tau = 1.0;
  std::optional<Matrix> fixed_policy;
  std::optional<double> declared_pi_min;
  int pi_min_samples = 256;
  std::uint64_t seed = 1;
};

/// Validates the MDP, solves for Q* and fills pi_min.
QLearningInstance make_q_instance(const MDP& mdp, const QLearningOptions& options);

SAProblem q_as_sa_problem(const QLearningInstance& instance);

MDP read_mdp(std::istream& in);
MDP load_mdp(const std::string& path);
void write_mdp(std::ostream& out, const MDP& mdp);

//---------------------------------------------------------------------------//
// TD(0)
//---------------------------------------------------------------------------//

struct TDInstance {
  FiniteChain chain;
  Vector k;
  double gamma = 0.5;
  Matrix Phi;  // s x M
};

/// Checks shapes, gamma and full column rank of Phi.
void validate_td(const TDInstance& td);

/// Largest singular value of Phi^T sqrt(D).
double td_lambda_M(const TDInstance& td);
/// sqrt(2 (1 - gamma)) / (1 + gamma).
double td_admissibility_limit(double gamma);
bool td_admissible(const TDInstance& td);

double td_contraction_factor(const TDInstance& td);
Vector td_fixed_point(const TDInstance& td);

/// Pi x = Phi (Phi^T D Phi)^{-1} Phi^T D x.
Vector td_projection(const TDInstance& td, const Vector& x);
/// max |Pi(k + gamma P Phi r) - Phi r|.
double td_fixed_point_residual(const TDInstance& td, const Vector& r);

Vector td_step(const TDInstance& td, const Vector& r, int y, int y_next, double a_n);

/// Phi scaled by 0.99 * limit / lambda_M when inadmissible (factor 1 otherwise);
/// r* of the scaled instance is r* / factor.
struct RescaledTD {
  TDInstance td;
  double factor = 1.0;
};
RescaledTD rescale_features(const TDInstance& td);

SAProblem td_as_sa_problem(const TDInstance& td);

/// Whitespace-separated reals.
Vector read_vector(std::istream& in);
/// First line `rows cols`, then the entries row by row.
Matrix read_matrix(std::istream& in);
TDInstance load_td(const std::string& chain_path, const std::string& cost_path, const std::string& features_path,
                   double gamma);

}  // namespace sacon
