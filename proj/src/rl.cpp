// Copyright 2026 The sacon Authors.
// SPDX-License-Identifier: Apache-2.0
#include "sacon/rl.hpp"

#include "sacon/error.hpp"
#include "sacon/rng.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <memory>
#include <ostream>
#include <sstream>
#include <vector>

namespace sacon {

namespace {

constexpr double kMdpRowTolerance = 1e-12;
constexpr double kTdResidualTolerance = 1e-9;

Vector row_minima(const Matrix& Q) { return Q.rowwise().minCoeff(); }

Matrix diag_pi(const Vector& pi) { return pi.asDiagonal(); }

std::istream& expect(std::istream& in, const char* what) {
  if (!in) throw Error(Errc::ParseError, std::string("could not read ") + what);
  return in;
}

}  // namespace

//---------------------------------------------------------------------------//
// MDP
//---------------------------------------------------------------------------//

void validate_mdp(const MDP& mdp) {
  if (mdp.s < 1 || mdp.r < 1) throw Error(Errc::InvalidArgument, "an MDP needs at least one state and one action");
  if (mdp.p.rows() != mdp.n_pairs() || mdp.p.cols() != mdp.s) {
    throw Error(Errc::InvalidArgument, "transition tensor must be (s*r) x s");
  }
  if (mdp.k.rows() != mdp.s || mdp.k.cols() != mdp.r) throw Error(Errc::InvalidArgument, "cost matrix must be s x r");
  if (!(mdp.gamma >= 0.0 && mdp.gamma < 1.0)) throw Error(Errc::BadRange, "gamma must lie in [0, 1)");
  if (!mdp.k.allFinite() || (mdp.k.array() < 0.0).any()) {
    throw Error(Errc::InvalidArgument, "costs must be finite and nonnegative");
  }
  if (!mdp.p.allFinite() || (mdp.p.array() < 0.0).any()) {
    throw Error(Errc::InvalidArgument, "transition probabilities must be finite and nonnegative");
  }
  for (int q = 0; q < mdp.n_pairs(); ++q) {
    const double sum = mdp.p.row(q).sum();
    if (std::abs(sum - 1.0) > kMdpRowTolerance) {
      std::ostringstream msg;
      msg << "p(.|" << q / mdp.r << "," << q % mdp.r << ") sums to " << std::setprecision(17) << sum;
      throw Error(Errc::NotStochastic, msg.str());
    }
  }
}

Matrix bellman(const MDP& mdp, const Matrix& Q) {
  const Vector next = mdp.p * row_minima(Q);  // indexed by pair
  Matrix out(mdp.s, mdp.r);
  for (int i = 0; i < mdp.s; ++i) {
    for (int u = 0; u < mdp.r; ++u) out(i, u) = mdp.k(i, u) + mdp.gamma * next[mdp.pair(i, u)];
  }
  return out;
}

Matrix q_value_iteration(const MDP& mdp, double tol, int max_iter) {
  validate_mdp(mdp);
  if (!(tol > 0.0)) throw Error(Errc::BadRange, "tolerance must be positive");
  Matrix Q = Matrix::Zero(mdp.s, mdp.r);
  for (int it = 0; it < max_iter; ++it) {
    Matrix G = bellman(mdp, Q);
    const double res = (G - Q).cwiseAbs().maxCoeff();
    if (res <= tol) return Q;
    Q = std::move(G);
  }
  throw Error(Errc::NoConvergence, "value iteration did not reach the tolerance");
}

Vector flatten_q(const Matrix& Q) {
  Vector x(Q.size());
  for (int i = 0; i < Q.rows(); ++i) {
    for (int u = 0; u < Q.cols(); ++u) x[i * Q.cols() + u] = Q(i, u);
  }
  return x;
}

Matrix unflatten_q(const Vector& x, int s, int r) {
  if (x.size() != static_cast<Eigen::Index>(s) * r) throw Error(Errc::InvalidArgument, "size mismatch");
  Matrix Q(s, r);
  for (int i = 0; i < s; ++i) {
    for (int u = 0; u < r; ++u) Q(i, u) = x[i * r + u];
  }
  return Q;
}

Matrix q_learning_step(const MDP& mdp, const Matrix& Q, int i, int u, int j, double a_n) {
  if (i < 0 || i >= mdp.s || j < 0 || j >= mdp.s || u < 0 || u >= mdp.r) {
    throw Error(Errc::IndexOutOfRange, "state or action out of range");
  }
  Matrix out = Q;
  out(i, u) += a_n * (mdp.k(i, u) + mdp.gamma * Q.row(j).minCoeff() - Q(i, u));
  return out;
}

Matrix softmax_policy(const Matrix& Q, double tau) {
  if (!(tau > 0.0)) throw Error(Errc::BadRange, "temperature must be positive");
  Matrix pol(Q.rows(), Q.cols());
  for (int i = 0; i < Q.rows(); ++i) {
    const double lo = Q.row(i).minCoeff();
    for (int u = 0; u < Q.cols(); ++u) pol(i, u) = std::exp(-(Q(i, u) - lo) / tau);
    pol.row(i) /= pol.row(i).sum();
  }
  return pol;
}

Matrix joint_transition(const MDP& mdp, const Matrix& policy) {
  const int n = mdp.n_pairs();
  Matrix P(n, n);
  for (int q = 0; q < n; ++q) {
    for (int j = 0; j < mdp.s; ++j) {
      for (int v = 0; v < mdp.r; ++v) P(q, mdp.pair(j, v)) = mdp.p(q, j) * policy(j, v);
    }
  }
  return P;
}

double QLearningInstance::K() const { return mdp.k.cwiseAbs().maxCoeff() / (1.0 - mdp.gamma); }

Tagged QLearningInstance::alpha() const {
  const Provenance prov = pi_min.provenance == Provenance::Declared ? Provenance::Declared : Provenance::Optimistic;
  return {1.0 - (1.0 - mdp.gamma) * pi_min.value, prov};
}

Matrix QLearningInstance::policy(const Matrix& Q) const {
  if (fixed_policy) return *fixed_policy;
  return softmax_policy(Q, tau);
}

PiMinEstimate estimate_pi_min(const QLearningInstance& instance, double radius, int n_samples, std::uint64_t seed) {
  const MDP& mdp = instance.mdp;
  const int d = mdp.n_pairs();
  auto min_pi = [&](const Matrix& Q) {
    const Matrix P = joint_transition(mdp, instance.policy(Q));
    if (!is_irreducible(P)) throw Error(Errc::NotIrreducible, "state-action chain is reducible under some policy");
    return stationary_distribution(P).minCoeff();
  };

  PiMinEstimate est;
  if (instance.fixed_policy) {
    est.value = min_pi(Matrix::Zero(mdp.s, mdp.r));
    est.samples = 1;
    return est;
  }
  n_samples = std::max(n_samples, 1);
  std::vector<Vector> pts{Vector::Zero(d)};
  if (instance.Q_star.size() == d) pts.push_back(flatten_q(instance.Q_star));
  Rng rng(seed);
  for (auto& v : ball_vertices(rng, d, radius, Norm::Sup, std::max(1, n_samples / 4))) pts.push_back(std::move(v));
  while (static_cast<int>(pts.size()) < n_samples) pts.push_back(sample_in_ball(rng, d, radius, Norm::Sup));
  pts.resize(std::min<std::size_t>(pts.size(), static_cast<std::size_t>(n_samples)));

  est.value = std::numeric_limits<double>::infinity();
  for (const Vector& x : pts) est.value = std::min(est.value, min_pi(unflatten_q(x, mdp.s, mdp.r)));
  est.samples = static_cast<int>(pts.size());
  est.low_confidence = est.samples < 16;
  return est;
}

QLearningInstance make_q_instance(const MDP& mdp, const QLearningOptions& options) {
  validate_mdp(mdp);
  QLearningInstance inst;
  inst.mdp = mdp;
  inst.tau = options.tau;
  if (!(options.tau > 0.0)) throw Error(Errc::BadRange, "temperature must be positive");
  if (options.fixed_policy) {
    const Matrix& pol = *options.fixed_policy;
    if (pol.rows() != mdp.s || pol.cols() != mdp.r) throw Error(Errc::InvalidArgument, "policy must be s x r");
    for (int i = 0; i < mdp.s; ++i) {
      if ((pol.row(i).array() <= 0.0).any() || std::abs(pol.row(i).sum() - 1.0) > kMdpRowTolerance) {
        throw Error(Errc::InvalidArgument, "policy rows must be positive and sum to one");
      }
    }
    inst.fixed_policy = pol;
  }
  inst.Q_star = q_value_iteration(mdp);
  if (options.declared_pi_min) {
    const double v = *options.declared_pi_min;
    if (!(v > 0.0 && v <= 1.0)) throw Error(Errc::BadRange, "pi_min must lie in (0, 1]");
    inst.pi_min = {v, Provenance::Declared};
  } else {
    const auto est = estimate_pi_min(inst, inst.K(), options.pi_min_samples, options.seed);
    inst.pi_min = {est.value, Provenance::Estimated};
  }
  return inst;
}

SAProblem q_as_sa_problem(const QLearningInstance& instance) {
  const auto mdp = std::make_shared<const MDP>(instance.mdp);
  const int s = mdp->s;
  const int r = mdp->r;
  const int d = mdp->n_pairs();

  SAProblem pr;
  pr.name = "q_learning";
  pr.dim = d;
  pr.norm = Norm::Sup;
  pr.F = [mdp](const Vector& x, int q) -> Vector {
    Vector out = x;
    double next = 0.0;
    for (int j = 0; j < mdp->s; ++j) {
      const double pj = mdp->p(q, j);
      if (pj != 0.0) next += pj * x.segment(j * mdp->r, mdp->r).minCoeff();
    }
    out[q] = mdp->k(q / mdp->r, q % mdp->r) + mdp->gamma * next;
    return out;
  };
  pr.mds = [mdp](const Vector& x, int q, int q_next, Rng&) -> Vector {
    Vector m = Vector::Zero(x.size());
    double mean = 0.0;
    for (int j = 0; j < mdp->s; ++j) {
      const double pj = mdp->p(q, j);
      if (pj != 0.0) mean += pj * x.segment(j * mdp->r, mdp->r).minCoeff();
    }
    const int j = q_next / mdp->r;
    m[q] = mdp->gamma * (x.segment(j * mdp->r, mdp->r).minCoeff() - mean);
    return m;
  };

  if (instance.fixed_policy) {
    pr.chain = ParamChain::constant(d, validate_chain(joint_transition(*mdp, *instance.fixed_policy)));
  } else {
    const double tau = instance.tau;
    pr.chain = ParamChain::from_kernel(d, d, [mdp, tau, s, r](const Vector& x) -> Matrix {
      return joint_transition(*mdp, softmax_policy(unflatten_q(x, s, r), tau));
    });
  }
  const Tagged a = instance.alpha();
  pr.alpha = a.value;
  pr.alpha_provenance = a.provenance;
  pr.x_star = flatten_q(instance.Q_star);
  pr.K = instance.K();
  pr.K0 = 1.0;
  pr.L3 = 1.0;
  return pr;
}

MDP read_mdp(std::istream& in) {
  MDP mdp;
  expect(in >> mdp.s >> mdp.r >> mdp.gamma, "MDP header `s r gamma`");
  if (mdp.s < 1 || mdp.r < 1) throw Error(Errc::ParseError, "MDP header needs positive s and r");
  mdp.p = Matrix::Constant(mdp.n_pairs(), mdp.s, std::numeric_limits<double>::quiet_NaN());
  mdp.k = Matrix::Constant(mdp.s, mdp.r, std::numeric_limits<double>::quiet_NaN());
  std::vector<bool> seen(static_cast<std::size_t>(mdp.n_pairs()), false);
  for (int line = 0; line < mdp.n_pairs(); ++line) {
    int i = -1;
    int u = -1;
    expect(in >> i >> u, "state-action indices");
    if (i < 0 || i >= mdp.s || u < 0 || u >= mdp.r) {
      throw Error(Errc::ParseError, "state-action index (" + std::to_string(i) + "," + std::to_string(u) +
                                        ") out of range; indices are 0-based");
    }
    const int q = mdp.pair(i, u);
    if (seen[static_cast<std::size_t>(q)]) throw Error(Errc::ParseError, "duplicate state-action line");
    seen[static_cast<std::size_t>(q)] = true;
    expect(in >> mdp.k(i, u), "cost");
    for (int j = 0; j < mdp.s; ++j) expect(in >> mdp.p(q, j), "transition probability");
  }
  validate_mdp(mdp);
  return mdp;
}

MDP load_mdp(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::ConfigError, "cannot open " + path);
  return read_mdp(in);
}

void write_mdp(std::ostream& out, const MDP& mdp) {
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  out << mdp.s << ' ' << mdp.r << ' ' << mdp.gamma << '\n';
  for (int i = 0; i < mdp.s; ++i) {
    for (int u = 0; u < mdp.r; ++u) {
      out << i << ' ' << u << ' ' << mdp.k(i, u);
      for (int j = 0; j < mdp.s; ++j) out << ' ' << mdp.p(mdp.pair(i, u), j);
      out << '\n';
    }
  }
}

//---------------------------------------------------------------------------//
// TD(0)
//---------------------------------------------------------------------------//

void validate_td(const TDInstance& td) {
  const int s = td.chain.n_states();
  if (td.Phi.rows() != s) throw Error(Errc::InvalidArgument, "feature matrix needs one row per state");
  if (td.Phi.cols() < 1) throw Error(Errc::InvalidArgument, "feature matrix has no columns");
  if (td.k.size() != s) throw Error(Errc::InvalidArgument, "cost vector needs one entry per state");
  if (!(td.gamma >= 0.0 && td.gamma < 1.0)) throw Error(Errc::BadRange, "gamma must lie in [0, 1)");
  if (!td.Phi.allFinite() || !td.k.allFinite()) throw Error(Errc::InvalidArgument, "non-finite TD data");
  Eigen::ColPivHouseholderQR<Matrix> qr(td.Phi);
  if (qr.rank() < td.Phi.cols()) throw Error(Errc::SingularSystem, "feature matrix is not of full column rank");
}

double td_lambda_M(const TDInstance& td) {
  const Matrix psi = td.Phi.transpose() * td.chain.pi().cwiseSqrt().asDiagonal();
  Eigen::JacobiSVD<Matrix> svd(psi);
  return svd.singularValues()[0];
}

double td_admissibility_limit(double gamma) { return std::sqrt(2.0 * (1.0 - gamma)) / (1.0 + gamma); }

bool td_admissible(const TDInstance& td) { return td_lambda_M(td) < td_admissibility_limit(td.gamma); }

double td_contraction_factor(const TDInstance& td) {
  validate_td(td);
  const double lambda = td_lambda_M(td);
  const double limit = td_admissibility_limit(td.gamma);
  if (!(lambda < limit)) {
    std::ostringstream msg;
    msg << "lambda_M = " << lambda << " is not below " << limit << "; rescale the features";
    throw Error(Errc::Inadmissible, msg.str());
  }
  const Matrix G = td.Phi.transpose() * diag_pi(td.chain.pi()) * td.Phi;
  const double mu = Eigen::SelfAdjointEigenSolver<Matrix>(G, Eigen::EigenvaluesOnly).eigenvalues()[0];
  const double g = td.gamma;
  const double inner = 1.0 - mu * (2.0 * (1.0 - g) - lambda * lambda * (1.0 + g) * (1.0 + g));
  const double alpha = std::sqrt(std::max(inner, 0.0));
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(Errc::Inadmissible, "contraction factor outside (0, 1)");
  return alpha;
}

Vector td_projection(const TDInstance& td, const Vector& x) {
  const Matrix PhiTD = td.Phi.transpose() * diag_pi(td.chain.pi());
  const Matrix G = PhiTD * td.Phi;
  return td.Phi * G.ldlt().solve(PhiTD * x);
}

double td_fixed_point_residual(const TDInstance& td, const Vector& r) {
  const Vector phir = td.Phi * r;
  const Vector h = td_projection(td, td.k + td.gamma * td.chain.transition() * phir);
  return (h - phir).cwiseAbs().maxCoeff();
}

Vector td_fixed_point(const TDInstance& td) {
  td_contraction_factor(td);  // admissibility first
  const Matrix PhiTD = td.Phi.transpose() * diag_pi(td.chain.pi());
  const Matrix A = PhiTD * td.Phi - td.gamma * PhiTD * td.chain.transition() * td.Phi;
  Eigen::FullPivLU<Matrix> lu(A);
  if (!lu.isInvertible()) throw Error(Errc::SingularSystem, "projected fixed-point system is singular");
  Vector r = lu.solve(PhiTD * td.k);
  const double res = td_fixed_point_residual(td, r);
  const double scale = std::max(1.0, (td.Phi * r).cwiseAbs().maxCoeff());
  if (!(res <= kTdResidualTolerance * scale)) {
    std::ostringstream msg;
    msg << "H(Phi r*) residual " << res << " exceeds tolerance";
    throw Error(Errc::SingularSystem, msg.str());
  }
  return r;
}

Vector td_step(const TDInstance& td, const Vector& r, int y, int y_next, double a_n) {
  const int s = td.chain.n_states();
  if (y < 0 || y >= s || y_next < 0 || y_next >= s) throw Error(Errc::IndexOutOfRange, "state out of range");
  const Vector phi = td.Phi.row(y).transpose();
  const double tderr = td.k[y] + td.gamma * td.Phi.row(y_next).dot(r) - phi.dot(r);
  return r + a_n * tderr * phi;
}

RescaledTD rescale_features(const TDInstance& td) {
  RescaledTD out{td, 1.0};
  const double lambda = td_lambda_M(td);
  const double limit = td_admissibility_limit(td.gamma);
  if (lambda < limit) return out;
  out.factor = 0.99 * limit / lambda;
  out.td.Phi *= out.factor;
  return out;
}

SAProblem td_as_sa_problem(const TDInstance& td) {
  const double alpha = td_contraction_factor(td);
  const Vector r_star = td_fixed_point(td);
  const int m = static_cast<int>(td.Phi.cols());
  const auto Phi = std::make_shared<const Matrix>(td.Phi);
  const auto PPhi = std::make_shared<const Matrix>(td.chain.transition() * td.Phi);
  const Vector k = td.k;
  const double g = td.gamma;

  SAProblem pr;
  pr.name = "td0";
  pr.dim = m;
  pr.norm = Norm::Euclidean;
  pr.F = [Phi, PPhi, k, g](const Vector& r, int i) -> Vector {
    const Vector phi = Phi->row(i).transpose();
    return phi * (k[i] + g * PPhi->row(i).dot(r) - phi.dot(r)) + r;
  };
  pr.mds = [Phi, PPhi, g](const Vector& r, int i, int j, Rng&) -> Vector {
    return g * (Phi->row(j).dot(r) - PPhi->row(i).dot(r)) * Phi->row(i).transpose();
  };
  pr.chain = ParamChain::constant(m, td.chain);
  pr.alpha = alpha;
  pr.alpha_provenance = Provenance::Derived;
  pr.x_star = r_star;
  const double phi_inf = inf_operator_norm(td.Phi);
  pr.K0 = 2.0 * g * phi_inf * phi_inf;
  pr.K = td.k.cwiseAbs().maxCoeff() * phi_inf;
  double l3 = 0.0;
  for (int i = 0; i < td.chain.n_states(); ++i) {
    const Vector phi = td.Phi.row(i).transpose();
    const Matrix J = Matrix::Identity(m, m) + phi * (g * PPhi->row(i) - phi.transpose());
    l3 = std::max(l3, inf_operator_norm(J));
  }
  pr.L3 = l3;
  return pr;
}

Vector read_vector(std::istream& in) {
  std::vector<double> vals;
  std::string tok;
  while (in >> tok) {
    try {
      std::size_t used = 0;
      vals.push_back(std::stod(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw Error(Errc::ParseError, "not a number: " + tok);
    }
  }
  return Eigen::Map<Vector>(vals.data(), static_cast<Eigen::Index>(vals.size()));
}

Matrix read_matrix(std::istream& in) {
  long rows = 0;
  long cols = 0;
  expect(in >> rows >> cols, "matrix header `rows cols`");
  if (rows < 1 || cols < 1) throw Error(Errc::ParseError, "matrix dimensions must be positive");
  Matrix m(rows, cols);
  for (long i = 0; i < rows; ++i) {
    for (long j = 0; j < cols; ++j) expect(in >> m(i, j), "matrix entry");
  }
  return m;
}

TDInstance load_td(const std::string& chain_path, const std::string& cost_path, const std::string& features_path,
                   double gamma) {
  auto open = [](const std::string& p) {
    std::ifstream in(p);
    if (!in) throw Error(Errc::ConfigError, "cannot open " + p);
    return in;
  };
  TDInstance td{load_chain(chain_path), Vector(), gamma, Matrix()};
  {
    auto in = open(cost_path);
    td.k = read_vector(in);
  }
  {
    auto in = open(features_path);
    td.Phi = read_matrix(in);
  }
  validate_td(td);
  return td;
}

}  // namespace sacon
