#pragma once

#include <cmath>
#include <limits>

#include "model.hpp"
#include "numerics.hpp"

namespace mfgirl {

using Policy = Matrix;  // X x A, rows sum to one

/// Normalized discounted state-action occupation measure.
struct OccupationMeasure {
  Matrix nu;  // X x A
  double beta = 0.0;
  Vector mu0;
};

struct ValueFunctions {
  Vector V;
  Matrix Q;  // X x A
};

struct PolicyResult {
  ValueFunctions values;
  Policy policy;
};

inline Vector state_marginal(const Matrix& nu) { return nu.rowwise().sum(); }

/// Largest violation of nu^X = (1-beta) mu0 + beta nu p.
inline double flow_residual(const Kernel& K, const Matrix& nu, double beta, const Vector& mu0) {
  return (state_marginal(nu) - (1.0 - beta) * mu0 - beta * K.push(nu)).cwiseAbs().maxCoeff();
}

/// Q(x,a) = c(x,a) + beta sum_y p(y|x,a) V(y)
inline Matrix bellman_q(const Kernel& K, const Matrix& c, const Vector& V, double beta) {
  Matrix Q = c;
  for (int a = 0; a < K.A(); ++a) Q.col(a) += beta * (K.trans[a] * V);
  return Q;
}

/// Deterministic greedy (cost-minimizing) policy, ties to the lowest action.
inline Policy greedy_policy(const Matrix& Q) {
  Policy pi = Matrix::Zero(Q.rows(), Q.cols());
  for (Eigen::Index x = 0; x < Q.rows(); ++x) {
    Eigen::Index best = 0;
    for (Eigen::Index a = 1; a < Q.cols(); ++a)
      if (Q(x, a) < Q(x, best)) best = a;
    pi(x, best) = 1.0;
  }
  return pi;
}

/// Discounted cost-to-go of a fixed policy, by a direct solve.
inline Vector policy_evaluation(const Kernel& K, const Matrix& c, const Policy& pi, double beta) {
  const int X = K.X();
  Vector cpi = (c.cwiseProduct(pi)).rowwise().sum();
  Matrix M = Matrix::Identity(X, X) - beta * K.under(pi);
  return solve_linear(M, cpi);
}

inline Vector policy_evaluation(const ModelSpec& s, const Policy& pi, const Vector& mu) {
  return policy_evaluation(transition_kernel(s, mu), cost_table(s, mu), pi, s.beta);
}

/**
 * Hard value iteration for the MDP frozen at mu (cost convention).
 * Stops once the contraction bound guarantees the fixed point to
 * tol*(1+|V|_inf).
 */
inline PolicyResult value_iteration(const ModelSpec& s, const Vector& mu, double tol = 1e-12,
                                    int max_iter = 100000) {
  if (!(tol > 0)) throw BadParameter("value_iteration: tol must be positive");
  const Kernel K = transition_kernel(s, mu);
  const Matrix c = cost_table(s, mu);
  const double beta = s.beta;
  Vector V = Vector::Zero(s.X());
  Matrix Q;
  for (int it = 0; it < max_iter; ++it) {
    Q = bellman_q(K, c, V, beta);
    Vector Vn = Q.rowwise().minCoeff();
    const double diff = (Vn - V).cwiseAbs().maxCoeff();
    V = std::move(Vn);
    if (diff * beta / (1.0 - beta) <= tol * (1.0 + V.cwiseAbs().maxCoeff())) break;
  }
  Q = bellman_q(K, c, V, beta);
  V = Q.rowwise().minCoeff();
  return {{V, Q}, greedy_policy(Q)};
}

/**
 * Invariant distribution of the chain under pi with the kernel frozen at mu.
 * Solves (P^T - I) m = 0 together with sum(m) = 1.
 */
inline Vector stationary_distribution(const Kernel& K, const Policy& pi) {
  const int X = K.X();
  Matrix P = K.under(pi);
  Matrix M = P.transpose() - Matrix::Identity(X, X);
  if (X > 1 && matrix_rank(M, 1e-10) < X - 1)
    throw NonUniqueStationary("chain has more than one invariant distribution");
  Matrix Aug(X + 1, X);
  Aug.topRows(X) = M;
  Aug.row(X).setOnes();
  Vector rhs = Vector::Zero(X + 1);
  rhs(X) = 1.0;
  Vector m = Aug.colPivHouseholderQr().solve(rhs);
  m = m.cwiseMax(0.0);
  return m / m.sum();
}

inline Vector stationary_distribution(const ModelSpec& s, const Policy& pi, const Vector& mu) {
  return stationary_distribution(transition_kernel(s, mu), pi);
}

/// Occupation measure from (I - beta P^T) m = (1-beta) mu0, nu = diag(m) pi.
inline OccupationMeasure occupation_measure(const Kernel& K, const Policy& pi, double beta,
                                            const Vector& mu0) {
  const int X = K.X();
  Matrix M = Matrix::Identity(X, X) - beta * K.under(pi).transpose();
  Vector m = solve_linear(M, (1.0 - beta) * mu0);
  return {m.asDiagonal() * pi, beta, mu0};
}

inline OccupationMeasure occupation_measure(const ModelSpec& s, const Policy& pi,
                                            const Vector& mu, const Vector& mu0) {
  return occupation_measure(transition_kernel(s, mu), pi, s.beta, mu0);
}

/// pi(a|x) = nu(x,a)/nu^X(x), uniform where the marginal vanishes.
inline Policy disintegrate(const Matrix& nu) {
  Policy pi(nu.rows(), nu.cols());
  for (Eigen::Index x = 0; x < nu.rows(); ++x) {
    const double m = nu.row(x).sum();
    if (m > 1e-12)
      pi.row(x) = nu.row(x) / m;
    else
      pi.row(x).setConstant(1.0 / double(nu.cols()));
  }
  return pi;
}

/// (1/(1-beta)) sum -log(nu/nu^X) nu, with 0 log 0 = 0.
inline double occupation_entropy(const Matrix& nu, double beta) {
  const Vector m = state_marginal(nu);
  double h = 0.0;
  for (Eigen::Index x = 0; x < nu.rows(); ++x)
    for (Eigen::Index a = 0; a < nu.cols(); ++a)
      if (nu(x, a) > 0.0 && m(x) > 0.0) h -= std::log(nu(x, a) / m(x)) * nu(x, a);
  return h / (1.0 - beta);
}

inline double causal_entropy(const ModelSpec& s, const Policy& pi, const Vector& mu,
                             const Vector& mu0) {
  return occupation_entropy(occupation_measure(s, pi, mu, mu0).nu, s.beta);
}

/// (1/(1-beta)) sum f(x,a) nu(x,a) for features evaluated at a fixed mu.
inline Vector occupation_features(const FeatureTable& F, const Matrix& nu, double beta) {
  Vector out = Vector::Zero(F.rows.cols());
  for (Eigen::Index x = 0; x < nu.rows(); ++x)
    for (Eigen::Index a = 0; a < nu.cols(); ++a)
      out += nu(x, a) * F.at(int(x), int(a)).transpose();
  return out / (1.0 - beta);
}

inline Vector feature_expectation(const ModelSpec& s, const Policy& pi, const Vector& mu,
                                  const Vector& mu0) {
  return occupation_features(feature_table(s, mu), occupation_measure(s, pi, mu, mu0).nu,
                             s.beta);
}

/**
 * Soft (entropy-regularized) value iteration, reward convention:
 *   Q(x,a) = r(x,a) + beta sum_y p(y|x,a) V(y),  V(x) = log sum_a exp Q(x,a).
 * Returns the Boltzmann policy exp(Q - V).
 */
inline PolicyResult soft_value_iteration(const ModelSpec& s, const Vector& mu,
                                         const Vector& theta, double tol = 1e-12,
                                         int max_iter = 100000) {
  if (!(tol > 0)) throw BadParameter("soft_value_iteration: tol must be positive");
  const Kernel K = transition_kernel(s, mu);
  const Matrix r = cost_table(s, mu, theta);
  const double beta = s.beta;
  Vector V = Vector::Zero(s.X());
  Matrix Q;
  auto soft_max = [](const Matrix& q) {
    Vector v(q.rows());
    for (Eigen::Index x = 0; x < q.rows(); ++x) v(x) = log_sum_exp(q.row(x).transpose());
    return v;
  };
  for (int it = 0; it < max_iter; ++it) {
    Q = bellman_q(K, r, V, beta);
    Vector Vn = soft_max(Q);
    const double diff = (Vn - V).cwiseAbs().maxCoeff();
    V = std::move(Vn);
    if (diff * beta / (1.0 - beta) <= tol * (1.0 + V.cwiseAbs().maxCoeff())) break;
  }
  Q = bellman_q(K, r, V, beta);
  V = soft_max(Q);
  Policy pi = (Q.colwise() - V).array().exp().matrix();
  return {{V, Q}, pi};
}

}  // namespace mfgirl
