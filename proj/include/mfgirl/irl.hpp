#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "mdp.hpp"
#include "model.hpp"
#include "numerics.hpp"

namespace mfgirl {

/**
 * Maximum causal entropy IRL instance: the model (theta not needed), the
 * expert mean field mu_E (strictly positive) and the expert discounted
 * feature expectation.
 */
struct IrlProblem {
  ModelSpec spec;
  Vector mu_E;
  Vector f_expert;
};

/// Dual variables (theta, lambda, xi).
struct DualPoint {
  Vector theta;   // k
  Vector lambda;  // X
  Vector xi;      // X

  static DualPoint zeros(int k, int X) {
    return {Vector::Zero(k), Vector::Zero(X), Vector::Zero(X)};
  }
  Vector flat() const {
    Vector v(theta.size() + lambda.size() + xi.size());
    v << theta, lambda, xi;
    return v;
  }
  static DualPoint from_flat(const Vector& v, int k, int X) {
    return {v.head(k), v.segment(k, X), v.tail(X)};
  }
};

struct DualGradient {
  Vector theta, lambda, xi;

  Vector flat() const {
    Vector v(theta.size() + lambda.size() + xi.size());
    v << theta, lambda, xi;
    return v;
  }
  double sup_norm() const { return flat().cwiseAbs().maxCoeff(); }
};

struct SmoothnessConstants {
  double M1 = 0, M2 = 0, M3 = 0, M = 0, L = 0;
};

struct IrlConfig {
  std::optional<double> step;  // default 1/L
  double grad_tol = 1e-2;
  int max_iter = 1000000;
  bool keep_trace = true;
};

struct IrlTracePoint {
  double g;
  double grad_sup;
};

struct IrlResult {
  DualPoint dual;
  Matrix occupation;
  Policy policy;
  std::vector<IrlTracePoint> trace;  // one entry per evaluated iterate, starting at d0
  int iterations = 0;
  bool converged = false;
  double g_final = 0.0;
  double step = 0.0;
  bool step_above_bound = false;  // step > 1/L
};

struct IrlResiduals {
  double feat = 0, flow = 0, marg = 0, pos = 0;
};

/// Frozen-at-mu_E model data used by every dual evaluation.
class IrlEvaluator {
 public:
  explicit IrlEvaluator(const IrlProblem& p) : p_(p) {
    const ModelSpec& s = p.spec;
    if (p.mu_E.size() != s.X()) throw ValidationError("mu_E length differs from n_states");
    if (!p.mu_E.allFinite() || (p.mu_E.array() <= 0.0).any())
      throw ValidationError("mu_E must be strictly positive in every state");
    if (std::abs(p.mu_E.sum() - 1.0) > 1e-9) throw ValidationError("mu_E must sum to one");
    if (p.f_expert.size() != s.k())
      throw ValidationError("f_expert length differs from feature_dim");
    if (!p.f_expert.allFinite()) throw ValidationError("f_expert has non-finite entries");
    K_ = transition_kernel(s, p.mu_E);
    F_ = feature_table(s, p.mu_E);
    log_mu_ = p.mu_E.array().log();
  }

  const IrlProblem& problem() const { return p_; }
  const Kernel& kernel() const { return K_; }
  const FeatureTable& features() const { return F_; }

  /// k(x,a) = log mu_E(x) + <theta,f> + (1-beta)[lambda_x + sum_z xi_z (p(z|x,a) - mu_E(z))]
  Matrix k_table(const DualPoint& d) const {
    const int X = p_.spec.X(), A = p_.spec.A();
    const double b = p_.spec.beta;
    const double xi_mu = d.xi.dot(p_.mu_E);
    Matrix k(X, A);
    for (int x = 0; x < X; ++x)
      for (int a = 0; a < A; ++a)
        k(x, a) = log_mu_(x) + F_.at(x, a).dot(d.theta) +
                  (1.0 - b) * (d.lambda(x) + K_.trans[a].row(x).dot(d.xi) - xi_mu);
    return k;
  }

  /// Boltzmann occupation measure exp(k)/Z.
  Matrix boltzmann(const DualPoint& d) const { return boltzmann_from_k(k_table(d)); }

  static Matrix boltzmann_from_k(const Matrix& k) {
    Eigen::Map<const Vector> flat(k.data(), k.size());
    const double lse = log_sum_exp(flat);
    return (k.array() - lse).exp().matrix();
  }

  double objective(const DualPoint& d) const { return objective_from_k(d, k_table(d)); }

  double objective_from_k(const DualPoint& d, const Matrix& k) const {
    Eigen::Map<const Vector> flat(k.data(), k.size());
    return log_sum_exp(flat) / (1.0 - p_.spec.beta) - d.theta.dot(p_.f_expert) -
           d.lambda.dot(p_.mu_E);
  }

  DualGradient gradient_from_nu(const Matrix& nu) const {
    DualGradient g;
    g.theta = occupation_features(F_, nu, p_.spec.beta) - p_.f_expert;
    g.lambda = state_marginal(nu) - p_.mu_E;
    g.xi = K_.push(nu) - p_.mu_E;
    return g;
  }

  DualGradient gradient(const DualPoint& d) const { return gradient_from_nu(boltzmann(d)); }

 private:
  IrlProblem p_;
  Kernel K_;
  FeatureTable F_;
  Vector log_mu_;
};

inline Matrix k_table(const IrlProblem& p, const DualPoint& d) {
  return IrlEvaluator(p).k_table(d);
}
inline Matrix boltzmann(const IrlProblem& p, const DualPoint& d) {
  return IrlEvaluator(p).boltzmann(d);
}
inline double dual_objective(const IrlProblem& p, const DualPoint& d) {
  return IrlEvaluator(p).objective(d);
}
inline DualGradient dual_gradient(const IrlProblem& p, const DualPoint& d) {
  return IrlEvaluator(p).gradient(d);
}

/// L = 2M (M1/(1-beta) + 2 sqrt(|X||A|)), M = max(M1, M2, M3).
inline double lipschitz_bound(double M1, double M2, double M3, double beta, int n_pairs) {
  const double M = std::max({M1, M2, M3});
  return 2.0 * M * (M1 / (1.0 - beta) + 2.0 * std::sqrt(double(n_pairs)));
}

inline SmoothnessConstants smoothness_constants(const IrlProblem& p) {
  const IrlEvaluator ev(p);
  const ModelSpec& s = p.spec;
  SmoothnessConstants c;
  for (int x = 0; x < s.X(); ++x)
    for (int a = 0; a < s.A(); ++a) {
      c.M1 = std::max(c.M1, ev.features().at(x, a).norm());
      Vector row = ev.kernel().trans[a].row(x).transpose() - p.mu_E;
      c.M3 = std::max(c.M3, row.norm());
    }
  c.M2 = 1.0 - s.beta;
  c.M3 *= (1.0 - s.beta);
  c.M = std::max({c.M1, c.M2, c.M3});
  c.L = lipschitz_bound(c.M1, c.M2, c.M3, s.beta, s.X() * s.A());
  return c;
}

/**
 * Rank test of the stacked vectors (f(x,a), p(.|x,a), e_x) over all (x,a).
 * The condition holds when the rank equals k + 2|X|.
 */
inline std::pair<bool, int> check_span_assumption(const IrlProblem& p) {
  const IrlEvaluator ev(p);
  const ModelSpec& s = p.spec;
  const int X = s.X(), A = s.A(), k = s.k();
  Matrix M = Matrix::Zero(X * A, k + 2 * X);
  for (int x = 0; x < X; ++x)
    for (int a = 0; a < A; ++a) {
      const int r = x * A + a;
      M.row(r).head(k) = ev.features().at(x, a);
      M.row(r).segment(k, X) = ev.kernel().trans[a].row(x);
      M(r, k + X + x) = 1.0;
    }
  const int rank = matrix_rank(M, 1e-10);
  return {rank == k + 2 * X, rank};
}

/// Constraint residuals of a candidate occupation measure against the expert data.
inline IrlResiduals verify_irl(const IrlProblem& p, const Matrix& nu) {
  const IrlEvaluator ev(p);
  IrlResiduals r;
  r.feat = (occupation_features(ev.features(), nu, p.spec.beta) - p.f_expert)
               .cwiseAbs()
               .maxCoeff();
  r.flow = (p.mu_E - ev.kernel().push(nu)).cwiseAbs().maxCoeff();
  r.marg = (state_marginal(nu) - p.mu_E).cwiseAbs().maxCoeff();
  r.pos = std::max(0.0, -nu.minCoeff());
  return r;
}

/// Primal objective at nu: (1/(1-beta)) sum -log(nu/mu_E) nu.
inline double primal_objective(const IrlProblem& p, const Matrix& nu) {
  double h = 0.0;
  for (Eigen::Index x = 0; x < nu.rows(); ++x)
    for (Eigen::Index a = 0; a < nu.cols(); ++a)
      if (nu(x, a) > 0.0) h -= std::log(nu(x, a) / p.mu_E(x)) * nu(x, a);
  return h / (1.0 - p.spec.beta);
}

/**
 * Constant-step gradient descent on the dual from d0 = 0, stopping when
 * the sup-norm of the gradient drops to grad_tol. Throws NonFinite when the
 * objective blows up (step too large). Non-convergence is reported in the
 * result, not thrown.
 */
inline IrlResult run_irl(const IrlProblem& p, const IrlConfig& cfg = {}) {
  const IrlEvaluator ev(p);
  const ModelSpec& s = p.spec;
  const SmoothnessConstants sc = smoothness_constants(p);
  const double step = cfg.step ? *cfg.step : 1.0 / sc.L;
  if (!(step > 0.0)) throw BadParameter("IRL step must be positive");
  if (!(cfg.grad_tol > 0.0)) throw BadParameter("grad_tol must be positive");

  IrlResult out;
  out.step = step;
  out.step_above_bound = step > 1.0 / sc.L;
  const int k = s.k(), X = s.X();
  Vector d = Vector::Zero(k + 2 * X);
  DualPoint dp = DualPoint::zeros(k, X);
  Matrix kt = ev.k_table(dp);
  Matrix nu = IrlEvaluator::boltzmann_from_k(kt);
  double g = ev.objective_from_k(dp, kt);
  DualGradient grad = ev.gradient_from_nu(nu);
  int it = 0;
  for (;; ++it) {
    const double gs = grad.sup_norm();
    if (!std::isfinite(g) || !std::isfinite(gs))
      throw NonFinite("IRL dual objective became non-finite at iteration " +
                      std::to_string(it) + "; reduce the step");
    if (cfg.keep_trace) out.trace.push_back({g, gs});
    if (gs <= cfg.grad_tol) {
      out.converged = true;
      break;
    }
    if (it >= cfg.max_iter) break;
    d -= step * grad.flat();
    dp = DualPoint::from_flat(d, k, X);
    kt = ev.k_table(dp);
    nu = IrlEvaluator::boltzmann_from_k(kt);
    g = ev.objective_from_k(dp, kt);
    grad = ev.gradient_from_nu(nu);
  }
  out.iterations = it;
  out.dual = dp;
  out.occupation = nu;
  out.policy = disintegrate(nu);
  out.g_final = g;
  return out;
}

struct IrlNotConverged : NotConverged {
  explicit IrlNotConverged(IrlResult r)
      : NotConverged("dual gradient above tolerance after " + std::to_string(r.iterations) +
                     " iterations"),
        result(std::move(r)) {}
  IrlResult result;
};

/// run_irl, raising IrlNotConverged (result and trace attached) at the iteration cap.
inline IrlResult solve_irl(const IrlProblem& p, const IrlConfig& cfg = {}) {
  IrlResult r = run_irl(p, cfg);
  if (!r.converged) throw IrlNotConverged(std::move(r));
  return r;
}

}  // namespace mfgirl
