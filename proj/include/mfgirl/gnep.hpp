#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "mdp.hpp"
#include "model.hpp"
#include "numerics.hpp"

namespace mfgirl {

/**
 * Layout of the interior-point iterate z for the two-player game:
 *   player 1 picks an occupation measure nu (X*A entries, index x*A+a),
 *   player 2 picks the mean field mu (X entries).
 * Player-1 constraints (m1 = X*A + X):  -nu <= 0, flow inequality.
 * Player-2 constraints (m2 = 2X + 1):   -mu <= 0, 1 - <mu,1> <= 0, -mu + nu p <= 0.
 * z = (nu, mu, lambda[m1], gamma[m2], slack_lambda[m1], slack_gamma[m2]).
 */
struct GnepLayout {
  int X = 0, A = 0;

  int n_nu() const { return X * A; }
  int n() const { return X * A + X; }
  int m1() const { return X * A + X; }
  int m2() const { return 2 * X + 1; }
  int m() const { return m1() + m2(); }
  int dim() const { return n() + 2 * m(); }

  int nu(int x, int a) const { return x * A + a; }
  int mu(int x) const { return n_nu() + x; }
  int lambda(int i) const { return n() + i; }
  int gamma(int i) const { return n() + m1() + i; }
  int slack(int i) const { return n() + m() + i; }  // i over all m constraints
};

struct GnepVariables {
  Vector nu;            // X*A
  Vector mu;            // X
  Vector lambda;        // m1
  Vector gamma;         // m2
  Vector slack_lambda;  // m1
  Vector slack_gamma;   // m2

  Vector pack() const {
    Vector z(nu.size() + mu.size() + lambda.size() + gamma.size() + slack_lambda.size() +
             slack_gamma.size());
    z << nu, mu, lambda, gamma, slack_lambda, slack_gamma;
    return z;
  }

  static GnepVariables unpack(const GnepLayout& L, const Vector& z) {
    GnepVariables v;
    int o = 0;
    auto take = [&](int len) {
      Vector out = z.segment(o, len);
      o += len;
      return out;
    };
    v.nu = take(L.n_nu());
    v.mu = take(L.X);
    v.lambda = take(L.m1());
    v.gamma = take(L.m2());
    v.slack_lambda = take(L.m1());
    v.slack_gamma = take(L.m2());
    return v;
  }
};

enum class JacobianMode { FiniteDifference, Analytic };

struct GnepConfig {
  double sigma = 0.1;
  double kappa = 0.001;
  double armijo_alpha = 0.1;
  std::optional<double> K;  // default 2m
  double tol = 1e-8;
  int max_iter = 10000;
  /**
   * Player 2 minimizes rho <mu,1>, plus <nu,c_mu> when player2_shares_cost.
   * Any positive rho gives the same equilibria; it only has to keep the
   * mean field from drifting along the ray (s nu, s mu). Default 1.
   */
  std::optional<double> mass_weight;
  bool player2_shares_cost = false;
  /// Use mu/<mu,1> as the initial law in player 1's flow constraint.
  bool normalize_flow = true;
  JacobianMode jacobian = JacobianMode::Analytic;
  double fd_step = 1e-6;
  int max_backtracks = 200;
};

struct KktReport {
  std::vector<double> h_norm_history;  // |H(z_k)|_2 for k = 0..iterations
  std::vector<double> psi_history;
  std::vector<double> step_history;
  double residual_F = 0, residual_feas = 0, residual_comp = 0;
  bool converged = false;
  int iterations = 0;
  std::string status;  // "converged", "max_iter", "non_descent", "line_search_stall"
  double last_slope = 0.0;  // <grad psi, d> of a rejected direction
};

struct Equilibrium {
  Policy policy;
  Vector mean_field;
  Matrix occupation;
  double optimality_gap = 0.0;
  double invariance_residual = 0.0;
};

/// Precomputed affine data for the KKT map.
class GnepProblem {
 public:
  GnepProblem(const ModelSpec& spec, const GnepConfig& cfg = {})
      : s_(spec), L_{spec.X(), spec.A()}, normalize_(cfg.normalize_flow),
        share_cost_(cfg.player2_shares_cost) {
    const Vector& theta = spec.require_theta();
    const int X = L_.X, A = L_.A;
    // c_mu(x,a) = c0(x,a) + sum_z C1(x*A+a, z) mu_z
    c0_ = Matrix::Zero(X, A);
    C1_ = Matrix::Zero(X * A, X);
    for (int x = 0; x < X; ++x)
      for (int a = 0; a < A; ++a)
        for (int j = 0; j < spec.k(); ++j) {
          c0_(x, a) += theta(j) * spec.f0(x, a, j);
          for (int z = 0; z < X; ++z) C1_(x * A + a, z) += theta(j) * spec.f1(x, a, j, z);
        }
    // The flow constraint is an inequality; it binds only for positive costs.
    // A constant shift moves every policy's cost by the same amount, so the
    // equilibria are unchanged.
    double lower = std::numeric_limits<double>::infinity();
    for (int r = 0; r < X * A; ++r)
      lower = std::min(lower, c0_(r / A, r % A) + C1_.row(r).minCoeff());
    shift_ = lower < 0.0 ? 1.0 - lower : 0.0;
    has_p1_ = false;
    for (double v : spec.P1)
      if (v != 0.0) has_p1_ = true;
    rho_ = cfg.mass_weight.value_or(1.0);
    if (!(rho_ > 0.0)) throw BadParameter("mass weight must be positive");
  }

  const ModelSpec& spec() const { return s_; }
  const GnepLayout& layout() const { return L_; }
  double mass_weight() const { return rho_; }
  double cost_shift() const { return shift_; }

  /// Player-1 constraints h1 and player-2 constraints h2.
  std::pair<Vector, Vector> constraints(const Matrix& nu, const Vector& mu) const {
    const int X = L_.X, A = L_.A;
    const double b = s_.beta;
    const Kernel K = transition_kernel_raw(mu);
    const Vector nup = K.push(nu);
    Vector h1(L_.m1()), h2(L_.m2());
    for (int x = 0; x < X; ++x)
      for (int a = 0; a < A; ++a) h1(L_.nu(x, a)) = -nu(x, a);
    const Vector init = normalize_ ? Vector(mu / mu.sum()) : mu;
    h1.tail(X) = -state_marginal(nu) + (1.0 - b) * init + b * nup;
    h2.head(X) = -mu;
    h2(X) = 1.0 - mu.sum();
    h2.tail(X) = -mu + nup;
    return {h1, h2};
  }

  /// H(z) = (F ; h + slack ; (lambda,gamma) o slack).
  Vector kkt_map(const Vector& z) const {
    const int X = L_.X, A = L_.A, n = L_.n(), m = L_.m(), m1 = L_.m1();
    const double b = s_.beta;
    Matrix nu(X, A);
    for (int x = 0; x < X; ++x)
      for (int a = 0; a < A; ++a) nu(x, a) = z(L_.nu(x, a));
    const Vector mu = z.segment(L_.n_nu(), X);
    const Vector lam = z.segment(n, m1);
    const Vector gam = z.segment(n + m1, L_.m2());
    const Vector mult = z.segment(n, m);
    const Vector sl = z.segment(n + m, m);

    const Kernel K = transition_kernel_raw(mu);
    const Vector lf = lam.tail(X);
    const Vector ga = gam.head(X), gc = gam.tail(X);
    const double gb = gam(X);

    Vector H(L_.dim());
    // player-1 stationarity in nu
    for (int x = 0; x < X; ++x)
      for (int a = 0; a < A; ++a) {
        double v = cost(x, a, mu) - lam(L_.nu(x, a)) - lf(x);
        v += b * K.trans[a].row(x).dot(lf);
        H(L_.nu(x, a)) = v;
      }
    // player-2 stationarity in mu
    Vector nuflat(X * A);
    for (int x = 0; x < X; ++x)
      for (int a = 0; a < A; ++a) nuflat(x * A + a) = nu(x, a);
    Vector g2 = share_cost_ ? Vector(C1_.transpose() * nuflat) : Vector(Vector::Zero(X));
    g2.array() += rho_;
    g2 -= ga;
    g2.array() -= gb;
    g2 -= gc;
    if (has_p1_) g2 += p1_nu(nu).transpose() * gc;
    H.segment(L_.n_nu(), X) = g2;

    auto [h1, h2] = constraints(nu, mu);
    Vector h(m);
    h << h1, h2;
    H.segment(n, m) = h + sl;
    H.segment(n + m, m) = mult.cwiseProduct(sl);
    return H;
  }

  /// Analytic Jacobian of kkt_map (exact for affine models).
  Matrix kkt_jacobian(const Vector& z) const {
    const int X = L_.X, A = L_.A, n = L_.n(), m = L_.m(), m1 = L_.m1();
    const double b = s_.beta;
    Matrix nu(X, A);
    for (int x = 0; x < X; ++x)
      for (int a = 0; a < A; ++a) nu(x, a) = z(L_.nu(x, a));
    const Vector mu = z.segment(L_.n_nu(), X);
    const Vector lf = z.segment(n + L_.n_nu(), X);
    const Vector gc = z.segment(n + m1 + X + 1, X);
    const Kernel K = transition_kernel_raw(mu);
    const Matrix Pnu = has_p1_ ? p1_nu(nu) : Matrix::Zero(X, X);  // d(nu p)/d mu
    Matrix J = Matrix::Zero(L_.dim(), L_.dim());

    const int r_g2 = L_.n_nu(), r_h = n, r_c = n + m;
    const int c_mu = L_.n_nu(), c_lam = n, c_lf = n + L_.n_nu(), c_ga = n + m1,
              c_gb = n + m1 + X, c_gc = n + m1 + X + 1, c_sl = n + m;

    for (int x = 0; x < X; ++x)
      for (int a = 0; a < A; ++a) {
        const int r = L_.nu(x, a);
        // g1 rows
        for (int zz = 0; zz < X; ++zz) {
          double v = C1_(r, zz);
          if (has_p1_)
            for (int y = 0; y < X; ++y) v += b * s_.p1(y, x, a, zz) * lf(y);
          J(r, c_mu + zz) = v;
        }
        J(r, c_lam + r) = -1.0;
        for (int y = 0; y < X; ++y) J(r, c_lf + y) = b * K(y, x, a) - (x == y ? 1.0 : 0.0);
        // g2 rows, derivative in nu(x,a)
        for (int zz = 0; zz < X; ++zz) {
          double v = share_cost_ ? C1_(r, zz) : 0.0;
          if (has_p1_)
            for (int y = 0; y < X; ++y) v += gc(y) * s_.p1(y, x, a, zz);
          J(r_g2 + zz, r) = v;
        }
      }
    for (int zz = 0; zz < X; ++zz) {
      J(r_g2 + zz, c_ga + zz) = -1.0;
      J(r_g2 + zz, c_gb) = -1.0;
      for (int y = 0; y < X; ++y) J(r_g2 + zz, c_gc + y) = Pnu(y, zz) - (y == zz ? 1.0 : 0.0);
    }
    // h + slack rows
    for (int i = 0; i < L_.n_nu(); ++i) J(r_h + i, i) = -1.0;
    const int r_flow = r_h + L_.n_nu();
    const double S = mu.sum();
    for (int y = 0; y < X; ++y) {
      for (int x = 0; x < X; ++x)
        for (int a = 0; a < A; ++a)
          J(r_flow + y, L_.nu(x, a)) = b * K(y, x, a) - (x == y ? 1.0 : 0.0);
      for (int zz = 0; zz < X; ++zz) {
        double d_init = normalize_ ? ((y == zz ? 1.0 : 0.0) - mu(y) / S) / S
                                   : (y == zz ? 1.0 : 0.0);
        J(r_flow + y, c_mu + zz) = (1.0 - b) * d_init + b * Pnu(y, zz);
      }
    }
    const int r_h2 = r_h + m1;
    for (int y = 0; y < X; ++y) {
      J(r_h2 + y, c_mu + y) = -1.0;
      J(r_h2 + X, c_mu + y) = -1.0;
      for (int x = 0; x < X; ++x)
        for (int a = 0; a < A; ++a) J(r_h2 + X + 1 + y, L_.nu(x, a)) = K(y, x, a);
      for (int zz = 0; zz < X; ++zz)
        J(r_h2 + X + 1 + y, c_mu + zz) = Pnu(y, zz) - (y == zz ? 1.0 : 0.0);
    }
    for (int i = 0; i < m; ++i) {
      J(r_h + i, c_sl + i) = 1.0;
      J(r_c + i, c_lam + i) = z(c_sl + i);
      J(r_c + i, c_sl + i) = z(c_lam + i);
    }
    return J;
  }

  Matrix jacobian(const Vector& z, const GnepConfig& cfg) const {
    if (cfg.jacobian == JacobianMode::Analytic) return kkt_jacobian(z);
    return jacobian_fd([this](const Vector& w) { return kkt_map(w); }, z, cfg.fd_step);
  }

 private:
  double cost(int x, int a, const Vector& mu) const {
    return shift_ + c0_(x, a) + C1_.row(x * L_.A + a).dot(mu);
  }

  /// Kernel at arbitrary (not necessarily simplex) mu, no clamping.
  Kernel transition_kernel_raw(const Vector& mu) const {
    Kernel K;
    K.trans.assign(L_.A, Matrix::Zero(L_.X, L_.X));
    for (int x = 0; x < L_.X; ++x)
      for (int a = 0; a < L_.A; ++a)
        for (int y = 0; y < L_.X; ++y) {
          double v = s_.p0(y, x, a);
          if (has_p1_)
            for (int z = 0; z < L_.X; ++z) v += s_.p1(y, x, a, z) * mu(z);
          K.trans[a](x, y) = v;
        }
    return K;
  }

  /// (y,z) -> sum_{x,a} P1[y][x][a][z] nu(x,a)
  Matrix p1_nu(const Matrix& nu) const {
    Matrix out = Matrix::Zero(L_.X, L_.X);
    for (int y = 0; y < L_.X; ++y)
      for (int x = 0; x < L_.X; ++x)
        for (int a = 0; a < L_.A; ++a)
          for (int z = 0; z < L_.X; ++z) out(y, z) += s_.p1(y, x, a, z) * nu(x, a);
    return out;
  }

  ModelSpec s_;
  GnepLayout L_;
  bool normalize_;
  bool share_cost_ = true;
  Matrix c0_, C1_;
  bool has_p1_ = false;
  double rho_ = 1.0;
  double shift_ = 0.0;
};

/// K log(|u|^2 + |v|^2) - sum log v, u = first n entries of H, v the rest.
inline double potential(const Vector& Hz, int n, double K) {
  const auto v = Hz.tail(Hz.size() - n);
  if ((v.array() <= 0.0).any())
    throw BoundaryViolation("potential: v-block of H is not strictly positive");
  return K * std::log(Hz.squaredNorm()) - v.array().log().sum();
}

/// Gradient of the potential with respect to H.
inline Vector potential_gradient(const Vector& Hz, int n, double K) {
  const double r = Hz.squaredNorm();
  Vector g = 2.0 * K * Hz / r;
  g.tail(Hz.size() - n) -= Hz.tail(Hz.size() - n).cwiseInverse();
  return g;
}

inline GnepVariables initial_point(const GnepProblem& P) {
  const GnepLayout& L = P.layout();
  GnepVariables v;
  v.nu = Vector::Constant(L.n_nu(), 1.0 / L.n_nu());
  v.mu = Vector::Constant(L.X, 1.0 / L.X);
  v.lambda = Vector::Ones(L.m1());
  v.gamma = Vector::Ones(L.m2());
  Matrix nu = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                             Eigen::RowMajor>>(v.nu.data(), L.X, L.A);
  auto [h1, h2] = P.constraints(nu, v.mu);
  v.slack_lambda = (1.0 - h1.array()).max(1.0).matrix();
  v.slack_gamma = (1.0 - h2.array()).max(1.0).matrix();
  return v;
}

inline bool z_interior(const GnepLayout& L, const Vector& z) {
  return (z.tail(2 * L.m()).array() > 0.0).all();
}

inline bool H_interior(const GnepLayout& L, const Vector& Hz) {
  return (Hz.tail(2 * L.m()).array() > 0.0).all();
}

struct Direction {
  Vector d;
  double slope;  // <grad psi, d>
  bool used_pinv = false;
};

/// d = grad H^{-1}(sigma <a,H> a - H), with pseudoinverse fallback.
inline Direction newton_direction(const GnepProblem& P, const Vector& z, const Vector& Hz,
                                  const Matrix& J, double sigma, double K) {
  const GnepLayout& L = P.layout();
  const int n = L.n(), two_m = 2 * L.m();
  Vector a = Vector::Zero(Hz.size());
  a.tail(two_m).setConstant(1.0 / std::sqrt(double(two_m)));
  Vector rhs = sigma * a.dot(Hz) * a - Hz;
  Direction out;
  try {
    out.d = solve_linear(J, rhs);
    if (!out.d.allFinite()) throw SingularMatrix("non-finite Newton step");
  } catch (const SingularMatrix&) {
    out.d = pseudo_inverse(J) * rhs;
    out.used_pinv = true;
  }
  out.slope = (J.transpose() * potential_gradient(Hz, n, K)).dot(out.d);
  (void)z;
  return out;
}

inline Vector newton_direction(const GnepProblem& P, const Vector& z, double sigma,
                               const GnepConfig& cfg) {
  const double K = cfg.K ? *cfg.K : 2.0 * P.layout().m();
  return newton_direction(P, z, P.kkt_map(z), P.jacobian(z, cfg), sigma, K).d;
}

struct ArmijoResult {
  bool accepted = false;
  double t = 0.0;
  Vector z_next, H_next;
  double psi_next = 0.0;
};

/// Largest t = kappa^l keeping z and the v-block of H interior with Armijo decrease.
inline ArmijoResult armijo_step(const GnepProblem& P, const Vector& z, const Vector& d,
                                double psi0, double slope, double K, const GnepConfig& cfg) {
  const GnepLayout& L = P.layout();
  ArmijoResult r;
  double t = 1.0;
  for (int l = 0; l <= cfg.max_backtracks; ++l, t *= cfg.kappa) {
    Vector zn = z + t * d;
    if (!z_interior(L, zn)) continue;
    Vector Hn = P.kkt_map(zn);
    if (!Hn.allFinite() || !H_interior(L, Hn)) continue;
    const double pn = potential(Hn, L.n(), K);
    if (pn <= psi0 + cfg.armijo_alpha * t * slope) {
      r.accepted = true;
      r.t = t;
      r.z_next = std::move(zn);
      r.H_next = std::move(Hn);
      r.psi_next = pn;
      return r;
    }
  }
  return r;
}

struct GnepResult {
  Equilibrium equilibrium;
  KktReport report;
  Vector z;
};

inline Matrix nu_matrix(const GnepLayout& L, const Vector& z) {
  Matrix nu(L.X, L.A);
  for (int x = 0; x < L.X; ++x)
    for (int a = 0; a < L.A; ++a) nu(x, a) = z(L.nu(x, a));
  return nu;
}

/**
 * Optimality gap and invariance residual of (pi, mu): the gap is the
 * expected discounted cost of pi from mu minus that of an optimal policy,
 * the residual is |mu - mu P_pi|_inf.
 */
inline std::pair<double, double> verify_mfe(const ModelSpec& s, const Policy& pi,
                                            const Vector& mu) {
  const Kernel K = transition_kernel(s, mu);
  const Matrix c = cost_table(s, mu);
  const PolicyResult opt = value_iteration(s, mu, 1e-13);
  const Vector Vpi = policy_evaluation(K, c, pi, s.beta);
  const Vector Vopt = policy_evaluation(K, c, opt.policy, s.beta);
  const double gap = std::max(0.0, mu.dot(Vpi) - mu.dot(Vopt));
  const double res = (mu.transpose() - mu.transpose() * K.under(pi)).cwiseAbs().maxCoeff();
  return {gap, res};
}

/// Expected discounted cost of pi from mu, for relative gap reporting.
inline double policy_cost(const ModelSpec& s, const Policy& pi, const Vector& mu) {
  return mu.dot(policy_evaluation(s, pi, mu));
}

inline Equilibrium extract_equilibrium(const GnepProblem& P, const Vector& z) {
  const GnepLayout& L = P.layout();
  Equilibrium e;
  Matrix nu = nu_matrix(L, z).cwiseMax(0.0);
  e.occupation = nu / nu.sum();
  Vector mu = z.segment(L.n_nu(), L.X).cwiseMax(0.0);
  e.mean_field = mu / mu.sum();
  e.policy = disintegrate(e.occupation);
  auto [gap, res] = verify_mfe(P.spec(), e.policy, e.mean_field);
  e.optimality_gap = gap;
  e.invariance_residual = res;
  return e;
}

inline void fill_block_residuals(const GnepLayout& L, const Vector& Hz, KktReport& rep) {
  rep.residual_F = Hz.head(L.n()).cwiseAbs().maxCoeff();
  rep.residual_feas = Hz.segment(L.n(), L.m()).cwiseAbs().maxCoeff();
  rep.residual_comp = Hz.tail(L.m()).cwiseAbs().maxCoeff();
}

/**
 * Potential-reduction interior-point iteration on H(z) = 0.
 * Never throws on solver failure: the report's status says what happened.
 */
inline GnepResult run_gnep(const ModelSpec& spec, const GnepConfig& cfg = {}) {
  if (!(cfg.sigma >= 0.0 && cfg.sigma < 1.0)) throw BadParameter("sigma must lie in [0,1)");
  if (!(cfg.kappa > 0.0 && cfg.kappa < 1.0)) throw BadParameter("kappa must lie in (0,1)");
  if (!(cfg.armijo_alpha > 0.0 && cfg.armijo_alpha <= 1.0))
    throw BadParameter("armijo_alpha must lie in (0,1]");
  const GnepProblem P(spec, cfg);
  const GnepLayout& L = P.layout();
  const double K = cfg.K ? *cfg.K : 2.0 * L.m();
  if (!(K > L.m())) throw BadParameter("potential constant K must exceed m");

  GnepResult out;
  KktReport& rep = out.report;
  Vector z = initial_point(P).pack();
  Vector Hz = P.kkt_map(z);
  double psi = potential(Hz, L.n(), K);
  rep.h_norm_history.push_back(Hz.norm());
  rep.psi_history.push_back(psi);
  rep.status = "max_iter";
  int k = 0;
  for (; k < cfg.max_iter; ++k) {
    if (Hz.norm() <= cfg.tol) break;
    const Matrix J = P.jacobian(z, cfg);
    const Direction dir = newton_direction(P, z, Hz, J, cfg.sigma, K);
    if (!(dir.slope < 0.0)) {
      rep.status = "non_descent";
      rep.last_slope = dir.slope;
      break;
    }
    ArmijoResult step = armijo_step(P, z, dir.d, psi, dir.slope, K, cfg);
    if (!step.accepted) {
      rep.status = "line_search_stall";
      break;
    }
    z = std::move(step.z_next);
    Hz = std::move(step.H_next);
    psi = step.psi_next;
    rep.h_norm_history.push_back(Hz.norm());
    rep.psi_history.push_back(psi);
    rep.step_history.push_back(step.t);
  }
  rep.iterations = k;
  rep.converged = Hz.norm() <= cfg.tol;
  if (rep.converged) rep.status = "converged";
  fill_block_residuals(L, Hz, rep);
  out.z = z;
  out.equilibrium = extract_equilibrium(P, z);
  return out;
}

/// Solver failures thrown by solve_gnep; the full run is kept for diagnosis.
struct GnepNotConverged : NotConverged {
  explicit GnepNotConverged(GnepResult r)
      : NotConverged("no KKT point within " + std::to_string(r.report.iterations) +
                     " iterations (|H| = " + std::to_string(r.report.h_norm_history.back()) + ")"),
        result(std::move(r)) {}
  GnepResult result;
};
struct GnepNonDescent : NonDescent {
  GnepNonDescent(GnepResult r, double slope)
      : NonDescent(r.report.iterations, slope), result(std::move(r)) {}
  GnepResult result;
};
struct GnepLineSearchStall : LineSearchStall {
  explicit GnepLineSearchStall(GnepResult r)
      : LineSearchStall(r.report.iterations), result(std::move(r)) {}
  GnepResult result;
};

/// run_gnep, raising on anything but convergence.
inline GnepResult solve_gnep(const ModelSpec& spec, const GnepConfig& cfg = {}) {
  GnepResult r = run_gnep(spec, cfg);
  if (r.report.converged) return r;
  if (r.report.status == "non_descent") {
    const double slope = r.report.last_slope;
    throw GnepNonDescent(std::move(r), slope);
  }
  if (r.report.status == "line_search_stall") throw GnepLineSearchStall(std::move(r));
  throw GnepNotConverged(std::move(r));
}

}  // namespace mfgirl
