#pragma once

#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "errors.hpp"
#include "numerics.hpp"

namespace mfgirl {

/**
 * Finite mean-field game instance with transitions and features affine in
 * the mean-field term:
 *
 *   p(y|x,a,mu) = P0[y][x][a] + sum_z P1[y][x][a][z] mu(z)
 *   f(x,a,mu)_j = F0[x][a][j] + sum_z F1[x][a][j][z] mu(z)
 *
 * Tensors are stored flat in the index order shown. Costs are
 * c(x,a,mu) = <theta, f(x,a,mu)> (minimization convention).
 */
struct ModelSpec {
  int n_states = 0;
  int n_actions = 0;
  int feature_dim = 0;
  double beta = 0.0;
  std::optional<Vector> theta;
  std::vector<double> state_labels;  // empty when absent
  std::vector<double> P0, P1, F0, F1;

  int X() const { return n_states; }
  int A() const { return n_actions; }
  int k() const { return feature_dim; }

  double& p0(int y, int x, int a) { return P0[(std::size_t(y) * X() + x) * A() + a]; }
  double p0(int y, int x, int a) const { return P0[(std::size_t(y) * X() + x) * A() + a]; }
  double& p1(int y, int x, int a, int z) {
    return P1[((std::size_t(y) * X() + x) * A() + a) * X() + z];
  }
  double p1(int y, int x, int a, int z) const {
    return P1[((std::size_t(y) * X() + x) * A() + a) * X() + z];
  }
  double& f0(int x, int a, int j) { return F0[(std::size_t(x) * A() + a) * k() + j]; }
  double f0(int x, int a, int j) const { return F0[(std::size_t(x) * A() + a) * k() + j]; }
  double& f1(int x, int a, int j, int z) {
    return F1[((std::size_t(x) * A() + a) * k() + j) * X() + z];
  }
  double f1(int x, int a, int j, int z) const {
    return F1[((std::size_t(x) * A() + a) * k() + j) * X() + z];
  }

  /// Allocate zeroed tensors for the current dimensions.
  void allocate() {
    const std::size_t X_ = X(), A_ = A(), k_ = k();
    P0.assign(X_ * X_ * A_, 0.0);
    P1.assign(X_ * X_ * A_ * X_, 0.0);
    F0.assign(X_ * A_ * k_, 0.0);
    F1.assign(X_ * A_ * k_ * X_, 0.0);
  }

  const Vector& require_theta() const {
    if (!theta) throw MissingTheta();
    return *theta;
  }

  bool operator==(const ModelSpec&) const = default;
};

/// Transition kernel frozen at some mu. trans[a](x,y) = p(y|x,a).
struct Kernel {
  std::vector<Matrix> trans;

  int X() const { return trans.empty() ? 0 : int(trans[0].rows()); }
  int A() const { return int(trans.size()); }
  double operator()(int y, int x, int a) const { return trans[a](x, y); }

  /// Row-stochastic chain under a policy (rows: x, cols: y).
  Matrix under(const Matrix& pi) const {
    Matrix P = Matrix::Zero(X(), X());
    for (int a = 0; a < A(); ++a) P += pi.col(a).asDiagonal() * trans[a];
    return P;
  }

  /// Marginal of the next state under a joint measure: (nu p)(y).
  Vector push(const Matrix& nu) const {
    Vector out = Vector::Zero(X());
    for (int a = 0; a < A(); ++a) out += trans[a].transpose() * nu.col(a);
    return out;
  }
};

/// Feature vectors f(x,a,mu); row x*A+a.
struct FeatureTable {
  int n_actions = 0;
  Matrix rows;

  auto at(int x, int a) const { return rows.row(x * n_actions + a); }
};

using CostTable = Matrix;  // X x A

inline void validate_simplex(const Vector& mu, int n, const char* what) {
  if (mu.size() != n)
    throw ValidationError(std::string(what) + ": expected length " + std::to_string(n) +
                          ", got " + std::to_string(mu.size()));
  if (!mu.allFinite() || (mu.array() < -1e-12).any() || std::abs(mu.sum() - 1.0) > 1e-9)
    throw ValidationError(std::string(what) + ": not a probability vector");
}

inline Kernel transition_kernel(const ModelSpec& s, const Vector& mu) {
  Kernel K;
  K.trans.assign(s.A(), Matrix::Zero(s.X(), s.X()));
  for (int x = 0; x < s.X(); ++x)
    for (int a = 0; a < s.A(); ++a)
      for (int y = 0; y < s.X(); ++y) {
        double v = s.p0(y, x, a);
        for (int z = 0; z < s.X(); ++z) v += s.p1(y, x, a, z) * mu(z);
        if (v < 0.0 && v >= -1e-12) v = 0.0;
        K.trans[a](x, y) = v;
      }
  return K;
}

inline FeatureTable feature_table(const ModelSpec& s, const Vector& mu) {
  FeatureTable F{s.A(), Matrix::Zero(s.X() * s.A(), s.k())};
  for (int x = 0; x < s.X(); ++x)
    for (int a = 0; a < s.A(); ++a)
      for (int j = 0; j < s.k(); ++j) {
        double v = s.f0(x, a, j);
        for (int z = 0; z < s.X(); ++z) v += s.f1(x, a, j, z) * mu(z);
        F.rows(x * s.A() + a, j) = v;
      }
  return F;
}

inline CostTable cost_table(const ModelSpec& s, const Vector& mu, const Vector& theta) {
  FeatureTable F = feature_table(s, mu);
  Vector flat = F.rows * theta;
  CostTable c(s.X(), s.A());
  for (int x = 0; x < s.X(); ++x)
    for (int a = 0; a < s.A(); ++a) c(x, a) = flat(x * s.A() + a);
  return c;
}

inline CostTable cost_table(const ModelSpec& s, const Vector& mu) {
  return cost_table(s, mu, s.require_theta());
}

/// Check every ModelSpec invariant; throws ValidationError naming the first violation.
inline void validate(const ModelSpec& s) {
  auto fail = [](const std::string& m) { throw ValidationError(m); };
  if (s.n_states < 1) fail("n_states must be >= 1");
  if (s.n_actions < 1) fail("n_actions must be >= 1");
  if (s.feature_dim < 0) fail("feature_dim must be >= 0");
  if (!(s.beta > 0.0 && s.beta < 1.0)) fail("beta must lie in (0,1)");
  const std::size_t X = s.X(), A = s.A(), k = s.k();
  if (s.P0.size() != X * X * A) fail("P0 has wrong size");
  if (s.P1.size() != X * X * A * X) fail("P1 has wrong size");
  if (s.F0.size() != X * A * k) fail("F0 has wrong size");
  if (s.F1.size() != X * A * k * X) fail("F1 has wrong size");
  if (s.theta && s.theta->size() != s.k()) fail("theta length differs from feature_dim");
  if (s.theta && !s.theta->allFinite()) fail("theta has non-finite entries");
  if (!s.state_labels.empty() && s.state_labels.size() != X)
    fail("state_labels length differs from n_states");
  for (const auto* t : {&s.P0, &s.P1, &s.F0, &s.F1})
    for (double v : *t)
      if (!std::isfinite(v)) fail("model tensors contain non-finite entries");
  for (int x = 0; x < s.X(); ++x)
    for (int a = 0; a < s.A(); ++a) {
      double sum = 0.0;
      for (int y = 0; y < s.X(); ++y) sum += s.p0(y, x, a);
      if (std::abs(sum - 1.0) > 1e-9) {
        std::ostringstream os;
        os << "rows of P0 at (x=" << x << ",a=" << a << ") sum to " << sum;
        fail(os.str());
      }
      for (int z = 0; z < s.X(); ++z) {
        double s1 = 0.0;
        for (int y = 0; y < s.X(); ++y) s1 += s.p1(y, x, a, z);
        if (std::abs(s1) > 1e-9) {
          std::ostringstream os;
          os << "rows of P1 at (x=" << x << ",a=" << a << ",z=" << z << ") sum to " << s1
             << " instead of 0";
          fail(os.str());
        }
        for (int y = 0; y < s.X(); ++y)
          if (s.p0(y, x, a) + s.p1(y, x, a, z) < -1e-12) {
            std::ostringstream os;
            os << "p(y=" << y << "|x=" << x << ",a=" << a << ") is negative at simplex vertex "
               << z;
            fail(os.str());
          }
      }
    }
}

/**
 * Malware spread models.
 *
 * 2 states (healthy 0, infected 1): doing nothing in 0 gets infected with
 * probability q, infected stays infected, repair resets to 0. Features
 * (x, x*mu(1), a).
 *
 * 10 states on the grid 0.0..0.9: doing nothing moves uniformly to a state
 * at or above the current one, repair resets to 0. Features (x, x*mu_av, a)
 * with mu_av the label-weighted mean of mu.
 */
inline ModelSpec builtin_malware(int n_states, const Vector& theta, std::optional<double> q,
                                 double beta) {
  if (n_states != 2 && n_states != 10)
    throw BadParameter("builtin malware model needs 2 or 10 states");
  if (theta.size() != 3) throw BadParameter("malware theta must have length 3");
  if (!(beta > 0.0 && beta < 1.0)) throw BadParameter("beta must lie in (0,1)");
  ModelSpec s;
  s.n_states = n_states;
  s.n_actions = 2;
  s.feature_dim = 3;
  s.beta = beta;
  s.theta = theta;
  s.allocate();
  const int X = n_states;
  if (X == 2) {
    if (!q || !(*q > 0.0 && *q < 1.0)) throw BadParameter("q must lie in (0,1)");
    s.state_labels = {0.0, 1.0};
    s.p0(0, 0, 0) = 1.0 - *q;
    s.p0(1, 0, 0) = *q;
    s.p0(1, 1, 0) = 1.0;
    s.p0(0, 0, 1) = 1.0;
    s.p0(0, 1, 1) = 1.0;
    for (int x = 0; x < 2; ++x)
      for (int a = 0; a < 2; ++a) {
        s.f0(x, a, 0) = x;
        s.f0(x, a, 2) = a;
        s.f1(x, a, 1, 1) = x;
      }
  } else {
    s.state_labels.resize(X);
    for (int x = 0; x < X; ++x) s.state_labels[x] = x / 10.0;
    for (int x = 0; x < X; ++x) {
      for (int y = x; y < X; ++y) s.p0(y, x, 0) = 1.0 / (X - x);
      s.p0(0, x, 1) = 1.0;
      for (int a = 0; a < 2; ++a) {
        s.f0(x, a, 0) = s.state_labels[x];
        s.f0(x, a, 2) = a;
        for (int z = 0; z < X; ++z) s.f1(x, a, 1, z) = s.state_labels[x] * s.state_labels[z];
      }
    }
  }
  return s;
}

// ---- JSON ----------------------------------------------------------------

using json = nlohmann::json;

inline json model_to_json(const ModelSpec& s) {
  const int X = s.X(), A = s.A(), k = s.k();
  json j;
  j["n_states"] = X;
  j["n_actions"] = A;
  j["feature_dim"] = k;
  j["beta"] = s.beta;
  if (s.theta) j["theta"] = std::vector<double>(s.theta->data(), s.theta->data() + k);
  if (!s.state_labels.empty()) j["state_labels"] = s.state_labels;
  json P0 = json::array(), P1 = json::array(), F0 = json::array(), F1 = json::array();
  for (int y = 0; y < X; ++y) {
    json p0y = json::array(), p1y = json::array();
    for (int x = 0; x < X; ++x) {
      json p0x = json::array(), p1x = json::array();
      for (int a = 0; a < A; ++a) {
        p0x.push_back(s.p0(y, x, a));
        json p1a = json::array();
        for (int z = 0; z < X; ++z) p1a.push_back(s.p1(y, x, a, z));
        p1x.push_back(p1a);
      }
      p0y.push_back(p0x);
      p1y.push_back(p1x);
    }
    P0.push_back(p0y);
    P1.push_back(p1y);
  }
  for (int x = 0; x < X; ++x) {
    json f0x = json::array(), f1x = json::array();
    for (int a = 0; a < A; ++a) {
      json f0a = json::array(), f1a = json::array();
      for (int jj = 0; jj < k; ++jj) {
        f0a.push_back(s.f0(x, a, jj));
        json f1j = json::array();
        for (int z = 0; z < X; ++z) f1j.push_back(s.f1(x, a, jj, z));
        f1a.push_back(f1j);
      }
      f0x.push_back(f0a);
      f1x.push_back(f1a);
    }
    F0.push_back(f0x);
    F1.push_back(f1x);
  }
  j["P0"] = P0;
  j["P1"] = P1;
  j["F0"] = F0;
  j["F1"] = F1;
  return j;
}

namespace detail {

inline const json& nested(const json& j, std::initializer_list<int> idx, const char* name) {
  const json* cur = &j;
  for (int i : idx) {
    if (!cur->is_array() || int(cur->size()) <= i)
      throw ValidationError(std::string(name) + " has wrong nesting or shape");
    cur = &(*cur)[i];
  }
  return *cur;
}

inline double number(const json& v, const char* name) {
  if (!v.is_number()) throw ValidationError(std::string(name) + " entries must be numbers");
  return v.get<double>();
}

inline void check_len(const json& v, std::size_t n, const char* name) {
  if (!v.is_array() || v.size() != n)
    throw ValidationError(std::string(name) + " has wrong nesting or shape");
}

}  // namespace detail

/// Parse and validate a model document.
inline ModelSpec model_from_json(const json& j) {
  using detail::check_len;
  using detail::number;
  if (!j.is_object()) throw ValidationError("model document must be a JSON object");
  for (const char* key : {"n_states", "n_actions", "feature_dim", "beta", "P0", "F0"})
    if (!j.contains(key)) throw ValidationError(std::string("missing key '") + key + "'");
  ModelSpec s;
  try {
    s.n_states = j.at("n_states").get<int>();
    s.n_actions = j.at("n_actions").get<int>();
    s.feature_dim = j.at("feature_dim").get<int>();
    s.beta = j.at("beta").get<double>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("bad scalar field: ") + e.what());
  }
  if (s.n_states < 1 || s.n_actions < 1 || s.feature_dim < 0)
    throw ValidationError("dimensions must be positive");
  const int X = s.X(), A = s.A(), k = s.k();
  s.allocate();
  if (j.contains("theta")) {
    const json& t = j["theta"];
    check_len(t, std::size_t(k), "theta");
    Vector th(k);
    for (int i = 0; i < k; ++i) th(i) = number(t[i], "theta");
    s.theta = th;
  }
  if (j.contains("state_labels")) {
    const json& l = j["state_labels"];
    check_len(l, std::size_t(X), "state_labels");
    for (int i = 0; i < X; ++i) s.state_labels.push_back(number(l[i], "state_labels"));
  }
  const json& P0 = j["P0"];
  check_len(P0, X, "P0");
  for (int y = 0; y < X; ++y) {
    check_len(P0[y], X, "P0");
    for (int x = 0; x < X; ++x) {
      check_len(P0[y][x], A, "P0");
      for (int a = 0; a < A; ++a) s.p0(y, x, a) = number(P0[y][x][a], "P0");
    }
  }
  if (j.contains("P1")) {
    const json& P1 = j["P1"];
    check_len(P1, X, "P1");
    for (int y = 0; y < X; ++y) {
      check_len(P1[y], X, "P1");
      for (int x = 0; x < X; ++x) {
        check_len(P1[y][x], A, "P1");
        for (int a = 0; a < A; ++a) {
          check_len(P1[y][x][a], X, "P1");
          for (int z = 0; z < X; ++z) s.p1(y, x, a, z) = number(P1[y][x][a][z], "P1");
        }
      }
    }
  }
  const json& F0 = j["F0"];
  check_len(F0, X, "F0");
  for (int x = 0; x < X; ++x) {
    check_len(F0[x], A, "F0");
    for (int a = 0; a < A; ++a) {
      check_len(F0[x][a], k, "F0");
      for (int jj = 0; jj < k; ++jj) s.f0(x, a, jj) = number(F0[x][a][jj], "F0");
    }
  }
  if (j.contains("F1")) {
    const json& F1 = j["F1"];
    check_len(F1, X, "F1");
    for (int x = 0; x < X; ++x) {
      check_len(F1[x], A, "F1");
      for (int a = 0; a < A; ++a) {
        check_len(F1[x][a], k, "F1");
        for (int jj = 0; jj < k; ++jj) {
          check_len(F1[x][a][jj], X, "F1");
          for (int z = 0; z < X; ++z) s.f1(x, a, jj, z) = number(F1[x][a][jj][z], "F1");
        }
      }
    }
  }
  validate(s);
  return s;
}

/// Parse a model file's contents. ParseError on malformed JSON.
inline ModelSpec load_model(const std::string& document) {
  json j;
  try {
    j = json::parse(document);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("model document is not valid JSON: ") + e.what());
  }
  return model_from_json(j);
}

}  // namespace mfgirl
