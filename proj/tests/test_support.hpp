#pragma once

#include <random>

#include "mfgirl/mdp.hpp"
#include "mfgirl/model.hpp"

namespace testing_support {

using mfgirl::Matrix;
using mfgirl::ModelSpec;
using mfgirl::Vector;

inline Vector random_simplex(std::mt19937_64& g, int n, double floor = 0.0) {
  std::exponential_distribution<double> e(1.0);
  Vector v(n);
  for (auto& x : v) x = e(g) + floor;
  return v / v.sum();
}

inline Matrix random_policy(std::mt19937_64& g, int X, int A) {
  Matrix pi(X, A);
  for (int x = 0; x < X; ++x) pi.row(x) = random_simplex(g, A, 0.05).transpose();
  return pi;
}

/**
 * Random affine model: the kernel at vertex e_z is an arbitrary stochastic
 * table K_z, so P0 = K_0 and P1[.][z] = K_z - K_0.
 */
inline ModelSpec random_model(std::mt19937_64& g, int X, int A, int k, bool mean_field_kernel,
                              double beta = 0.8) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  ModelSpec s;
  s.n_states = X;
  s.n_actions = A;
  s.feature_dim = k;
  s.beta = beta;
  s.allocate();
  std::vector<std::vector<Vector>> vertex(X, std::vector<Vector>(X * A));
  for (int z = 0; z < X; ++z)
    for (int xa = 0; xa < X * A; ++xa)
      vertex[z][xa] = random_simplex(g, X, 0.02);
  for (int x = 0; x < X; ++x)
    for (int a = 0; a < A; ++a) {
      const Vector& base = vertex[0][x * A + a];
      for (int y = 0; y < X; ++y) {
        s.p0(y, x, a) = base(y);
        if (mean_field_kernel)
          for (int z = 0; z < X; ++z) s.p1(y, x, a, z) = vertex[z][x * A + a](y) - base(y);
      }
      for (int j = 0; j < k; ++j) {
        s.f0(x, a, j) = u(g);
        for (int z = 0; z < X; ++z) s.f1(x, a, j, z) = 0.5 * u(g);
      }
    }
  Vector th(k);
  for (auto& t : th) t = u(g);
  s.theta = th;
  return s;
}

/// mu with mu = mu P(mu, pi), by repeated stationary solves.
inline Vector consistent_mean_field(const ModelSpec& s, const Matrix& pi) {
  Vector mu = Vector::Constant(s.X(), 1.0 / s.X());
  for (int it = 0; it < 10000; ++it) {
    const Vector next = mfgirl::stationary_distribution(s, pi, mu);
    const double change = (next - mu).cwiseAbs().maxCoeff();
    mu = 0.5 * (mu + next);
    if (change < 1e-15) break;
  }
  return mu;
}

inline ModelSpec malware2() {
  Vector th(3);
  th << 0.2, 1.0, 0.4;
  return mfgirl::builtin_malware(2, th, 0.9, 0.8);
}

inline ModelSpec malware10() {
  Vector th(3);
  th << 0.1, 1.0, 0.4;
  return mfgirl::builtin_malware(10, th, std::nullopt, 0.8);
}

}  // namespace testing_support
