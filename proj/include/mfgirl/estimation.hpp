#pragma once

#include <cmath>
#include <cstdint>
#include <ostream>
#include <random>
#include <vector>

#include "mdp.hpp"
#include "model.hpp"
#include "numerics.hpp"

namespace mfgirl {

struct Step {
  int state;
  int action;
  bool operator==(const Step&) const = default;
};

struct Trajectory {
  std::vector<Step> steps;
  std::uint64_t seed = 0;  // stream seed derived from (run seed, index)
};

struct EstimatorConfig {
  int n_trajectories = 1;
  int horizon = 1;
  std::uint64_t seed = 0;
};

struct FeatureEstimate {
  Vector value;
  double tail_bound = 0.0;  // beta^T max|f| / (1-beta), not included in value
};

namespace detail {

/// SplitMix64 finalizer; used to derive independent per-trajectory streams.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Uniform in [0,1) from 53 high bits; platform independent, unlike the std distributions.
inline double unit(std::mt19937_64& g) { return double(g() >> 11) * 0x1.0p-53; }

inline int draw(std::mt19937_64& g, const Eigen::Ref<const Vector>& probs) {
  const double u = unit(g);
  double acc = 0.0;
  const int n = int(probs.size());
  for (int i = 0; i < n; ++i) {
    acc += probs(i);
    if (u < acc) return i;
  }
  // rounding: fall back to the last index with positive mass
  for (int i = n - 1; i >= 0; --i)
    if (probs(i) > 0.0) return i;
  return n - 1;
}

}  // namespace detail

inline std::uint64_t trajectory_seed(std::uint64_t seed, std::uint64_t index) {
  return detail::mix64(detail::mix64(seed) ^ detail::mix64(index + 0x632be59bd9b4e019ULL));
}

/// One trajectory of length T from its own stream.
inline Trajectory simulate_one(const Kernel& K, const Policy& pi, const Vector& mu0, int T,
                               std::uint64_t stream_seed) {
  std::mt19937_64 g(stream_seed);
  Trajectory tr;
  tr.seed = stream_seed;
  tr.steps.reserve(T);
  int x = detail::draw(g, mu0);
  for (int t = 0; t < T; ++t) {
    const int a = detail::draw(g, pi.row(x).transpose());
    tr.steps.push_back({x, a});
    x = detail::draw(g, K.trans[a].row(x).transpose());
  }
  return tr;
}

/**
 * Simulate d trajectories of length T under pi with the kernel frozen at mu.
 * Trajectory i depends only on (seed, i).
 */
inline std::vector<Trajectory> simulate(const ModelSpec& s, const Policy& pi, const Vector& mu,
                                        const Vector& mu0, const EstimatorConfig& cfg) {
  if (cfg.n_trajectories < 1 || cfg.horizon < 1)
    throw BadParameter("need at least one trajectory and horizon >= 1");
  validate_simplex(mu0, s.X(), "initial distribution");
  if (pi.rows() != s.X() || pi.cols() != s.A()) throw BadParameter("policy shape mismatch");
  const Kernel K = transition_kernel(s, mu);
  std::vector<Trajectory> out(cfg.n_trajectories);
  for (int i = 0; i < cfg.n_trajectories; ++i)
    out[i] = simulate_one(K, pi, mu0, cfg.horizon, trajectory_seed(cfg.seed, i));
  return out;
}

/// Time-and-trajectory average of state indicators.
inline Vector estimate_mean_field(const std::vector<Trajectory>& data, int n_states) {
  Vector counts = Vector::Zero(n_states);
  std::size_t total = 0;
  for (const auto& tr : data)
    for (const auto& st : tr.steps) {
      counts(st.state) += 1.0;
      ++total;
    }
  if (total == 0) throw EmptyData();
  return counts / double(total);
}

/// (1/d) sum_i sum_{t<T} beta^t f(x_i(t), a_i(t), mu_hat)
inline FeatureEstimate estimate_feature_expectation(const ModelSpec& s,
                                                    const std::vector<Trajectory>& data,
                                                    const Vector& mu_hat, double beta) {
  if (data.empty()) throw EmptyData();
  const FeatureTable F = feature_table(s, mu_hat);
  FeatureEstimate est;
  est.value = Vector::Zero(s.k());
  std::size_t T = 0;
  for (const auto& tr : data) {
    double w = 1.0;
    for (const auto& st : tr.steps) {
      est.value += w * F.at(st.state, st.action).transpose();
      w *= beta;
    }
    T = std::max(T, tr.steps.size());
  }
  if (T == 0) throw EmptyData();
  est.value /= double(data.size());
  double fmax = 0.0;
  for (Eigen::Index r = 0; r < F.rows.rows(); ++r) fmax = std::max(fmax, F.rows.row(r).norm());
  est.tail_bound = std::pow(beta, double(T)) * fmax / (1.0 - beta);
  return est;
}

/// Smallest T with beta^T max|f| / (1-beta) <= bound.
inline int horizon_for_tail(double beta, double fmax, double bound) {
  if (fmax <= 0.0) return 1;
  const double T = std::log(bound * (1.0 - beta) / fmax) / std::log(beta);
  return std::max(1, int(std::ceil(T)));
}

inline void write_trajectories_csv(std::ostream& os, const std::vector<Trajectory>& data) {
  os << "trajectory_id,t,state,action\n";
  for (std::size_t i = 0; i < data.size(); ++i)
    for (std::size_t t = 0; t < data[i].steps.size(); ++t)
      os << i << ',' << t << ',' << data[i].steps[t].state << ',' << data[i].steps[t].action
         << '\n';
}

}  // namespace mfgirl
