#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mfgirl/estimation.hpp"
#include "test_support.hpp"

using namespace mfgirl;
using namespace testing_support;

namespace {

Vector vec(std::initializer_list<double> l) {
  Vector v(static_cast<Eigen::Index>(l.size()));
  int i = 0;
  for (double x : l) v(i++) = x;
  return v;
}

Matrix reported_policy2() {
  Matrix pi(2, 2);
  pi << 0.61, 0.39, 0.0, 1.0;
  return pi;
}

ModelSpec cycle_model(int X) {
  ModelSpec s;
  s.n_states = X;
  s.n_actions = 2;
  s.feature_dim = 1;
  s.beta = 0.5;
  s.allocate();
  for (int x = 0; x < X; ++x) {
    s.p0((x + 1) % X, x, 0) = 1.0;
    s.p0(x, x, 1) = 1.0;
    for (int a = 0; a < 2; ++a) s.f0(x, a, 0) = 1.0;
  }
  return s;
}

Trajectory pinned(int state, int T) {
  Trajectory t;
  t.steps.assign(T, Step{state, 0});
  return t;
}

}  // namespace

TEST(Simulate, DeterministicPathIsPredictable) {
  const ModelSpec s = cycle_model(5);
  Matrix pi = Matrix::Zero(5, 2);
  pi.col(0).setOnes();
  Vector mu0 = Vector::Zero(5);
  mu0(2) = 1.0;
  const auto data = simulate(s, pi, Vector::Constant(5, 0.2), mu0, {3, 12, 42});
  for (const auto& tr : data) {
    ASSERT_EQ(tr.steps.size(), 12u);
    for (int t = 0; t < 12; ++t) EXPECT_EQ(tr.steps[t], (Step{(2 + t) % 5, 0}));
  }
}

TEST(Simulate, ResetKernelReturnsToZero) {
  const ModelSpec s = malware10();
  Matrix pi = Matrix::Zero(10, 2);
  pi.col(1).setOnes();
  const auto data = simulate(s, pi, Vector::Constant(10, 0.1), Vector::Constant(10, 0.1), {50, 20, 3});
  for (const auto& tr : data)
    for (std::size_t t = 1; t < tr.steps.size(); ++t) EXPECT_EQ(tr.steps[t].state, 0);
}

TEST(Simulate, OneStepFrequenciesWithinBinomialBounds) {
  std::mt19937_64 g(1);
  const ModelSpec s = random_model(g, 3, 2, 1, true);
  const Vector mu = random_simplex(g, 3);
  const Policy pi = random_policy(g, 3, 2);
  const auto data = simulate(s, pi, mu, Vector::Constant(3, 1.0 / 3), {100, 1001, 7});
  Eigen::ArrayXXd counts = Eigen::ArrayXXd::Zero(6, 3);
  Eigen::ArrayXd visits = Eigen::ArrayXd::Zero(6);
  for (const auto& tr : data)
    for (std::size_t t = 0; t + 1 < tr.steps.size(); ++t) {
      const int r = tr.steps[t].state * 2 + tr.steps[t].action;
      counts(r, tr.steps[t + 1].state) += 1;
      visits(r) += 1;
    }
  ASSERT_GE(visits.sum(), 1e5);
  const Kernel K = transition_kernel(s, mu);
  for (int x = 0; x < 3; ++x)
    for (int a = 0; a < 2; ++a)
      for (int y = 0; y < 3; ++y) {
        const double n = visits(x * 2 + a), p = K(y, x, a);
        const double sd = std::sqrt(p * (1 - p) / n);
        EXPECT_LE(std::abs(counts(x * 2 + a, y) / n - p), 3 * sd + 1e-12)
            << "x=" << x << " a=" << a << " y=" << y;
      }
}

TEST(Simulate, ReproducibleAndOrderIndependent) {
  std::mt19937_64 g(2);
  const ModelSpec s = random_model(g, 4, 3, 1, true);
  const Policy pi = random_policy(g, 4, 3);
  const Vector mu = random_simplex(g, 4);
  const EstimatorConfig cfg{20, 30, 99};
  const auto a = simulate(s, pi, mu, mu, cfg), b = simulate(s, pi, mu, mu, cfg);
  for (int i = 0; i < 20; ++i) {
    EXPECT_EQ(a[i].steps, b[i].steps);
    EXPECT_EQ(a[i].seed, trajectory_seed(99, i));
    const Trajectory alone =
        simulate_one(transition_kernel(s, mu), pi, mu, 30, trajectory_seed(99, i));
    EXPECT_EQ(alone.steps, a[i].steps);
  }
  const auto c = simulate(s, pi, mu, mu, {20, 30, 100});
  int same = 0;
  for (int i = 0; i < 20; ++i) same += c[i].steps == a[i].steps;
  EXPECT_LT(same, 20);
}

TEST(Simulate, RejectsBadConfig) {
  const ModelSpec s = malware2();
  EXPECT_THROW(simulate(s, reported_policy2(), vec({0.5, 0.5}), vec({0.5, 0.5}), {0, 10, 0}), BadParameter);
  EXPECT_THROW(simulate(s, reported_policy2(), vec({0.5, 0.5}), vec({0.5, 0.5}), {1, 0, 0}), BadParameter);
}

TEST(EstimateMeanField, ConstantStateIsDirac) {
  EXPECT_LE(max_abs(estimate_mean_field({pinned(2, 7)}, 4) - vec({0, 0, 1, 0})), 0.0);
}

TEST(EstimateMeanField, TwoPinnedTrajectories) {
  EXPECT_LE(max_abs(estimate_mean_field({pinned(0, 9), pinned(1, 9)}, 2) - vec({0.5, 0.5})), 0.0);
}

TEST(EstimateMeanField, EmptyDataThrows) {
  EXPECT_THROW(estimate_mean_field({}, 2), EmptyData);
  EXPECT_THROW(estimate_mean_field({Trajectory{}}, 2), EmptyData);
}

TEST(EstimateMeanField, AlwaysASimplexVector) {
  std::mt19937_64 g(3);
  std::uniform_int_distribution<int> st(0, 4), len(1, 20);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<Trajectory> data(1 + rep % 5);
    for (auto& tr : data) {
      const int T = len(g);
      for (int t = 0; t < T; ++t) tr.steps.push_back({st(g), 0});
    }
    const Vector m = estimate_mean_field(data, 5);
    EXPECT_GE(m.minCoeff(), 0.0);
    EXPECT_NEAR(m.sum(), 1.0, 1e-12);
  }
}

TEST(EstimateMeanField, ReportedTwoStateErgodicAverage) {
  const ModelSpec s = malware2();
  const Vector mu_E = vec({0.65, 0.35});
  const auto data = simulate(s, reported_policy2(), mu_E, mu_E, {10, 100000, 0});
  EXPECT_LE(max_abs(estimate_mean_field(data, 2) - mu_E), 0.01);
}

TEST(EstimateFeatures, NearZeroDiscountAveragesFirstStep) {
  const ModelSpec s = malware2();
  std::vector<Trajectory> data{pinned(0, 5), pinned(1, 5)};
  const FeatureEstimate fe = estimate_feature_expectation(s, data, vec({0.6, 0.4}), 1e-9);
  const FeatureTable F = feature_table(s, vec({0.6, 0.4}));
  const Vector expect = 0.5 * (F.at(0, 0) + F.at(1, 0)).transpose();
  EXPECT_LE(max_abs(fe.value - expect), 1e-8);
}

TEST(EstimateFeatures, ConstantFeatureGeometricSeries) {
  const ModelSpec s = cycle_model(3);
  const int T = 17;
  const double beta = 0.7;
  const auto data = simulate(s, Matrix::Constant(3, 2, 0.5), Vector::Constant(3, 1.0 / 3),
                             Vector::Constant(3, 1.0 / 3), {4, T, 5});
  const FeatureEstimate fe = estimate_feature_expectation(s, data, Vector::Constant(3, 1.0 / 3), beta);
  EXPECT_NEAR(fe.value(0), (1 - std::pow(beta, T)) / (1 - beta), 1e-14);
  EXPECT_NEAR(fe.tail_bound, std::pow(beta, T) / (1 - beta), 1e-15);
}

TEST(EstimateFeatures, EmptyDataThrows) {
  EXPECT_THROW(estimate_feature_expectation(malware2(), {}, vec({0.5, 0.5}), 0.8), EmptyData);
}

TEST(EstimateFeatures, ReportedTwoStateWithinOnePercent) {
  const ModelSpec s = malware2();
  const Vector mu_E = vec({0.65, 0.35});
  const double fmax = std::sqrt(1 + 0.35 * 0.35 + 1);
  const int T = horizon_for_tail(s.beta, fmax, 1e-4);
  EXPECT_LE(std::pow(s.beta, T) * fmax / (1 - s.beta), 1e-4);
  const auto data = simulate(s, reported_policy2(), mu_E, mu_E, {10000, T, 0});
  const Vector mu_hat = estimate_mean_field(data, 2);
  const FeatureEstimate fe = estimate_feature_expectation(s, data, mu_hat, s.beta);
  const Vector target = vec({1.75, 0.6125, 3.0175});
  for (int j = 0; j < 3; ++j)
    EXPECT_LE(std::abs(fe.value(j) - target(j)), 0.01 * target(j)) << "component " << j;
}

TEST(EstimateFeatures, MatchesExactWithinStandardErrors) {
  std::mt19937_64 g(4);
  const ModelSpec s = random_model(g, 3, 2, 2, true);
  const Vector mu = random_simplex(g, 3);
  const Policy pi = random_policy(g, 3, 2);
  const int T = 120;
  const int d = 4000;
  const auto data = simulate(s, pi, mu, mu, {d, T, 11});
  const FeatureEstimate fe = estimate_feature_expectation(s, data, mu, s.beta);
  const Vector exact = feature_expectation(s, pi, mu, mu);
  // per-trajectory discounted sums give the standard error
  const FeatureTable F = feature_table(s, mu);
  Vector sq = Vector::Zero(2);
  for (const auto& tr : data) {
    Vector sum = Vector::Zero(2);
    double w = 1;
    for (const auto& st : tr.steps) {
      sum += w * F.at(st.state, st.action).transpose();
      w *= s.beta;
    }
    sq += (sum - fe.value).cwiseAbs2();
  }
  const Vector se = (sq / (d - 1.0) / d).cwiseSqrt();
  for (int j = 0; j < 2; ++j)
    EXPECT_LE(std::abs(fe.value(j) - exact(j)), 3 * se(j) + fe.tail_bound) << j;
}

TEST(EstimateFeatures, ErrorShrinksWithMoreTrajectories) {
  std::mt19937_64 g(5);
  const ModelSpec s = random_model(g, 3, 2, 2, true);
  const Vector mu = random_simplex(g, 3);
  const Policy pi = random_policy(g, 3, 2);
  const Vector exact = feature_expectation(s, pi, mu, mu);
  const int T = 80, reps = 20;
  double prev = std::numeric_limits<double>::infinity();
  for (int d : {100, 1000, 10000}) {
    double err = 0;
    for (int r = 0; r < reps; ++r) {
      const auto data = simulate(s, pi, mu, mu, {d, T, std::uint64_t(1000 * d + r)});
      err += max_abs(estimate_feature_expectation(s, data, mu, s.beta).value - exact);
    }
    err /= reps;
    EXPECT_LT(err, prev) << "d=" << d;
    prev = err;
  }
}

TEST(TrajectoryCsv, Columns) {
  std::ostringstream os;
  write_trajectories_csv(os, {pinned(1, 2)});
  EXPECT_EQ(os.str(), "trajectory_id,t,state,action\n0,0,1,0\n0,1,1,0\n");
}
