#include <gtest/gtest.h>

#include <random>

#include "mfgirl/model.hpp"
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
}  // namespace

TEST(BuiltinMalware, TwoStateDynamics) {
  const ModelSpec s = malware2();
  const Kernel K = transition_kernel(s, vec({0.65, 0.35}));
  EXPECT_DOUBLE_EQ(K(0, 0, 0), 0.1);
  EXPECT_DOUBLE_EQ(K(1, 0, 0), 0.9);
  EXPECT_DOUBLE_EQ(K(0, 1, 0), 0.0);
  EXPECT_DOUBLE_EQ(K(1, 1, 0), 1.0);
  for (int x = 0; x < 2; ++x) {
    EXPECT_DOUBLE_EQ(K(0, x, 1), 1.0);
    EXPECT_DOUBLE_EQ(K(1, x, 1), 0.0);
  }
}

TEST(BuiltinMalware, TwoStateCosts) {
  const ModelSpec s = malware2();
  const CostTable c = cost_table(s, vec({0.65, 0.35}));
  EXPECT_NEAR(c(1, 0), 0.55, 1e-15);
  EXPECT_NEAR(c(0, 1), 0.4, 1e-15);
  EXPECT_NEAR(c(0, 0), 0.0, 1e-15);
  const FeatureTable F = feature_table(s, vec({0.65, 0.35}));
  EXPECT_NEAR((F.at(1, 0) - vec({1, 0.35, 0}).transpose()).cwiseAbs().maxCoeff(), 0.0, 1e-15);
}

TEST(BuiltinMalware, TenStateDynamics) {
  const ModelSpec s = malware10();
  const Kernel K = transition_kernel(s, Vector::Constant(10, 0.1));
  EXPECT_DOUBLE_EQ(K(9, 9, 0), 1.0);
  for (int x = 0; x < 10; ++x) {
    EXPECT_DOUBLE_EQ(K(0, x, 1), 1.0);
    for (int y = 0; y < 10; ++y) EXPECT_NEAR(K(y, x, 0), y >= x ? 1.0 / (10 - x) : 0.0, 1e-15);
  }
}

TEST(BuiltinMalware, TenStateFeaturesAndCosts) {
  const ModelSpec s = malware10();
  const Vector mu = Vector::Constant(10, 0.1);
  const FeatureTable F = feature_table(s, mu);
  EXPECT_NEAR((F.at(9, 1) - vec({0.9, 0.405, 1}).transpose()).cwiseAbs().maxCoeff(), 0, 1e-14);
  EXPECT_NEAR(cost_table(s, mu)(9, 0), 0.495, 1e-14);
  for (int a = 0; a < 2; ++a) {
    EXPECT_EQ(F.at(0, a)(0), 0.0);
    EXPECT_EQ(F.at(0, a)(1), 0.0);
  }
}

TEST(BuiltinMalware, BadParameters) {
  const Vector th = vec({0.2, 1, 0.4});
  EXPECT_THROW(builtin_malware(3, th, 0.9, 0.8), BadParameter);
  EXPECT_THROW(builtin_malware(2, th, 1.5, 0.8), BadParameter);
  EXPECT_THROW(builtin_malware(2, th, std::nullopt, 0.8), BadParameter);
  EXPECT_NO_THROW(builtin_malware(10, th, std::nullopt, 0.8));
}

TEST(ModelIo, RoundTripBuiltins) {
  for (const ModelSpec& s : {malware2(), malware10()}) {
    const ModelSpec back = load_model(model_to_json(s).dump());
    EXPECT_TRUE(back == s);
  }
}

TEST(ModelIo, RoundTripRandomAffine) {
  std::mt19937_64 g(1);
  const ModelSpec s = random_model(g, 4, 3, 2, true);
  EXPECT_TRUE(load_model(model_to_json(s).dump()) == s);
}

TEST(ModelIo, RowSumViolationNamed) {
  json j = model_to_json(malware2());
  j["P0"][0][1][0] = 0.08;  // p(0|1,0) so the (x=1,a=0) row sums to 1.08
  try {
    model_from_json(j);
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("(x=1,a=0)"), std::string::npos) << e.what();
  }
  json k = model_to_json(malware2());
  k["P0"][1][0][0] = 0.8;  // (x=0,a=0) sums to 0.9
  EXPECT_THROW(model_from_json(k), ValidationError);
}

TEST(ModelIo, NegativeAtVertexRejected) {
  json j = model_to_json(malware2());
  // mean-field term moves 0.2 of mass from y=0 to y=1 at vertex z=1; p(0|0,0) = 0.1 - 0.2 < 0
  j["P1"][0][0][0][1] = -0.2;
  j["P1"][1][0][0][1] = 0.2;
  try {
    model_from_json(j);
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("negative"), std::string::npos) << e.what();
  }
}

TEST(ModelIo, ParseErrorOnMalformed) {
  EXPECT_THROW(load_model("{not json"), ParseError);
  EXPECT_THROW(load_model("[1,2]"), ValidationError);
  EXPECT_THROW(load_model(R"({"n_states":2})"), ValidationError);
}

TEST(ModelIo, OptionalTensorsDefaultToZero) {
  json j = model_to_json(malware2());
  j.erase("P1");
  j.erase("theta");
  const ModelSpec s = model_from_json(j);
  EXPECT_FALSE(s.theta.has_value());
  EXPECT_THROW(cost_table(s, vec({0.5, 0.5})), MissingTheta);
}

TEST(TransitionKernel, MeanFieldIndependentWithoutP1) {
  const ModelSpec s = malware10();
  std::mt19937_64 g(2);
  const Kernel K1 = transition_kernel(s, random_simplex(g, 10));
  const Kernel K2 = transition_kernel(s, random_simplex(g, 10));
  for (int a = 0; a < 2; ++a) EXPECT_EQ(max_abs(K1.trans[a] - K2.trans[a]), 0.0);
}

TEST(Properties, KernelRowsAreSimplexVectors) {
  std::mt19937_64 g(3);
  for (int rep = 0; rep < 30; ++rep) {
    const ModelSpec s = random_model(g, 2 + rep % 5, 1 + rep % 3, 2, true);
    validate(s);
    const Kernel K = transition_kernel(s, random_simplex(g, s.X()));
    for (int a = 0; a < s.A(); ++a) {
      EXPECT_GE(K.trans[a].minCoeff(), 0.0);
      EXPECT_LE((K.trans[a].rowwise().sum().array() - 1.0).abs().maxCoeff(), 1e-9);
    }
  }
}

TEST(Properties, AffineInMeanField) {
  std::mt19937_64 g(4);
  for (int rep = 0; rep < 30; ++rep) {
    const ModelSpec s = random_model(g, 3 + rep % 3, 2, 3, true);
    const Vector m1 = random_simplex(g, s.X()), m2 = random_simplex(g, s.X());
    const Vector mid = 0.5 * (m1 + m2);
    const Kernel K1 = transition_kernel(s, m1), K2 = transition_kernel(s, m2),
                 Km = transition_kernel(s, mid);
    for (int a = 0; a < s.A(); ++a)
      EXPECT_LE(max_abs(Km.trans[a] - 0.5 * (K1.trans[a] + K2.trans[a])), 1e-12);
    const Matrix F1 = feature_table(s, m1).rows, F2 = feature_table(s, m2).rows,
                 Fm = feature_table(s, mid).rows;
    EXPECT_LE(max_abs(Fm - 0.5 * (F1 + F2)), 1e-12);
  }
}

TEST(Properties, VertexAverageEqualsMidpointKernel) {
  std::mt19937_64 g(5);
  const ModelSpec s = random_model(g, 4, 2, 2, true);
  Vector e0 = Vector::Zero(4), e3 = Vector::Zero(4);
  e0(0) = 1;
  e3(3) = 1;
  const Kernel K0 = transition_kernel(s, e0), K3 = transition_kernel(s, e3),
               Km = transition_kernel(s, 0.5 * (e0 + e3));
  for (int a = 0; a < 2; ++a) EXPECT_LE(max_abs(Km.trans[a] - 0.5 * (K0.trans[a] + K3.trans[a])), 1e-12);
}

TEST(CostTable, ZeroThetaGivesZeroTable) {
  ModelSpec s = malware10();
  s.theta = Vector::Zero(3);
  EXPECT_EQ(max_abs(cost_table(s, Vector::Constant(10, 0.1))), 0.0);
}
