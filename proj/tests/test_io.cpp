#include <gtest/gtest.h>

#include <sstream>

#include "mfgirl/io.hpp"
#include "test_support.hpp"

using namespace mfgirl;
using namespace testing_support;

TEST(DumpStable, FixedScientificFloats) {
  json j;
  j["b"] = 0.1;
  j["a"] = std::vector<double>{1.0, -2.5e-7, 0.0};
  j["n"] = 3;
  j["s"] = "x";
  EXPECT_EQ(dump_stable(j),
            "{\n  \"a\": [1.00000000000e+00, -2.50000000000e-07, 0.00000000000e+00],\n"
            "  \"b\": 1.00000000000e-01,\n  \"n\": 3,\n  \"s\": \"x\"\n}\n");
}

TEST(DumpStable, NegativeZeroAndNonFinite) {
  json j = json::array({-0.0, std::numeric_limits<double>::infinity()});
  EXPECT_EQ(dump_stable(j), "[0.00000000000e+00, null]\n");
}

TEST(DumpStable, IdenticalInputsGiveIdenticalBytes) {
  const json a = model_to_json(malware10());
  EXPECT_EQ(dump_stable(a), dump_stable(json::parse(a.dump())));
}

TEST(DumpStable, TwelveDigitsSurviveRoundTrip) {
  const double v = 0.123456789012345;
  const double back = json::parse(dump_stable(json(v))).get<double>();
  EXPECT_NEAR(back, v, 5e-12 * v);  // half a unit in the 12th digit
}

TEST(EquilibriumJson, RoundTrip) {
  Equilibrium e;
  e.mean_field = Vector::Constant(2, 0.5);
  e.policy = Matrix::Constant(2, 2, 0.5);
  e.occupation = Matrix::Constant(2, 2, 0.25);
  KktReport rep;
  rep.h_norm_history = {1.0, 1e-9};
  rep.iterations = 1;
  const json j = json::parse(dump_stable(equilibrium_to_json(e, rep)));
  for (const char* key : {"mean_field", "policy", "occupation", "optimality_gap",
                          "invariance_residual", "iterations", "h_norm_final"})
    EXPECT_TRUE(j.contains(key)) << key;
  const Equilibrium back = equilibrium_from_json(j);
  EXPECT_EQ(back.mean_field, e.mean_field);
  EXPECT_EQ(back.policy, e.policy);
  EXPECT_THROW(equilibrium_from_json(json::object()), ValidationError);
}

TEST(IrlJson, Keys) {
  IrlResult r;
  r.dual = DualPoint::zeros(3, 2);
  r.occupation = Matrix::Constant(2, 2, 0.25);
  r.policy = Matrix::Constant(2, 2, 0.5);
  const json j = irl_to_json(r, IrlResiduals{});
  for (const char* key : {"dual", "occupation", "policy", "residuals", "iterations", "g_final"})
    EXPECT_TRUE(j.contains(key)) << key;
  for (const char* key : {"theta", "lambda", "xi"}) EXPECT_TRUE(j["dual"].contains(key));
  for (const char* key : {"feat", "flow", "marg", "pos"}) EXPECT_TRUE(j["residuals"].contains(key));
}

TEST(TrajectoryCsv, RoundTrip) {
  std::vector<Trajectory> data(3);
  data[0].steps = {{0, 1}, {1, 0}};
  data[1].steps = {{1, 1}};
  data[2].steps = {{0, 0}, {0, 0}, {1, 1}};
  std::ostringstream os;
  write_trajectories_csv(os, data);
  std::istringstream in(os.str());
  const auto back = read_trajectories_csv(in, 2, 2);
  ASSERT_EQ(back.size(), 3u);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(back[i].steps, data[i].steps);
}

TEST(TrajectoryCsv, Errors) {
  std::istringstream empty("");
  EXPECT_THROW(read_trajectories_csv(empty, 2, 2), EmptyData);
  std::istringstream header("a,b\n");
  EXPECT_THROW(read_trajectories_csv(header, 2, 2), ParseError);
  std::istringstream range("trajectory_id,t,state,action\n0,0,5,0\n");
  EXPECT_THROW(read_trajectories_csv(range, 2, 2), ValidationError);
  std::istringstream order("trajectory_id,t,state,action\n0,1,0,0\n");
  EXPECT_THROW(read_trajectories_csv(order, 2, 2), ValidationError);
  std::istringstream junk("trajectory_id,t,state,action\n0;0;0;0\n");
  EXPECT_THROW(read_trajectories_csv(junk, 2, 2), ParseError);
}
