#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "pivlab/pivlab.hpp"

using namespace pivlab;

TEST(Scenarios, BesselCoefficients) {
  const auto m = build_bessel();
  EXPECT_EQ(m.name, "bessel");
  EXPECT_DOUBLE_EQ(m.drift(0.3, {4.0, 0}), 0.25);
  EXPECT_DOUBLE_EQ(m.diffusion(0.3, {4.0, 0}), 1.0);
  EXPECT_FALSE(m.coefficient_bound.has_value());
}

TEST(Scenarios, MertonCoefficientsAndBound) {
  const auto m = build_merton(0.1, 0.2, JumpParams{-0.3, 2.0});
  EXPECT_DOUBLE_EQ(m.drift(0.0, {5.0, 0}), 0.1);
  EXPECT_DOUBLE_EQ(m.diffusion(0.0, {5.0, 0}), 0.2);
  EXPECT_DOUBLE_EQ(m.jump(0.0, {5.0, 0}, 0.0), -0.3);
  ASSERT_TRUE(m.coefficient_bound.has_value());
  EXPECT_GE(*m.coefficient_bound, 0.3);
  EXPECT_NEAR(m.compensator(0.0, {1.0, 0}), -0.6, 1e-12);
}

TEST(Scenarios, MertonLogFraction) {
  EXPECT_DOUBLE_EQ(merton_log_fraction(0.1, 0.2), 2.5);
  EXPECT_THROW(merton_log_fraction(0.1, 0.0), Error);
  // With jumps the fraction solves b - pi sigma^2 + lambda c (1 / (1 + pi c) - 1) = 0.
  const JumpParams jp{-0.2, 1.5};
  const double pi = merton_log_fraction(0.1, 0.2, jp);
  const double foc = 0.1 - pi * 0.04 + 1.5 * -0.2 * (1.0 / (1.0 - 0.2 * pi) - 1.0);
  EXPECT_NEAR(foc, 0.0, 1e-10);
  EXPECT_LT(pi, 2.5);
  EXPECT_GT(1.0 - 0.2 * pi, 0.0);
}

TEST(HiddenDrift, SpecValidation) {
  HiddenDriftSpec bad;
  bad.pi0 = 1.5;
  EXPECT_THROW(build_hidden_drift(bad), Error);
  HiddenDriftSpec neg;
  neg.sigma = 0.0;
  EXPECT_THROW(build_hidden_drift(neg), Error);
  const auto m = build_hidden_drift({});
  EXPECT_DOUBLE_EQ(m.drift(0.0, {1.0, 1}), 0.3);
  EXPECT_DOUBLE_EQ(m.drift(0.0, {1.0, 0}), 0.0);
  ASSERT_TRUE(m.hidden.has_value());
}

TEST(HiddenDrift, FilterStaysInUnitIntervalAndLearns) {
  HiddenDriftSpec spec;
  spec.mu_high = 2.0;
  spec.rate_up = 0.1;
  spec.rate_down = 0.1;
  auto e = simulate(build_hidden_drift(spec), TimeGrid::make(1.0, 128), 10000, 1);
  const auto pi = wonham_filter(e, spec);
  for (double v : pi.data()) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
  std::vector<double> high, low;
  for (int p = 0; p < e.n_paths; ++p) (e.hidden_state(p, 128) ? high : low).push_back(pi(p, 128));
  EXPECT_GT(mean_se(high).mean, mean_se(low).mean + 0.2);
}

TEST(HiddenDrift, EqualDriftsLeaveTheStationaryPrior) {
  HiddenDriftSpec spec;
  spec.mu_low = spec.mu_high = 0.1;
  spec.pi0 = 0.5;  // stationary for equal switching rates
  const auto e = simulate(build_hidden_drift(spec), TimeGrid::make(1.0, 32), 200, 2);
  const auto pi = wonham_filter(e, spec);
  for (double v : pi.data()) ASSERT_NEAR(v, 0.5, 1e-12);
}

TEST(HiddenDrift, FilteredStrategy) {
  HiddenDriftSpec spec;
  const auto s = filter_strategy(spec);
  EXPECT_TRUE(s.needs_filter);
  // (pi mu_high + (1 - pi) mu_low) X / sigma^2 = 0.15 * 2 / 0.04.
  EXPECT_DOUBLE_EQ(s({0.0, 1.0, 2.0, 0.5}), 7.5);
  const auto c = constant_drift_strategy(spec, 0.1);
  EXPECT_FALSE(c.needs_filter);
  EXPECT_DOUBLE_EQ(c({0.0, 1.0, 2.0, 0.5}), 5.0);
}

TEST(HiddenDrift, FilterBeatsWrongConstantDrift) {
  HiddenDriftSpec spec;
  spec.mu_high = 1.0;
  spec.sigma = 1.0;
  auto e = simulate(build_hidden_drift(spec), TimeGrid::make(1.0, 64), 20000, 3);
  e.filter = wonham_filter(e, spec);
  const std::vector<WealthPath> w{integrate_wealth(e, filter_strategy(spec), 1.0),
                                  integrate_wealth(e, constant_drift_strategy(spec, 1.0), 1.0)};
  const auto r = compare_expected_utility(w, UtilitySpec::log());
  for (const auto& c : r.ranked) EXPECT_FALSE(c.domain_violation);
  EXPECT_EQ(r.ranked.front().index, 0);
  EXPECT_LT(r.ranked.back().gap.mean, -3.0 * r.ranked.back().gap.se);
}
