#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "pivlab/pivlab.hpp"

using namespace pivlab;

namespace {

PathGrid inverse_price(const PathEnsemble& e, const StoppingLayer* layer) {
  PathGrid g(e.n_paths, e.grid.n_points());
  for (int p = 0; p < e.n_paths; ++p)
    for (int j = 0; j < e.grid.n_points(); ++j) g(p, j) = 1.0 / e.s(p, layer ? layer->stopped(p, j) : j);
  return g;
}

}  // namespace

TEST(DefaultCheckpoints, SpacingAndEndpoints) {
  const auto cps = default_checkpoints(TimeGrid::make(1.0, 512));
  ASSERT_EQ(cps.size(), 9u);
  EXPECT_EQ(cps.front(), 0);
  EXPECT_EQ(cps.back(), 512);
  for (std::size_t i = 1; i < cps.size(); ++i) EXPECT_EQ(cps[i] - cps[i - 1], 64);
}

TEST(MartingaleTest, BrownianPriceIsAccepted) {
  const auto e = simulate(build_merton(0.0, 1.0), TimeGrid::make(1.0, 64), 20000, 1);
  const auto rep = martingale_test(e.s, e, observed_tag(e), default_checkpoints(e.grid));
  EXPECT_TRUE(rep.verdict) << rep.max_abs_z();
  EXPECT_FALSE(rep.zero_variance);
  EXPECT_EQ(rep.checkpoints.size(), 9u);
  EXPECT_FALSE(rep.increment_regressions.empty());
}

TEST(MartingaleTest, DriftIsRejected) {
  const auto e = simulate(build_merton(0.1, 0.2), TimeGrid::make(1.0, 64), 20000, 2);
  const auto rep = martingale_test(e.s, e, observed_tag(e), default_checkpoints(e.grid));
  EXPECT_FALSE(rep.verdict);
  EXPECT_GT(rep.max_abs_z(), 10.0);
}

TEST(MartingaleTest, StoppedInverseBesselIsAccepted) {
  const auto e = simulate_bes3(1.0, TimeGrid::make(1.0, 128), 20000, 3);
  const auto layer = first_exit_layer(e, 4);
  const auto rep = martingale_test(inverse_price(e, &layer), e, observed_tag(e, {&layer}),
                                   default_checkpoints(e.grid));
  EXPECT_TRUE(rep.verdict) << rep.max_abs_z();
}

TEST(MartingaleTest, UnstoppedInverseBesselIsRejected) {
  // 1/S is a strict local martingale: E[1/S(1)] = 0.6827 < 1.
  const auto e = simulate_bes3(1.0, TimeGrid::make(1.0, 128), 20000, 4);
  const auto rep = martingale_test(inverse_price(e, nullptr), e, observed_tag(e), default_checkpoints(e.grid));
  EXPECT_FALSE(rep.verdict);
  EXPECT_GT(rep.max_abs_z(), 10.0);
}

TEST(MartingaleTest, FalseRejectionRateIsSmall) {
  int rejections = 0;
  const int trials = 20;
  for (int seed = 100; seed < 100 + trials; ++seed) {
    const auto e = simulate(build_merton(0.0, 1.0), TimeGrid::make(1.0, 16), 4000, static_cast<std::uint64_t>(seed));
    rejections += !martingale_test(e.s, e, observed_tag(e), default_checkpoints(e.grid)).verdict;
  }
  EXPECT_LE(rejections, 2);
}

TEST(MartingaleTest, ConstantProcessHasZeroVariance) {
  const auto e = simulate(build_merton(0.0, 1.0), TimeGrid::make(1.0, 8), 1000, 5);
  const PathGrid flat(e.n_paths, e.grid.n_points(), 2.0);
  const auto rep = martingale_test(flat, e, observed_tag(e), default_checkpoints(e.grid));
  EXPECT_TRUE(rep.zero_variance);
  EXPECT_TRUE(rep.verdict);
}

TEST(MartingaleTest, NeedsTwoCheckpoints) {
  const auto e = simulate(build_merton(0.0, 1.0), TimeGrid::make(1.0, 8), 500, 6);
  const std::vector<int> one{4};
  EXPECT_THROW(martingale_test(e.s, e, observed_tag(e), one), Error);
  const std::vector<int> past{0, 9};
  EXPECT_THROW(martingale_test(e.s, e, observed_tag(e), past), Error);
}

TEST(DeflatedMartingaleTest, GirsanovWeightsRemoveDrift) {
  // S = 1 + 0.1 t + 0.2 B is a martingale under dQ/dP = exp(-0.5 B(1) - 0.125).
  const auto e = simulate(build_merton(0.1, 0.2), TimeGrid::make(1.0, 32), 40000, 7);
  std::vector<double> w(static_cast<std::size_t>(e.n_paths));
  for (int p = 0; p < e.n_paths; ++p) {
    double b = 0.0;
    for (int j = 0; j < 32; ++j) b += e.db(p, j);
    w[static_cast<std::size_t>(p)] = std::exp(-0.5 * b - 0.125);
  }
  const auto rep = deflated_martingale_test(w, e.s, e, observed_tag(e), default_checkpoints(e.grid));
  EXPECT_TRUE(rep.verdict) << rep.max_abs_z();
  EXPECT_THROW(deflated_martingale_test(std::vector<double>(3, 1.0), e.s, e, observed_tag(e),
                                        default_checkpoints(e.grid)),
               Error);
}

TEST(CompareExpectedUtility, DuplicateCandidatesTie) {
  const auto e = simulate(build_merton(0.1, 0.2), TimeGrid::make(1.0, 32), 5000, 8);
  const std::vector<WealthPath> w{integrate_wealth(e, Strategy::proportional(2.5), 1.0),
                                  integrate_wealth(e, Strategy::proportional(2.5), 1.0)};
  const auto r = compare_expected_utility(w, UtilitySpec::log());
  ASSERT_EQ(r.ranked.size(), 2u);
  for (const auto& c : r.ranked) {
    EXPECT_EQ(c.gap.mean, 0.0);
    EXPECT_EQ(c.gap.se, 0.0);
  }
  EXPECT_EQ(r.ranked[0].utility.mean, r.ranked[1].utility.mean);
}

TEST(CompareExpectedUtility, LogOptimalFractionRanksFirst) {
  // Log-optimal proportion b / sigma^2 = 2.5 for the arithmetic price with
  // S near 1; the gap to the worse candidates is many standard errors.
  const auto e = simulate(build_merton(0.1, 0.2), TimeGrid::make(1.0, 64), 20000, 9);
  const std::vector<WealthPath> w{integrate_wealth(e, Strategy::proportional(0.0), 1.0),
                                  integrate_wealth(e, Strategy::proportional(2.5), 1.0),
                                  integrate_wealth(e, Strategy::proportional(-1.0), 1.0)};
  const auto r = compare_expected_utility(w, UtilitySpec::log());
  EXPECT_EQ(r.ranked.front().index, 1);
  for (std::size_t i = 1; i < r.ranked.size(); ++i) EXPECT_LT(r.ranked[i].gap.mean, -3.0 * r.ranked[i].gap.se);
}

TEST(CompareExpectedUtility, DomainViolationsRankLast) {
  const auto e = simulate(build_merton(0.0, 1.0), TimeGrid::make(1.0, 16), 500, 10);
  const std::vector<WealthPath> w{integrate_wealth(e, Strategy::constant(5.0), 1.0),
                                  integrate_wealth(e, Strategy::constant(0.0), 1.0)};
  const auto r = compare_expected_utility(w, UtilitySpec::log());
  EXPECT_EQ(r.ranked.front().index, 1);
  EXPECT_TRUE(r.ranked.back().domain_violation);
  const auto other = simulate(build_merton(0.0, 1.0), TimeGrid::make(1.0, 16), 500, 11);
  const std::vector<WealthPath> mixed{w[1], integrate_wealth(other, Strategy::constant(0.0), 1.0)};
  EXPECT_THROW(compare_expected_utility(mixed, UtilitySpec::log()), Error);
}
