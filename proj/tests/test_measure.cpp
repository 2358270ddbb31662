#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "pivlab/pivlab.hpp"

using namespace pivlab;

namespace {

GirsanovSpec constant_kernel(double theta0) {
  GirsanovSpec g;
  g.theta0 = [theta0](const ObservedState&) { return theta0; };
  return g;
}

}  // namespace

TEST(Doleans, DiffusionKernelMoments) {
  const auto e = simulate(build_merton(0.0, 1.0), TimeGrid::make(1.0, 32), 100000, 1);
  const auto d = doleans_exponential(constant_kernel(0.5), e);
  const auto g = d.terminal(nullptr);
  const auto m = mean_se(g);
  EXPECT_LT(std::abs(m.mean - 1.0), 4.0 * m.se);
  // Var exp(0.5 B - 1/8) = e^{1/4} - 1.
  EXPECT_NEAR(sample_variance(g), std::exp(0.25) - 1.0, 0.02);
  for (double v : d.g.data()) ASSERT_GT(v, 0.0);
  for (int p = 0; p < e.n_paths; ++p) ASSERT_EQ(d.g(p, 0), 1.0);
}

TEST(Doleans, ClosedFormOnEachPath) {
  const auto e = simulate(build_merton(0.0, 1.0), TimeGrid::make(2.0, 16), 50, 2);
  const auto d = doleans_exponential(constant_kernel(-0.3), e);
  for (int p = 0; p < e.n_paths; ++p) {
    const double b = e.s(p, 16) - 1.0;
    EXPECT_NEAR(d.g(p, 16), std::exp(-0.3 * b - 0.5 * 0.09 * 2.0), 1e-12);
  }
}

TEST(Doleans, JumpKernelHasUnitMean) {
  const auto jumps = JumpSpec::make(2.0, DiracMark{});
  const auto e = simulate(build_merton(0.0, 0.2, JumpParams{0.1, 2.0}), TimeGrid::make(1.0, 32), 100000, 3);
  GirsanovSpec g;
  g.theta1 = [](const ObservedState&, double) { return 1.0; };
  const auto d = doleans_exponential(g, e, jumps);
  const auto m = mean_se(d.terminal(nullptr));
  EXPECT_LT(std::abs(m.mean - 1.0), 4.0 * m.se);
  // Each path carries 2^{N(1)} e^{-2}.
  for (int p = 0; p < 50; ++p) {
    const auto k = static_cast<double>(e.jumps_of(p).size());
    EXPECT_NEAR(d.g(p, 32), std::pow(2.0, k) * std::exp(-2.0), 1e-10);
  }
}

TEST(Doleans, KernelBelowMinusOneKillsDensity) {
  const auto jumps = JumpSpec::make(5.0, DiracMark{});
  const auto e = simulate(build_merton(0.0, 0.2, JumpParams{0.1, 5.0}), TimeGrid::make(1.0, 8), 200, 4);
  GirsanovSpec g;
  g.theta1 = [](const ObservedState&, double) { return -1.0; };
  EXPECT_THROW(doleans_exponential(g, e, jumps), Error);
}

TEST(Doleans, FrozenAfterStopping) {
  const auto e = simulate_bes3(1.0, TimeGrid::make(1.0, 64), 500, 5);
  const auto layer = first_exit_layer(e, 2);
  const auto d = doleans_exponential(constant_kernel(0.7), e, {}, &layer);
  for (int p = 0; p < e.n_paths; ++p) {
    const int tau = layer.tau_index[static_cast<std::size_t>(p)];
    for (int j = tau; j <= 64; ++j) ASSERT_EQ(d.g(p, j), d.g(p, tau));
  }
  EXPECT_EQ(d.layer_level, 2);
}

TEST(Piemm, MertonMarketPriceOfRisk) {
  const auto model = build_merton(0.1, 0.2);
  const auto e = simulate(model, TimeGrid::make(1.0, 64), 20000, 6);
  const GirsanovSpec good = constant_kernel(-0.5);
  const auto pass = piemm_check(doleans_exponential(good, e), good, model, e, nullptr);
  EXPECT_TRUE(pass.verdict) << pass.structural.max_abs_z();
  EXPECT_TRUE(pass.direct_applicable);
  for (const auto& pt : pass.direct) EXPECT_NEAR(pt.residual, 0.0, 1e-12);

  const GirsanovSpec none = constant_kernel(0.0);
  const auto fail = piemm_check(doleans_exponential(none, e), none, model, e, nullptr);
  EXPECT_FALSE(fail.verdict);
  EXPECT_FALSE(fail.direct_pass);
  EXPECT_FALSE(fail.structural.verdict);
}

TEST(Piemm, StructuralAuditWithoutKernel) {
  const auto model = build_merton(0.1, 0.2);
  const auto e = simulate(model, TimeGrid::make(1.0, 32), 20000, 7);
  const auto rep = piemm_check(doleans_exponential(constant_kernel(-0.5), e), std::monostate{}, model, e, nullptr);
  EXPECT_FALSE(rep.direct_applicable);
  EXPECT_TRUE(rep.verdict) << rep.structural.max_abs_z();
}

TEST(Piemm, LogOptimalMarginalUtilityMeasure) {
  // The marginal utility of the log-optimal wealth is a deflator.
  const auto model = build_merton(0.1, 0.2);
  const auto e = simulate(model, TimeGrid::make(1.0, 64), 20000, 8);
  const auto w = integrate_wealth(e, Strategy::proportional(2.5), 1.0);
  const auto d = marginal_utility_density(w, UtilitySpec::log(), nullptr, e);
  const auto rep = piemm_check(d, std::monostate{}, model, e, nullptr);
  EXPECT_TRUE(rep.verdict) << rep.structural.max_abs_z();
  EXPECT_NEAR(mean_se(d.terminal(nullptr)).mean, 1.0, 1e-12);
}

TEST(Piemm, EnsembleMismatch) {
  const auto model = build_merton(0.1, 0.2);
  const auto a = simulate(model, TimeGrid::make(1.0, 8), 200, 9);
  const auto b = simulate(model, TimeGrid::make(1.0, 8), 200, 10);
  EXPECT_THROW(piemm_check(doleans_exponential({}, a), std::monostate{}, model, b, nullptr), Error);
}

TEST(AdjointDensity, StartsAtOneWithUnitMean) {
  const auto e = simulate_bes3(1.0, TimeGrid::make(1.0, 32), 4000, 11);
  const auto layer = first_exit_layer(e, 4);
  const auto w = integrate_wealth(e, Strategy::constant(1.0), 1.0, &layer);
  const auto adj = solve_adjoint(e, w, UtilitySpec::log(), &layer);
  const auto d = adjoint_density(adj, &layer, e);
  for (int p = 0; p < e.n_paths; ++p) ASSERT_EQ(d.g(p, 0), 1.0);
  EXPECT_NEAR(mean_se(d.terminal(&layer)).mean, 1.0, 1e-12);
}

TEST(BoundedRegime, FiniteMomentsWithoutDivergence) {
  const auto model = build_merton(0.1, 0.2, JumpParams{-0.1, 1.0});
  const auto e = simulate(model, TimeGrid::make(1.0, 64), 20000, 12);
  const std::vector<double> orders{2.0, 4.0, 8.0};
  const auto rep = bounded_regime_validate(model, e, orders);
  EXPECT_TRUE(rep.verdict);
  ASSERT_EQ(rep.moments.size(), 3u);
  // E[sup |S|^2] is at least E[S(1)^2] = 1 + 0.1^2 + 0.2^2 + 0.01 (jump variance).
  EXPECT_GT(rep.moments[0].estimate.full.mean, 1.05);
  for (const auto& m : rep.moments) EXPECT_FALSE(m.estimate.diverging);
}

TEST(BoundedRegime, RequiresDeclaredBound) {
  const auto e = simulate_bes3(1.0, TimeGrid::make(1.0, 8), 100, 13);
  const std::vector<double> orders{2.0};
  EXPECT_THROW(bounded_regime_validate(build_bessel(), e, orders), Error);
}
