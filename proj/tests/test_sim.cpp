#include <cmath>
#include <cstdlib>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/poisson.hpp>
#include <gtest/gtest.h>

#include "pivlab/pivlab.hpp"

using namespace pivlab;

namespace {

// Restores PIVLAB_THREADS on scope exit.
struct ThreadsEnv {
  std::string saved;
  bool had = false;
  explicit ThreadsEnv(const char* value) {
    if (const char* v = std::getenv("PIVLAB_THREADS")) {
      had = true;
      saved = v;
    }
    setenv("PIVLAB_THREADS", value, 1);
  }
  ~ThreadsEnv() {
    if (had) setenv("PIVLAB_THREADS", saved.c_str(), 1);
    else unsetenv("PIVLAB_THREADS");
  }
};

}  // namespace

TEST(Simulate, BrownianIncrementMoments) {
  const auto grid = TimeGrid::make(2.0, 4);
  const auto e = simulate(build_merton(0.0, 1.0), grid, 40000, 1);
  for (int j = 0; j < grid.n_steps; ++j) {
    const auto inc = e.db.column(j);
    const auto m = mean_se(inc);
    EXPECT_LT(std::abs(m.mean), 4.0 * m.se);
    EXPECT_NEAR(sample_variance(inc), grid.dt(), 0.03 * grid.dt());
  }
  // S = 1 + B exactly under zero drift and unit volatility.
  for (int p = 0; p < 100; ++p) {
    double b = 1.0;
    for (int j = 0; j < grid.n_steps; ++j) b += e.db(p, j);
    EXPECT_NEAR(e.s(p, grid.n_steps), b, 1e-12);
  }
}

TEST(Simulate, RejectsEmptyEnsemble) {
  EXPECT_THROW(simulate(build_merton(0.0, 1.0), TimeGrid::make(1.0, 4), 0, 1), Error);
  EXPECT_THROW(simulate_bes3(0.0, TimeGrid::make(1.0, 4), 10, 1), Error);
  EXPECT_THROW(TimeGrid::make(0.0, 4), Error);
}

TEST(Simulate, JumpCountsArePoisson) {
  const double lambda = 2.0;
  const auto e = simulate(build_merton(0.0, 0.2, JumpParams{0.1, lambda}), TimeGrid::make(1.0, 32), 20000, 2);
  const boost::math::poisson_distribution<> pois(lambda);
  const int bins = 7;  // 0..5 and a tail bin
  std::vector<double> observed(bins, 0.0);
  for (int p = 0; p < e.n_paths; ++p) {
    const auto k = static_cast<int>(e.jumps_of(p).size());
    observed[static_cast<std::size_t>(std::min(k, bins - 1))] += 1.0;
  }
  double chi2 = 0.0;
  for (int k = 0; k < bins; ++k) {
    const double prob = k < bins - 1 ? boost::math::pdf(pois, k) : boost::math::cdf(complement(pois, bins - 2));
    const double expected = prob * e.n_paths;
    chi2 += (observed[static_cast<std::size_t>(k)] - expected) * (observed[static_cast<std::size_t>(k)] - expected) /
            expected;
  }
  const boost::math::chi_squared_distribution<> ref(bins - 1);
  EXPECT_LT(chi2, boost::math::quantile(ref, 0.999));
}

TEST(Simulate, JumpsAreCompensated) {
  const auto e = simulate(build_merton(0.0, 0.2, JumpParams{0.1, 2.0}), TimeGrid::make(1.0, 32), 40000, 3);
  const auto m = mean_se(e.s.column(32));
  EXPECT_LT(std::abs(m.mean - 1.0), 4.0 * m.se);
  // The per-step jump sum matches the recorded events.
  for (int p = 0; p < 200; ++p) {
    std::vector<double> sums(32, 0.0);
    for (const auto& ev : e.jumps_of(p)) sums[static_cast<std::size_t>(ev.step)] += ev.size;
    for (int j = 0; j < 32; ++j) {
      EXPECT_DOUBLE_EQ(e.jump_sum(p, j), sums[static_cast<std::size_t>(j)]);
      EXPECT_NEAR(e.compensator(p, j), 2.0 * 0.1 / 32, 1e-15);
    }
  }
}

TEST(SimulateBes3, ExactMarginalMoments) {
  const auto e = simulate_bes3(1.0, TimeGrid::make(1.0, 16), 100000, 4);
  std::vector<double> sq(static_cast<std::size_t>(e.n_paths)), inv(sq.size());
  for (int p = 0; p < e.n_paths; ++p) {
    const double s = e.s(p, 16);
    sq[static_cast<std::size_t>(p)] = s * s;
    inv[static_cast<std::size_t>(p)] = 1.0 / s;
  }
  // |x + W_1|^2 has mean x^2 + 3; E[1/S(1)] = 2 Phi(1) - 1 from x = 1.
  const auto m2 = mean_se(sq);
  EXPECT_LT(std::abs(m2.mean - 4.0), 4.0 * m2.se);
  const auto mi = mean_se(inv);
  EXPECT_LT(std::abs(mi.mean - (2.0 * normal_cdf(1.0) - 1.0)), 4.0 * mi.se);
  for (double s : e.s.data()) ASSERT_GT(s, 0.0);
}

TEST(SimulateBes3, RadialIncrementsAreStandardNormal) {
  const auto grid = TimeGrid::make(1.0, 8);
  const auto e = simulate_bes3(2.0, grid, 40000, 5);
  const auto inc = e.db.column(5);
  const auto m = mean_se(inc);
  EXPECT_LT(std::abs(m.mean), 4.0 * m.se);
  EXPECT_NEAR(sample_variance(inc), grid.dt(), 0.03 * grid.dt());
}

TEST(StoppingLayer, ExitIndicesAreMonotoneInLevel) {
  const auto e = simulate_bes3(1.0, TimeGrid::make(1.0, 128), 5000, 6);
  const auto l2 = first_exit_layer(e, 2), l4 = first_exit_layer(e, 4), l8 = first_exit_layer(e, 8);
  for (int p = 0; p < e.n_paths; ++p) {
    const auto i = static_cast<std::size_t>(p);
    EXPECT_LE(l2.tau_index[i], l4.tau_index[i]);
    EXPECT_LE(l4.tau_index[i], l8.tau_index[i]);
    // Before the exit the price is inside the band.
    for (int j = 0; j < l2.tau_index[i]; ++j) ASSERT_TRUE(e.s(p, j) > 0.5 && e.s(p, j) < 2.0);
  }
  EXPECT_THROW(first_exit_layer(e, 1), Error);
}

TEST(StoppingLayer, DeterministicExitStep) {
  // S(t_j) = 1 + 0.15 j leaves (0.5, 2) first at j = 7.
  MarketModel m;
  m.drift = [](double, const CoefficientState&) { return 0.6; };
  const auto e = simulate(m, TimeGrid::make(4.0, 16), 3, 7);
  const auto layer = first_exit_layer(e, 2);
  for (int p = 0; p < 3; ++p) {
    EXPECT_EQ(layer.tau_index[static_cast<std::size_t>(p)], 7);
    EXPECT_EQ(layer.stopped(p, 12), 7);
    EXPECT_EQ(layer.stopped(p, 3), 3);
    EXPECT_TRUE(layer.alive(p, 6));
    EXPECT_FALSE(layer.alive(p, 7));
  }
  // A coefficient band of 2 stops immediately once |b| would reach it.
  MarketModel fast = m;
  fast.drift = [](double, const CoefficientState&) { return 3.0; };
  const auto ef = simulate(fast, TimeGrid::make(1.0, 4), 1, 7);
  EXPECT_EQ(first_exit_layer(ef, 2, &fast).tau_index[0], 0);
}

TEST(Wealth, TelescopesAndFreezes) {
  const auto e = simulate_bes3(1.0, TimeGrid::make(1.0, 64), 500, 8);
  const auto layer = first_exit_layer(e, 2);
  const auto w = integrate_wealth(e, Strategy::constant(1.0), 3.0, &layer);
  for (int p = 0; p < e.n_paths; ++p) {
    const int tau = layer.tau_index[static_cast<std::size_t>(p)];
    // Constant holdings of one share: X = 3 + S(t ^ tau) - S(0).
    for (int j = 0; j <= 64; ++j) EXPECT_NEAR(w.x(p, j), 3.0 + e.s(p, std::min(j, tau)) - 1.0, 1e-12);
  }
  const auto prop = integrate_wealth(e, Strategy::proportional(0.5), 2.0);
  for (int p = 0; p < 20; ++p) {
    double x = 2.0;
    for (int j = 0; j < 64; ++j) x += 0.5 * x * (e.s(p, j + 1) - e.s(p, j));
    EXPECT_NEAR(prop.x(p, 64), x, 1e-12);
  }
  EXPECT_EQ(w.ensemble_fingerprint, e.fingerprint);
  EXPECT_EQ(w.layer_level, 2);
}

TEST(Wealth, FilterStrategyNeedsFilter) {
  const auto e = simulate(build_merton(0.1, 0.2), TimeGrid::make(1.0, 4), 10, 9);
  EXPECT_THROW(integrate_wealth(e, filter_strategy(HiddenDriftSpec{}), 1.0), Error);
}

TEST(Reproducibility, IndependentOfWorkerCount) {
  const auto grid = TimeGrid::make(1.0, 32);
  const auto model = build_merton(0.05, 0.3, JumpParams{-0.1, 1.0});
  PathEnsemble one, four, bes_one, bes_four;
  {
    ThreadsEnv env("1");
    one = simulate(model, grid, 3000, 10);
    bes_one = simulate_bes3(1.0, grid, 3000, 10);
  }
  {
    ThreadsEnv env("4");
    four = simulate(model, grid, 3000, 10);
    bes_four = simulate_bes3(1.0, grid, 3000, 10);
  }
  EXPECT_EQ(one.fingerprint, four.fingerprint);
  EXPECT_EQ(one.s, four.s);
  EXPECT_EQ(one.db, four.db);
  EXPECT_EQ(one.jump_sum, four.jump_sum);
  EXPECT_EQ(bes_one.s, bes_four.s);
  const auto other = simulate(model, grid, 3000, 11);
  EXPECT_NE(one.fingerprint, other.fingerprint);
}

TEST(Simulate, BoundedRegimeViolationIsReported) {
  auto m = build_merton(0.1, 0.2);
  m.coefficient_bound = 0.15;
  try {
    simulate(m, TimeGrid::make(1.0, 4), 10, 12);
    FAIL() << "expected a bounded regime error";
  } catch (const Error& ex) {
    EXPECT_NE(std::string(ex.what()).find("bounded regime violated"), std::string::npos);
  }
}
