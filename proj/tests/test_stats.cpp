#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "pivlab/expr.hpp"
#include "pivlab/format.hpp"
#include "pivlab/quadrature.hpp"
#include "pivlab/rng.hpp"
#include "pivlab/stats.hpp"

using namespace pivlab;

TEST(Stats, MeanAndStandardErrorOfSmallSample) {
  const std::vector<double> x{1.0, 2.0, 3.0, 4.0};
  const auto est = mean_se(x);
  EXPECT_DOUBLE_EQ(est.mean, 2.5);
  // Sample variance 5/3, se = sqrt(5/12).
  EXPECT_NEAR(est.se, std::sqrt(5.0 / 12.0), 1e-15);
  EXPECT_EQ(est.n, 4);
  EXPECT_NEAR(sample_variance(x), 5.0 / 3.0, 1e-14);
}

TEST(Stats, EmptyAndSingletonSamples) {
  EXPECT_EQ(mean_se(std::vector<double>{}).n, 0);
  const auto one = mean_se(std::vector<double>{7.0});
  EXPECT_DOUBLE_EQ(one.mean, 7.0);
  EXPECT_DOUBLE_EQ(one.se, 0.0);
}

TEST(Stats, NormalQuantilesMatchTables) {
  EXPECT_NEAR(normal_upper_quantile(0.025), 1.959963984540054, 1e-12);
  EXPECT_NEAR(normal_cdf(1.0), 0.8413447460685429, 1e-14);
  EXPECT_TRUE(std::isinf(normal_upper_quantile(0.0)));
}

TEST(Stats, ChiSquareToZAgreesWithSquaredNormal) {
  // A chi-square with one degree of freedom is z^2.
  for (double z : {0.5, 1.0, 1.96, 3.0, 5.0}) EXPECT_NEAR(chi_square_to_z(z * z, 1), z, 1e-9);
  EXPECT_EQ(chi_square_to_z(0.0, 3), 0.0);
  EXPECT_EQ(chi_square_to_z(4.0, 0), 0.0);
  // Monotone in the statistic for fixed dof, even in the far tail.
  EXPECT_LT(chi_square_to_z(50.0, 6), chi_square_to_z(60.0, 6));
  EXPECT_LT(chi_square_to_z(5000.0, 6), chi_square_to_z(6000.0, 6));
}

TEST(Stats, ZscoreZeroGuard) {
  EXPECT_EQ(zscore(0.0, 0.0), 0.0);
  EXPECT_EQ(zscore(1e-14, 0.0), 0.0);
  EXPECT_TRUE(std::isinf(zscore(1.0, 0.0)));
  EXPECT_DOUBLE_EQ(zscore(1.0, 0.5), 2.0);
}

TEST(Stats, NestedEstimateFlagsGrowth) {
  std::vector<double> grow(4096);
  for (std::size_t i = 0; i < grow.size(); ++i) grow[i] = static_cast<double>(i);
  EXPECT_TRUE(nested_estimate(grow).diverging);
  std::vector<double> flat(4096, 1.0);
  EXPECT_FALSE(nested_estimate(flat).diverging);
  ASSERT_EQ(nested_estimate(flat).nested.size(), 4u);
}

TEST(Stats, NestedEstimateFalseFlagRate) {
  int flags = 0;
  for (int seed = 0; seed < 200; ++seed) {
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> d;
    std::vector<double> x(2000);
    for (double& v : x) v = d(gen) * d(gen);
    flags += nested_estimate(x).diverging;
  }
  EXPECT_LE(flags, 10);
}

TEST(Quadrature, GaussHermiteNormalMoments) {
  const auto rule = gauss_hermite_normal(20);
  double m0 = 0, m2 = 0, m4 = 0;
  for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
    const double x = rule.nodes[i];
    m0 += rule.weights[i];
    m2 += rule.weights[i] * x * x;
    m4 += rule.weights[i] * x * x * x * x;
  }
  EXPECT_NEAR(m0, 1.0, 1e-12);
  EXPECT_NEAR(m2, 1.0, 1e-12);
  EXPECT_NEAR(m4, 3.0, 1e-11);
}

TEST(Quadrature, GaussLegendrePolynomialExactness) {
  const auto rule = gauss_legendre(8, 0.0, 2.0);
  double acc = 0.0;
  for (std::size_t i = 0; i < rule.nodes.size(); ++i) acc += rule.weights[i] * std::pow(rule.nodes[i], 9);
  EXPECT_NEAR(acc, std::pow(2.0, 10) / 10.0, 1e-10);
}

TEST(Rng, PureFunctionOfCoordinates) {
  const CounterRng a(42), b(42), c(43);
  EXPECT_EQ(a.block(5, 7, Stream::kBrownian, 0), b.block(5, 7, Stream::kBrownian, 0));
  EXPECT_NE(a.block(5, 7, Stream::kBrownian, 0), c.block(5, 7, Stream::kBrownian, 0));
  EXPECT_NE(a.block(5, 7, Stream::kBrownian, 0), a.block(5, 7, Stream::kJumpCount, 0));
  EXPECT_NE(a.block(5, 7, Stream::kBrownian, 0), a.block(6, 7, Stream::kBrownian, 0));
}

TEST(Rng, NormalAndUniformMoments) {
  const CounterRng rng(9);
  std::vector<double> z, u;
  for (std::uint32_t p = 0; p < 40000; ++p) {
    z.push_back(rng.normal(p, 3, Stream::kAux));
    u.push_back(rng.uniform(p, 3, Stream::kAux, 1));
  }
  const auto ez = mean_se(z);
  EXPECT_LT(std::abs(ez.mean), 4.0 * ez.se);
  EXPECT_NEAR(sample_variance(z), 1.0, 0.03);
  const auto eu = mean_se(u);
  EXPECT_LT(std::abs(eu.mean - 0.5), 4.0 * eu.se);
  for (double v : u) ASSERT_TRUE(v > 0.0 && v < 1.0);
}

TEST(Rng, PoissonMatchesMeanAndVariance) {
  const CounterRng rng(5);
  std::vector<double> k;
  for (std::uint32_t p = 0; p < 40000; ++p) k.push_back(rng.poisson(2.0, p, 0, Stream::kJumpCount));
  const auto est = mean_se(k);
  EXPECT_LT(std::abs(est.mean - 2.0), 4.0 * est.se);
  EXPECT_NEAR(sample_variance(k), 2.0, 0.1);
  EXPECT_EQ(rng.poisson(0.0, 0, 0, Stream::kJumpCount), 0);
}

TEST(Format, SeventeenDigitsRoundTrip) {
  for (double v : {0.1, 1.0 / 3.0, 6.02214076e23, -2.5e-300}) EXPECT_EQ(std::stod(format_double(v)), v);
  EXPECT_EQ(format_double(std::numeric_limits<double>::infinity()), "inf");
  EXPECT_EQ(json_number(std::nan("")), nlohmann::json("nan"));
}

TEST(Expr, ArithmeticAndVariables) {
  const ExprVars v{2.0, 0.5, 0.0, 3.0, 0.25};
  EXPECT_DOUBLE_EQ(Expr("1 + 2 * 3")(v), 7.0);
  EXPECT_DOUBLE_EQ(Expr("-S^2")(v), -4.0);
  EXPECT_DOUBLE_EQ(Expr("1/S + t")(v), 1.0);
  EXPECT_DOUBLE_EQ(Expr("min(S, X) - max(pi, t)")(v), 1.5);
  EXPECT_DOUBLE_EQ(Expr("(S + X) / 5")(v), 1.0);
  EXPECT_TRUE(Expr("pi * X").uses('p'));
  EXPECT_FALSE(Expr("S * X").uses('p'));
}

TEST(Expr, RejectsMalformedInput) {
  EXPECT_THROW(Expr("1 +"), Error);
  EXPECT_THROW(Expr("S S"), Error);
  EXPECT_THROW(Expr("foo(1)"), Error);
  EXPECT_THROW(Expr("(1"), Error);
}
