#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/special_functions/gamma.hpp>

namespace pivlab {

// Family-wise |z| threshold used by every audit (about 0.1% per test).
inline constexpr double kFamilyThreshold = 3.3;

struct MeanEstimate {
  double mean = 0.0;
  double se = 0.0;
  long n = 0;

  double lo(double k = 3.0) const { return mean - k * se; }
  double hi(double k = 3.0) const { return mean + k * se; }
};

inline MeanEstimate mean_se(std::span<const double> x) {
  MeanEstimate out;
  out.n = static_cast<long>(x.size());
  if (x.empty()) return out;
  // Two-pass for accuracy; fixed summation order keeps results reproducible.
  double sum = 0.0;
  for (double v : x) sum += v;
  out.mean = sum / static_cast<double>(x.size());
  if (x.size() < 2) return out;
  double ss = 0.0;
  for (double v : x) ss += (v - out.mean) * (v - out.mean);
  const double var = ss / static_cast<double>(x.size() - 1);
  out.se = std::sqrt(var / static_cast<double>(x.size()));
  return out;
}

inline double sample_variance(std::span<const double> x) {
  const auto est = mean_se(x);
  return est.se * est.se * static_cast<double>(est.n);
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

// Upper-tail normal quantile: returns z with P(N > z) = tail.
inline double normal_upper_quantile(double tail) {
  if (tail <= 0.0) return std::numeric_limits<double>::infinity();
  if (tail >= 1.0) return -std::numeric_limits<double>::infinity();
  return boost::math::quantile(boost::math::complement(boost::math::normal_distribution<>{}, tail));
}

// |z| matching a two-sided normal test with the same p-value as a chi-square
// statistic with `dof` degrees of freedom.
inline double chi_square_to_z(double statistic, int dof) {
  if (!(statistic > 0.0) || dof <= 0) return 0.0;
  if (!std::isfinite(statistic)) return std::numeric_limits<double>::infinity();
  const double p = boost::math::gamma_q(0.5 * dof, 0.5 * statistic);
  if (p <= std::numeric_limits<double>::min()) {
    // Far tail: sqrt of the statistic is the natural scale and keeps ordering.
    return std::sqrt(statistic);
  }
  return normal_upper_quantile(0.5 * p);
}

// z = estimate / se with a numerical-zero guard: estimates that are zero up
// to `zero_tol` score 0 even when the standard error vanishes.
inline double zscore(double estimate, double se, double zero_tol = 1e-12) {
  if (std::abs(estimate) <= zero_tol) return 0.0;
  if (!(se > 0.0)) return estimate > 0 ? std::numeric_limits<double>::infinity()
                                       : -std::numeric_limits<double>::infinity();
  return estimate / se;
}

// Moment estimate with nested sub-sample diagnostics. The estimate is flagged
// as diverging when it grows monotonically across nested prefixes of size
// N/8, N/4, N/2, N and the total growth exceeds three standard deviations of
// the prefix-to-full difference (sqrt(7) standard errors of the full mean).
struct NestedEstimate {
  MeanEstimate full;
  std::vector<double> nested;  // prefix means, smallest prefix first
  bool diverging = false;
};

inline NestedEstimate nested_estimate(std::span<const double> x) {
  NestedEstimate out;
  out.full = mean_se(x);
  const std::size_t n = x.size();
  for (std::size_t div : {8u, 4u, 2u, 1u}) {
    const std::size_t m = std::max<std::size_t>(1, n / div);
    out.nested.push_back(mean_se(x.first(std::min(m, n))).mean);
  }
  if (n < 16) return out;
  bool monotone = true;
  for (std::size_t i = 1; i < out.nested.size(); ++i)
    if (!(out.nested[i] > out.nested[i - 1])) monotone = false;
  const double growth = out.nested.back() - out.nested.front();
  out.diverging = monotone && growth > 3.0 * std::sqrt(7.0) * out.full.se;
  return out;
}

}  // namespace pivlab
