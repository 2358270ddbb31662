#pragma once

#include <algorithm>
#include <cmath>
#include <optional>

#include <boost/math/tools/roots.hpp>

#include "pivlab/error.hpp"
#include "pivlab/model.hpp"
#include "pivlab/parallel.hpp"
#include "pivlab/sim.hpp"

namespace pivlab {

// dS = dt / S + dB, S(0) = 1. Pair with simulate_bes3 for exact paths.
inline MarketModel build_bessel() {
  MarketModel m;
  m.name = "bessel";
  m.drift = [](double, const CoefficientState& st) { return 1.0 / st.s; };
  m.diffusion = [](double, const CoefficientState&) { return 1.0; };
  m.s0 = 1.0;
  return m;
}

struct JumpParams {
  double size = 0.0;       // gamma = c
  double intensity = 0.0;  // lambda
};

// Constant coefficients b, sigma and optional constant jumps of size c at
// rate lambda; the coefficient bound is max(|b|, |sigma|, |c|).
inline MarketModel build_merton(double b, double sigma, std::optional<JumpParams> jump = std::nullopt,
                                double s0 = 1.0) {
  if (!std::isfinite(b) || !std::isfinite(sigma) || !std::isfinite(s0))
    throw Error("merton: coefficients must be finite");
  MarketModel m;
  m.name = "merton";
  m.drift = [b](double, const CoefficientState&) { return b; };
  m.diffusion = [sigma](double, const CoefficientState&) { return sigma; };
  m.s0 = s0;
  double bound = std::max(std::abs(b), std::abs(sigma));
  if (jump && jump->intensity > 0.0) {
    const double c = jump->size;
    const double lam = jump->intensity;
    m.jumps = JumpSpec::make(lam, DiracMark{0.0});
    m.jump = [c](double, const CoefficientState&, double) { return c; };
    m.jump_compensator = [c, lam](double, const CoefficientState&) { return c * lam; };
    bound = std::max(bound, std::abs(c));
  }
  m.coefficient_bound = bound;
  return m;
}

// Log-optimal fraction of wealth pi (phi = pi X) for constant Merton
// coefficients: b - pi sigma^2 + lambda c (1 / (1 + pi c) - 1) = 0.
inline double merton_log_fraction(double b, double sigma, std::optional<JumpParams> jump = std::nullopt) {
  if (!(sigma > 0.0)) throw Error("merton: log-optimal fraction needs sigma > 0");
  if (!jump || jump->intensity == 0.0 || jump->size == 0.0) return b / (sigma * sigma);
  const double c = jump->size, lam = jump->intensity;
  auto foc = [&](double pi) { return b - pi * sigma * sigma + lam * c * (1.0 / (1.0 + pi * c) - 1.0); };
  // Wealth stays positive only while 1 + pi c > 0; foc is decreasing on that interval.
  double lo = c > 0.0 ? -1.0 / c : -1e6, hi = c < 0.0 ? -1.0 / c : 1e6;
  const double shrink = 1e-12 * (hi - lo);
  lo += shrink;
  hi -= shrink;
  if (foc(lo) < 0.0) return lo;
  if (foc(hi) > 0.0) return hi;
  boost::uintmax_t iters = 400;
  const auto r = boost::math::tools::bisect(foc, lo, hi, boost::math::tools::eps_tolerance<double>(50), iters);
  return 0.5 * (r.first + r.second);
}

// Hidden two-state drift: dS = mu_{h(t)} dt + sigma dB with h a Markov chain.
struct HiddenDriftSpec {
  double mu_low = 0.0;
  double mu_high = 0.3;
  double rate_up = 0.5;
  double rate_down = 0.5;
  double sigma = 0.2;
  double pi0 = 0.5;
  double s0 = 1.0;

  void validate() const {
    if (!(rate_up >= 0.0) || !(rate_down >= 0.0)) throw Error("hidden drift: rates must be >= 0");
    if (!(pi0 >= 0.0 && pi0 <= 1.0)) throw Error("hidden drift: pi0 must lie in [0, 1]");
    if (!(sigma > 0.0)) throw Error("hidden drift: sigma must be > 0");
  }
  TwoStateChain chain() const { return {rate_up, rate_down, pi0}; }
};

inline MarketModel build_hidden_drift(const HiddenDriftSpec& spec) {
  spec.validate();
  MarketModel m;
  m.name = "hidden-drift";
  const double lo = spec.mu_low, hi = spec.mu_high, sig = spec.sigma;
  m.drift = [lo, hi](double, const CoefficientState& st) { return st.hidden ? hi : lo; };
  m.diffusion = [sig](double, const CoefficientState&) { return sig; };
  m.s0 = spec.s0;
  m.hidden = spec.chain();
  return m;
}

// Discrete-time two-state filter on the simulation grid: Bayes update with
// the Gaussian likelihood of each observed increment, then one-step prediction.
// Returns pi(t_j) = P(high regime drives step j | S(t_0..t_j)).
inline PathGrid wonham_filter(const PathEnsemble& e, const HiddenDriftSpec& spec) {
  spec.validate();
  const TwoStateChain chain = spec.chain();
  const double dt = e.grid.dt();
  const double stay_high = chain.prob_to_high(1, dt);
  const double enter_high = chain.prob_to_high(0, dt);
  const double gap = spec.mu_high - spec.mu_low;
  const double mid = 0.5 * (spec.mu_high + spec.mu_low) * dt;
  const double s2 = spec.sigma * spec.sigma;
  PathGrid pi(e.n_paths, e.grid.n_points());
  parallel_for_blocks(e.n_paths, [&](int begin, int end) {
    for (int p = begin; p < end; ++p) {
      double cur = spec.pi0;
      pi(p, 0) = cur;
      for (int j = 0; j < e.grid.n_steps; ++j) {
        const double ds = e.s(p, j + 1) - e.s(p, j);
        const double llr = gap * (ds - mid) / s2;  // log L_high - log L_low
        double post;
        if (cur <= 0.0) post = 0.0;
        else if (cur >= 1.0) post = 1.0;
        else if (llr >= 0.0) post = cur / (cur + (1.0 - cur) * std::exp(-llr));
        else post = cur * std::exp(llr) / (cur * std::exp(llr) + (1.0 - cur));
        cur = std::clamp(post * stay_high + (1.0 - post) * enter_high, 0.0, 1.0);
        pi(p, j + 1) = cur;
      }
    }
  });
  return pi;
}

// Log-optimal feedback with the filtered drift: phi = E[b | F] X / sigma^2.
inline Strategy filter_strategy(const HiddenDriftSpec& spec) {
  const double lo = spec.mu_low, hi = spec.mu_high, s2 = spec.sigma * spec.sigma;
  Strategy s{"filter", [lo, hi, s2](const ObservedState& st) {
               return (st.pi * hi + (1.0 - st.pi) * lo) * st.x / s2;
             }};
  s.needs_filter = true;
  return s;
}

// Feedback that assumes a constant drift mu_bar: phi = mu_bar X / sigma^2.
inline Strategy constant_drift_strategy(const HiddenDriftSpec& spec, double mu_bar) {
  const double s2 = spec.sigma * spec.sigma;
  return {"constant-drift(" + std::to_string(mu_bar) + ")",
          [mu_bar, s2](const ObservedState& st) { return mu_bar * st.x / s2; }};
}

}  // namespace pivlab
