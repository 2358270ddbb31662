#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <type_traits>
#include <variant>

#include "pivlab/error.hpp"
#include "pivlab/quadrature.hpp"

namespace pivlab {

// Predictable state handed to coefficient evaluators: the left limit of the
// price plus the hidden regime (0 low, 1 high) when the scenario has one.
struct CoefficientState {
  double s = 0.0;
  int hidden = 0;
};

using CoefficientFn = std::function<double(double t, const CoefficientState&)>;
using JumpSizeFn = std::function<double(double t, const CoefficientState&, double mark)>;

struct DiracMark {
  double at = 0.0;
};
struct NormalMark {
  double mean = 0.0;
  double sd = 1.0;
};
struct UniformMark {
  double lo = 0.0;
  double hi = 1.0;
};
using MarkDistribution = std::variant<DiracMark, NormalMark, UniformMark>;

// Finite-activity jump measure nu = intensity * law(mark).
struct JumpSpec {
  double intensity = 0.0;
  MarkDistribution marks = DiracMark{};

  static JumpSpec none() { return {}; }
  static JumpSpec make(double intensity, MarkDistribution marks) {
    if (!(intensity >= 0.0) || !std::isfinite(intensity))
      throw Error("jump spec: intensity must be finite and >= 0");
    if (const auto* n = std::get_if<NormalMark>(&marks); n && !(n->sd >= 0.0))
      throw Error("jump spec: normal mark sd must be >= 0");
    if (const auto* u = std::get_if<UniformMark>(&marks); u && !(u->hi >= u->lo))
      throw Error("jump spec: uniform mark needs lo <= hi");
    return {intensity, marks};
  }

  bool active() const noexcept { return intensity > 0.0; }

  // Mark from two open-unit uniforms.
  double sample(double u1, double u2) const {
    return std::visit(
        [&](const auto& m) -> double {
          using M = std::decay_t<decltype(m)>;
          if constexpr (std::is_same_v<M, DiracMark>) {
            return m.at;
          } else if constexpr (std::is_same_v<M, NormalMark>) {
            return m.mean + m.sd * std::sqrt(-2.0 * std::log(u1)) *
                                std::cos(2.0 * std::numbers::pi * u2);
          } else {
            return m.lo + (m.hi - m.lo) * u1;
          }
        },
        marks);
  }

  // int r(zeta) nu(d zeta): exact for Dirac marks, 48-point Gauss rules otherwise.
  template <class R>
  double integrate(R&& r) const {
    if (!active()) return 0.0;
    return intensity * std::visit(
                           [&](const auto& m) -> double {
                             using M = std::decay_t<decltype(m)>;
                             if constexpr (std::is_same_v<M, DiracMark>) {
                               return r(m.at);
                             } else if constexpr (std::is_same_v<M, NormalMark>) {
                               static const QuadratureRule rule = gauss_hermite_normal(48);
                               double acc = 0.0;
                               for (std::size_t i = 0; i < rule.nodes.size(); ++i)
                                 acc += rule.weights[i] * r(m.mean + m.sd * rule.nodes[i]);
                               return acc;
                             } else {
                               if (m.hi == m.lo) return r(m.lo);
                               static const QuadratureRule rule = gauss_legendre(48, 0.0, 1.0);
                               double acc = 0.0;
                               for (std::size_t i = 0; i < rule.nodes.size(); ++i)
                                 acc += rule.weights[i] * r(m.lo + (m.hi - m.lo) * rule.nodes[i]);
                               return acc;
                             }
                           },
                           marks);
  }
};

// Hidden two-state regime: 0 = low drift, 1 = high drift.
struct TwoStateChain {
  double rate_up = 0.0;    // low -> high
  double rate_down = 0.0;  // high -> low
  double pi0 = 0.5;        // P(high at time 0)

  // Exact one-step transition probabilities over dt.
  double prob_to_high(int from, double dt) const {
    const double total = rate_up + rate_down;
    if (total <= 0.0) return from == 1 ? 1.0 : 0.0;
    const double mix = 1.0 - std::exp(-total * dt);
    return from == 1 ? 1.0 - rate_down / total * mix : rate_up / total * mix;
  }
};

// dS = b dt + sigma dB + int gamma (N - nu)(dt, d zeta).
struct MarketModel {
  std::string name = "custom";
  CoefficientFn drift = [](double, const CoefficientState&) { return 0.0; };
  CoefficientFn diffusion = [](double, const CoefficientState&) { return 0.0; };
  JumpSizeFn jump = [](double, const CoefficientState&, double) { return 0.0; };
  JumpSpec jumps;
  double s0 = 1.0;
  std::optional<double> coefficient_bound;
  std::optional<TwoStateChain> hidden;
  // Closed form of int gamma(t, state, zeta) nu(d zeta) when known; quadrature otherwise.
  CoefficientFn jump_compensator;

  double compensator(double t, const CoefficientState& st) const {
    if (!jumps.active()) return 0.0;
    if (jump_compensator) return jump_compensator(t, st);
    return jumps.integrate([&](double z) { return jump(t, st, z); });
  }

  bool within_bound(double value) const {
    return !coefficient_bound || std::abs(value) <= *coefficient_bound * (1.0 + 1e-12);
  }
};

enum class UtilityKind { kLog, kPower, kExponential, kLinear };

struct UtilitySpec {
  UtilityKind kind = UtilityKind::kLog;
  double param = 0.0;  // power exponent or risk aversion

  static UtilitySpec log() { return {UtilityKind::kLog, 0.0}; }
  static UtilitySpec power(double gamma) {
    if (!(gamma < 1.0) || gamma == 0.0)
      throw Error("utility: power exponent must be < 1 and nonzero");
    return {UtilityKind::kPower, gamma};
  }
  static UtilitySpec exponential(double alpha) {
    if (!(alpha > 0.0)) throw Error("utility: exponential risk aversion must be > 0");
    return {UtilityKind::kExponential, alpha};
  }
  static UtilitySpec linear() { return {UtilityKind::kLinear, 0.0}; }

  bool in_domain(double x) const {
    if (!std::isfinite(x)) return false;
    return (kind == UtilityKind::kLog || kind == UtilityKind::kPower) ? x > 0.0 : true;
  }

  double u(double x) const {
    if (!in_domain(x)) throw DomainViolation({});
    switch (kind) {
      case UtilityKind::kLog: return std::log(x);
      case UtilityKind::kPower: return std::pow(x, param) / param;
      case UtilityKind::kExponential: return -std::exp(-param * x) / param;
      case UtilityKind::kLinear: return x;
    }
    return x;
  }

  double u_prime(double x) const {
    if (!in_domain(x)) throw DomainViolation({});
    switch (kind) {
      case UtilityKind::kLog: return 1.0 / x;
      case UtilityKind::kPower: return std::pow(x, param - 1.0);
      case UtilityKind::kExponential: return std::exp(-param * x);
      case UtilityKind::kLinear: return 1.0;
    }
    return 1.0;
  }

  std::string name() const {
    switch (kind) {
      case UtilityKind::kLog: return "log";
      case UtilityKind::kPower: return "power(" + std::to_string(param) + ")";
      case UtilityKind::kExponential: return "exponential(" + std::to_string(param) + ")";
      case UtilityKind::kLinear: return "linear";
    }
    return "?";
  }
};

inline double marginal_utility(const UtilitySpec& utility, double wealth) {
  return utility.u_prime(wealth);
}

// What a strategy may look at when choosing the holding over [t_j, t_{j+1}):
// left-point time, price, current wealth and the filter probability.
struct ObservedState {
  double t = 0.0;
  double s = 0.0;
  double x = 0.0;
  double pi = 0.0;
};

struct Strategy {
  std::string label = "custom";
  std::function<double(const ObservedState&)> phi = [](const ObservedState&) { return 0.0; };
  bool needs_filter = false;

  double operator()(const ObservedState& st) const { return phi(st); }

  static Strategy constant(double c) {
    return {"constant(" + std::to_string(c) + ")", [c](const ObservedState&) { return c; }};
  }
  // phi = c * X, i.e. a fixed number of wealth units per unit of price move.
  static Strategy proportional(double c) {
    return {"proportional(" + std::to_string(c) + ")",
            [c](const ObservedState& st) { return c * st.x; }};
  }
};

}  // namespace pivlab
