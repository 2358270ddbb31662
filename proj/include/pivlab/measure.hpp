#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "pivlab/audit.hpp"
#include "pivlab/bsde.hpp"
#include "pivlab/condexp.hpp"
#include "pivlab/error.hpp"
#include "pivlab/model.hpp"
#include "pivlab/sim.hpp"
#include "pivlab/stats.hpp"

namespace pivlab {

// F-adapted Girsanov kernel: theta0(t, state) and theta1(t, state, mark) > -1.
struct GirsanovSpec {
  std::function<double(const ObservedState&)> theta0 = [](const ObservedState&) { return 0.0; };
  std::function<double(const ObservedState&, double)> theta1 = [](const ObservedState&, double) {
    return 0.0;
  };
};

struct DensityPath {
  PathGrid g;
  int layer_level = 0;
  std::uint64_t ensemble_fingerprint = 0;

  std::vector<double> terminal(const StoppingLayer* layer) const { return terminal_values(g, layer); }
};

// Explicit stochastic exponential on the grid, frozen after T ^ tau:
// log G += theta0 dB - theta0^2 dt / 2 + sum log(1 + theta1) - dt int theta1 nu.
inline DensityPath doleans_exponential(const GirsanovSpec& spec, const PathEnsemble& e,
                                       const JumpSpec& jumps = {},
                                       const StoppingLayer* layer = nullptr) {
  const int n = e.grid.n_steps;
  const double dt = e.grid.dt();
  DensityPath d;
  d.g = PathGrid(e.n_paths, n + 1);
  d.layer_level = layer ? layer->level : 0;
  d.ensemble_fingerprint = e.fingerprint;
  const bool with_jumps = jumps.active() || e.has_jumps();
  parallel_for_blocks(e.n_paths, [&](int begin, int end) {
    for (int p = begin; p < end; ++p) {
      double log_g = 0.0;
      d.g(p, 0) = 1.0;
      const auto events = e.jumps_of(p);
      std::size_t ev = 0;
      const int stop = layer ? layer->tau_index[static_cast<std::size_t>(p)] : n;
      for (int j = 0; j < n; ++j) {
        if (j < stop) {
          const ObservedState st = observe(e, p, j, 0.0);
          const double th0 = spec.theta0(st);
          log_g += th0 * e.db(p, j) - 0.5 * th0 * th0 * dt;
          if (with_jumps) {
            for (; ev < events.size() && events[ev].step == j; ++ev) {
              const double th1 = spec.theta1(st, events[ev].mark);
              if (!(th1 > -1.0)) throw Error("density kill: theta1 out of range");
              log_g += std::log1p(th1);
            }
            log_g -= dt * jumps.integrate([&](double z) { return spec.theta1(st, z); });
          }
        }
        d.g(p, j + 1) = std::exp(log_g);
      }
    }
  });
  return d;
}

// Density G = p / mean p(T ^ tau) of an adjoint solution, with G(0) = 1.
inline DensityPath adjoint_density(const AdjointSolution& adj, const StoppingLayer* layer,
                                   const PathEnsemble& e) {
  if (adj.ensemble_fingerprint != e.fingerprint) throw Error("ensemble mismatch");
  double sum = 0.0;
  for (double v : terminal_values(adj.p, layer)) sum += v;
  const double norm = sum / e.n_paths;
  DensityPath d;
  d.g = adj.p;
  for (double& v : d.g.data()) v /= norm;
  for (int p = 0; p < e.n_paths; ++p) d.g(p, 0) = 1.0;
  d.layer_level = layer ? layer->level : 0;
  d.ensemble_fingerprint = e.fingerprint;
  return d;
}

// Density of the marginal-utility measure: terminal weights
// U'(X(T ^ tau)) / mean, intermediate values by G-projection.
inline DensityPath marginal_utility_density(const WealthPath& wealth, const UtilitySpec& utility,
                                            const StoppingLayer* layer, const PathEnsemble& e,
                                            const RegressionSpec& spec = {}) {
  return adjoint_density(solve_adjoint(e, wealth, utility, layer, spec, false), layer, e);
}

// Girsanov kernel implied by an adjoint solution: theta0 = q / p and
// int gamma theta1 nu = r_int / p (the density G = p / p(0)).
struct ImpliedGirsanov {
  const AdjointSolution* adjoint = nullptr;
};

struct PiemmPoint {
  int step = 0;
  double t = 0.0;
  double residual = 0.0;
  double se = 0.0;
  double zscore = 0.0;
};

struct PiemmReport {
  bool direct_applicable = false;
  std::vector<PiemmPoint> direct;  // audit (a): Q-conditional drift b + sigma theta0 + int gamma theta1 nu
  bool direct_pass = true;
  MartingaleReport structural;     // audit (b): G S^tau has F-martingale increments
  double family_threshold = kFamilyThreshold;
  bool verdict = true;
};

struct PiemmOptions {
  std::vector<int> checkpoints;  // default: 8 equally spaced plus T
  double threshold = kFamilyThreshold;
  const WealthPath* wealth = nullptr;  // adds X to the observed features
  bool use_filter = true;
};

namespace detail {

inline PiemmPoint weighted_point(const std::vector<double>& y, std::span<const double> w,
                                 const PathEnsemble& e, int j, const FiltrationTag& tag,
                                 const RegressionSpec& spec) {
  std::vector<double> wy(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) wy[i] = w[i] * y[i];
  const auto est = mean_se(wy);
  const auto res = project(y, e, j, tag, spec, w);
  return {j, e.grid.time(j), est.mean, est.se, (est.mean < 0 ? -1.0 : 1.0) * res.wald_z};
}

}  // namespace detail

inline PiemmReport piemm_check(const DensityPath& density,
                               const std::variant<std::monostate, GirsanovSpec, ImpliedGirsanov>& kernel,
                               const MarketModel& model, const PathEnsemble& e,
                               const StoppingLayer* layer, const RegressionSpec& spec = {},
                               const PiemmOptions& opt = {}) {
  if (density.ensemble_fingerprint != e.fingerprint || density.g.n_paths() != e.n_paths)
    throw Error("ensemble mismatch");
  PiemmReport rep;
  rep.family_threshold = opt.threshold;
  const auto terminal = density.terminal(layer);
  std::vector<double> w(terminal.begin(), terminal.end());
  double total = 0.0;
  for (double v : w) total += v;
  for (double& v : w) v *= e.n_paths / total;
  const auto tag = observed_tag(e, {layer, opt.wealth, opt.use_filter});
  auto cps = opt.checkpoints.empty() ? default_checkpoints(e.grid) : opt.checkpoints;

  if (!std::holds_alternative<std::monostate>(kernel)) {
    rep.direct_applicable = true;
    const double dt = e.grid.dt();
    for (int j : cps) {
      if (j >= e.grid.n_steps) continue;
      std::vector<double> y(static_cast<std::size_t>(e.n_paths), 0.0);
      const double t = e.grid.time(j);
      for (int p = 0; p < e.n_paths; ++p) {
        if (layer && !layer->alive(p, j)) continue;
        const CoefficientState cs{e.s(p, j), e.hidden_state(p, j)};
        const double b = model.drift(t, cs);
        const double sig = model.diffusion(t, cs);
        double v = 0.0;
        if (const auto* g = std::get_if<GirsanovSpec>(&kernel)) {
          const ObservedState st = observe(e, p, j, 0.0);
          const double th0 = g->theta0(st);
          const double jump = model.jumps.integrate(
              [&](double z) { return model.jump(t, cs, z) * g->theta1(st, z); });
          v = b + sig * th0 + jump;
        } else {
          const auto& adj = *std::get<ImpliedGirsanov>(kernel).adjoint;
          if (adj.ensemble_fingerprint != e.fingerprint) throw Error("ensemble mismatch");
          const double pj = adj.p(p, j);
          const double dp = adj.p(p, j + 1) - pj;
          v = (b * pj + dp * (sig * e.db(p, j) + e.jump_increment(p, j)) / dt) / pj;
        }
        y[static_cast<std::size_t>(p)] = v;
      }
      rep.direct.push_back(detail::weighted_point(y, w, e, j, tag, spec));
    }
    for (const auto& pt : rep.direct)
      if (!(std::abs(pt.zscore) < opt.threshold)) rep.direct_pass = false;
  }

  PathGrid stopped(e.n_paths, e.grid.n_points());
  for (int p = 0; p < e.n_paths; ++p)
    for (int j = 0; j <= e.grid.n_steps; ++j)
      stopped(p, j) = e.s(p, layer ? layer->stopped(p, j) : j);
  rep.structural = deflated_martingale_test(w, stopped, e, tag, cps, spec, opt.threshold);
  rep.verdict = rep.direct_pass && rep.structural.verdict;
  return rep;
}

struct MomentEntry {
  double order = 2.0;
  NestedEstimate estimate;  // E[sup_t |S(t)|^r]
};

struct MomentReport {
  std::vector<MomentEntry> moments;
  bool bound_ok = true;
  bool verdict = true;  // finite estimates, no divergence flag
};

inline MomentReport bounded_regime_validate(const MarketModel& model, const PathEnsemble& e,
                                            std::span<const double> orders) {
  if (!model.coefficient_bound) throw Error("bounded regime: model declares no coefficient bound");
  for (int p = 0; p < e.n_paths; ++p) {
    for (int j = 0; j < e.grid.n_steps; ++j) {
      const CoefficientState st{e.s(p, j), e.hidden_state(p, j)};
      const double t = e.grid.time(j);
      if (!model.within_bound(model.drift(t, st)) || !model.within_bound(model.diffusion(t, st)))
        throw Error("bounded regime violated at " + at_path_step(p, j));
    }
    for (const auto& ev : e.jumps_of(p))
      if (!model.within_bound(ev.size))
        throw Error("bounded regime violated at " + at_path_step(p, ev.step));
  }
  MomentReport rep;
  std::vector<double> sup_abs(static_cast<std::size_t>(e.n_paths));
  for (int p = 0; p < e.n_paths; ++p) {
    double m = 0.0;
    for (int j = 0; j <= e.grid.n_steps; ++j) m = std::max(m, std::abs(e.s(p, j)));
    sup_abs[static_cast<std::size_t>(p)] = m;
  }
  std::vector<double> buf(sup_abs.size());
  for (double r : orders) {
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = std::pow(sup_abs[i], r);
    MomentEntry entry{r, nested_estimate(buf)};
    if (entry.estimate.diverging || !std::isfinite(entry.estimate.full.mean)) rep.verdict = false;
    rep.moments.push_back(std::move(entry));
  }
  return rep;
}

}  // namespace pivlab
