#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pivlab/admissibility.hpp"
#include "pivlab/audit.hpp"
#include "pivlab/condexp.hpp"
#include "pivlab/error.hpp"
#include "pivlab/model.hpp"
#include "pivlab/sim.hpp"
#include "pivlab/stats.hpp"

namespace pivlab {

// dH/dphi; the Hamiltonian is linear in phi.
inline double hamiltonian_derivative(double b, double sigma, double p, double q,
                                     double r_gamma_int) {
  return b * p + sigma * q + r_gamma_int;
}

struct AdjointSolution {
  PathGrid p;      // grid points 0..n_steps
  PathGrid q;      // steps 0..n_steps-1
  PathGrid r_int;  // int gamma r nu, steps 0..n_steps-1
  std::optional<StoppingLayer> layer;
  std::uint64_t ensemble_fingerprint = 0;
};

namespace detail {

// Degrades the basis until the row count supports it; nullopt means only a
// sample mean is affordable.
inline std::optional<RegressionSpec> affordable_spec(const FiltrationTag& tag, RegressionSpec spec,
                                                     int rows) {
  while (Projector::basis_size(tag, spec) * 10 > rows) {
    if (spec.augment) spec.augment = false;
    else if (spec.degree > 0) --spec.degree;
    else return std::nullopt;
  }
  return spec;
}

// Fits each target over `rows` at grid index `step` and returns fitted values per row.
inline std::vector<std::vector<double>> fit_rows(const FiltrationTag& tag,
                                                 const std::vector<int>& rows, int step, int n_paths,
                                                 const RegressionSpec& spec,
                                                 const std::vector<std::vector<double>>& targets) {
  std::vector<std::vector<double>> out;
  const auto usable = affordable_spec(tag, spec, static_cast<int>(rows.size()));
  if (!usable) {
    for (const auto& y : targets) {
      const double m = mean_se(y).mean;
      out.emplace_back(y.size(), m);
    }
    return out;
  }
  const int steps[1] = {step};
  Projector proj(tag, rows, steps, n_paths, step, *usable);
  for (const auto& y : targets) out.push_back(proj.fit(y, false).fitted);
  return out;
}

inline void alive_rows(const PathEnsemble& e, const StoppingLayer* layer, int j,
                       std::vector<int>& rows) {
  rows.clear();
  for (int p = 0; p < e.n_paths; ++p)
    if (!layer || layer->alive(p, j)) rows.push_back(p);
}

// Fills v(p, j) for j < tau_p with v_j = E[v_{j+1} | tag_j] over the paths
// still alive at j; columns from tau_p on must already be set. Each step
// first estimates the martingale integrands q_j = E[(v_{j+1} - v0_j) dB_j] / dt
// and r_j = E[(v_{j+1} - v0_j) dJ_j] / dt from a plain projection v0_j, then
// projects the control-variate target v_{j+1} - q_j dB_j - r_j dJ_j, which has
// the same conditional mean and a variance smaller by a factor of order dt.
inline void backward_martingale(PathGrid& v, const PathEnsemble& e, const FiltrationTag& tag,
                                const StoppingLayer* layer, const RegressionSpec& spec,
                                PathGrid* q = nullptr, PathGrid* r = nullptr) {
  const double dt = e.grid.dt();
  const bool jumps = e.has_jumps();
  std::vector<int> rows;
  for (int j = e.grid.n_steps - 1; j >= 0; --j) {
    alive_rows(e, layer, j, rows);
    if (rows.empty()) continue;
    const std::size_t m = rows.size();
    const auto usable = affordable_spec(tag, spec, static_cast<int>(m));
    std::optional<Projector> proj;
    if (usable) {
      const int steps[1] = {j};
      proj.emplace(tag, rows, steps, e.n_paths, j, *usable);
    }
    auto fit = [&](const std::vector<double>& y) {
      if (proj) return proj->fit(y, false).fitted;
      return std::vector<double>(y.size(), mean_se(y).mean);
    };
    std::vector<double> y(m);
    for (std::size_t i = 0; i < m; ++i) y[i] = v(rows[i], j + 1);
    const auto v0 = fit(y);
    std::vector<double> yq(m), yr(jumps ? m : 0);
    for (std::size_t i = 0; i < m; ++i) {
      const double dv = y[i] - v0[i];
      yq[i] = dv * e.db(rows[i], j) / dt;
      if (jumps) yr[i] = dv * e.jump_increment(rows[i], j) / dt;
    }
    const auto qj = fit(yq);
    const auto rj = jumps ? fit(yr) : std::vector<double>{};
    for (std::size_t i = 0; i < m; ++i) {
      y[i] -= qj[i] * e.db(rows[i], j);
      if (jumps) y[i] -= rj[i] * e.jump_increment(rows[i], j);
    }
    const auto vj = fit(y);
    for (std::size_t i = 0; i < m; ++i) {
      v(rows[i], j) = vj[i];
      if (q) (*q)(rows[i], j) = qj[i];
      if (r && jumps) (*r)(rows[i], j) = rj[i];
    }
  }
}

}  // namespace detail

// Backward regression for the adjoint BSDE: p(T) = U'(X(T ^ tau)),
// p(t_j) = E[p(t_{j+1}) | G_j], q(t_j) = E[p_{j+1} dB_j | G_j] / dt and
// r_int(t_j) = E[p_{j+1} dJ_j | G_j] / dt with dJ the compensated jump
// increment. After T ^ tau the values are known and carried unchanged.
inline AdjointSolution solve_adjoint(const PathEnsemble& e, const WealthPath& wealth,
                                     const UtilitySpec& utility, const StoppingLayer* layer,
                                     const RegressionSpec& spec = {}, bool integrands = true) {
  if (wealth.ensemble_fingerprint != e.fingerprint) throw Error("ensemble mismatch");
  const int n = e.grid.n_steps;
  AdjointSolution sol;
  sol.p = PathGrid(e.n_paths, n + 1);
  sol.q = PathGrid(e.n_paths, n, 0.0);
  sol.r_int = PathGrid(e.n_paths, n, 0.0);
  if (layer) sol.layer = *layer;
  sol.ensemble_fingerprint = e.fingerprint;

  std::vector<int> bad;
  for (int p = 0; p < e.n_paths; ++p) {
    const int tau = layer ? layer->stopped(p, n) : n;
    const double x = wealth.x(p, tau);
    if (!utility.in_domain(x)) {
      bad.push_back(p);
      continue;
    }
    const double terminal = utility.u_prime(x);
    if (!std::isfinite(terminal) || !(terminal > 0.0)) {
      bad.push_back(p);
      continue;
    }
    for (int j = tau; j <= n; ++j) sol.p(p, j) = terminal;
  }
  if (!bad.empty()) throw DomainViolation(std::move(bad));

  const auto tag = full_tag(e, {layer, &wealth, true});
  detail::backward_martingale(sol.p, e, tag, layer, spec, integrands ? &sol.q : nullptr,
                              integrands ? &sol.r_int : nullptr);
  return sol;
}

struct OptimalityPoint {
  int step = 0;
  double t = 0.0;
  double residual = 0.0;    // sample mean of the first-order-condition target
  double se = 0.0;
  double zscore = 0.0;      // joint test of E[. | F_t] = 0, signed by the residual
  double fitted_rms = 0.0;  // root mean square of the fitted F-conditional residual
};

struct OptimalityReport {
  std::vector<OptimalityPoint> points;
  double family_threshold = kFamilyThreshold;
  bool verdict = true;

  double max_abs_z() const {
    double m = 0.0;
    for (const auto& pt : points) m = std::max(m, std::abs(pt.zscore));
    return m;
  }
};

struct OptimalityOptions {
  std::vector<int> checkpoints;       // grid indices in [0, n_steps); default: 8 equally spaced
  double threshold = kFamilyThreshold;
  const WealthPath* wealth = nullptr;  // adds X to the observed features
  bool use_filter = true;
};

// Per-path targets whose F-conditional mean at step j is b p + sigma q + int gamma r nu.
// With tail_j = p(T ^ tau) - sum_{j <= k < tau} (q_k dB_k + r_k dJ_k) the target is
//   b tail_j + (tail_{j+1} - p_j)(sigma dB_j + dJ_j) / dt
// while alive, 0 after tau. The fitted p, q and r only enter as control
// variates, so regression error in the adjoint cannot bias the residual.
inline std::vector<std::vector<double>> optimality_targets(const AdjointSolution& adj,
                                                           const MarketModel& model,
                                                           const PathEnsemble& e,
                                                           const StoppingLayer* layer,
                                                           std::span<const int> checkpoints) {
  const double dt = e.grid.dt();
  const int n = e.grid.n_steps;
  std::vector<std::vector<double>> out(checkpoints.size(),
                                       std::vector<double>(static_cast<std::size_t>(e.n_paths), 0.0));
  for (int p = 0; p < e.n_paths; ++p) {
    const int tau = layer ? layer->stopped(p, n) : n;
    double tail = adj.p(p, tau);
    for (int j = tau - 1; j >= 0; --j) {
      const double next = tail;
      const double dj = e.jump_increment(p, j);
      tail -= adj.q(p, j) * e.db(p, j) + adj.r_int(p, j) * dj;
      for (std::size_t c = 0; c < checkpoints.size(); ++c) {
        if (checkpoints[c] != j) continue;
        const double t = e.grid.time(j);
        const CoefficientState st{e.s(p, j), e.hidden_state(p, j)};
        const double b = model.drift(t, st);
        const double sig = model.diffusion(t, st);
        out[c][static_cast<std::size_t>(p)] = b * tail + (next - adj.p(p, j)) * (sig * e.db(p, j) + dj) / dt;
      }
    }
  }
  return out;
}

inline std::vector<int> optimality_checkpoints(const TimeGrid& grid, std::vector<int> cps) {
  if (cps.empty()) {
    cps = default_checkpoints(grid);
    cps.pop_back();
  }
  for (int c : cps)
    if (c < 0 || c >= grid.n_steps) throw Error("optimality: checkpoint out of range");
  return cps;
}

inline OptimalityReport check_optimality(const AdjointSolution& adj, const MarketModel& model,
                                         const PathEnsemble& e, const StoppingLayer* layer,
                                         const RegressionSpec& spec = {},
                                         const OptimalityOptions& opt = {}) {
  if (adj.ensemble_fingerprint != e.fingerprint || adj.p.n_paths() != e.n_paths ||
      adj.p.n_cols() != e.grid.n_points())
    throw Error("ensemble mismatch");
  if (opt.wealth && opt.wealth->ensemble_fingerprint != e.fingerprint)
    throw Error("ensemble mismatch");
  if ((layer ? layer->level : 0) != (adj.layer ? adj.layer->level : 0))
    throw Error("layer mismatch");
  OptimalityReport rep;
  rep.family_threshold = opt.threshold;
  const auto tag = observed_tag(e, {layer, opt.wealth, opt.use_filter});
  const auto cps = optimality_checkpoints(e.grid, opt.checkpoints);
  const auto targets = optimality_targets(adj, model, e, layer, cps);
  for (std::size_t c = 0; c < cps.size(); ++c) {
    const int j = cps[c];
    const auto& y = targets[c];
    const auto est = mean_se(y);
    const auto res = project(y, e, j, tag, spec);
    double ss = 0.0;
    for (double f : res.fitted) ss += f * f;
    const double sign = est.mean < 0.0 ? -1.0 : 1.0;
    rep.points.push_back(
        {j, e.grid.time(j), est.mean, est.se, sign * res.wald_z, std::sqrt(ss / e.n_paths)});
  }
  rep.verdict = rep.max_abs_z() < opt.threshold;
  return rep;
}

// Finite-dimensional strategy family phi = make(theta), theta in a box.
struct StrategyFamily {
  std::string name;
  std::vector<std::pair<double, double>> bounds;
  std::function<Strategy(std::span<const double>)> make;

  static StrategyFamily constant(double lo, double hi) {
    return {"constant", {{lo, hi}}, [](std::span<const double> th) { return Strategy::constant(th[0]); }};
  }
  static StrategyFamily proportional(double lo, double hi) {
    return {"proportional", {{lo, hi}},
            [](std::span<const double> th) { return Strategy::proportional(th[0]); }};
  }
};

struct OptimizationResult {
  std::vector<double> params;
  Strategy strategy;
  MeanEstimate objective;  // E[U(X(T ^ tau))] at the optimum
  std::vector<std::vector<double>> inadmissible;  // parameter points with domain violations
  AdmissibilityReport admissibility;
  OptimalityReport report;
  int evaluations = 0;
};

struct OptimizeOptions {
  double x0 = 1.0;
  int grid_points = 21;       // coarse grid per coordinate
  int refine_iterations = 40;  // golden-section iterations per coordinate
  int sweeps = 3;              // coordinate sweeps (multi-parameter families)
  RegressionSpec regression;
  OptimalityOptions optimality;
};

// Maximizes the sample mean of U(X(T ^ tau)) on one ensemble, so every
// parameter sees the same random numbers.
inline OptimizationResult optimize_strategy(const MarketModel& model, const PathEnsemble& e,
                                            const UtilitySpec& utility, const StoppingLayer* layer,
                                            const StrategyFamily& family,
                                            const OptimizeOptions& opt = {}) {
  if (family.bounds.empty()) throw Error("optimize: family has no parameters");
  OptimizationResult out;
  std::vector<std::vector<double>> flagged;
  auto objective = [&](const std::vector<double>& th) {
    ++out.evaluations;
    const auto w = integrate_wealth(e, family.make(th), opt.x0, layer);
    const auto xt = terminal_values(w.x, layer);
    double acc = 0.0;
    for (double x : xt) {
      if (!utility.in_domain(x)) {
        flagged.push_back(th);
        return -std::numeric_limits<double>::infinity();
      }
      acc += utility.u(x);
    }
    return acc / static_cast<double>(xt.size());
  };

  std::vector<double> theta;
  for (const auto& [lo, hi] : family.bounds) theta.push_back(0.5 * (lo + hi));
  double best = objective(theta);
  const int sweeps = family.bounds.size() == 1 ? 1 : opt.sweeps;
  for (int sweep = 0; sweep < sweeps; ++sweep) {
    for (std::size_t k = 0; k < family.bounds.size(); ++k) {
      const auto [lo, hi] = family.bounds[k];
      auto at = [&](double v) {
        auto th = theta;
        th[k] = v;
        return objective(th);
      };
      const int g = std::max(3, opt.grid_points);
      const double h = (hi - lo) / (g - 1);
      int arg = 0;
      double val = -std::numeric_limits<double>::infinity();
      for (int i = 0; i < g; ++i) {
        const double f = at(lo + i * h);
        if (f > val) {
          val = f;
          arg = i;
        }
      }
      double a = lo + std::max(0, arg - 1) * h;
      double b = lo + std::min(g - 1, arg + 1) * h;
      const double ratio = (std::sqrt(5.0) - 1.0) / 2.0;
      double c = b - ratio * (b - a);
      double d = a + ratio * (b - a);
      double fc = at(c), fd = at(d);
      for (int it = 0; it < opt.refine_iterations; ++it) {
        if (fc >= fd) {
          b = d;
          d = c;
          fd = fc;
          c = b - ratio * (b - a);
          fc = at(c);
        } else {
          a = c;
          c = d;
          fc = fd;
          d = a + ratio * (b - a);
          fd = at(d);
        }
      }
      const double cand = fc >= fd ? c : d;
      const double fcand = std::max(fc, fd);
      const double grid_best = lo + arg * h;
      if (fcand >= val) {
        theta[k] = cand;
        best = fcand;
      } else {
        theta[k] = grid_best;
        best = val;
      }
    }
  }
  (void)best;
  std::sort(flagged.begin(), flagged.end());
  flagged.erase(std::unique(flagged.begin(), flagged.end()), flagged.end());
  out.inadmissible = std::move(flagged);
  out.params = theta;
  out.strategy = family.make(theta);
  const auto w = integrate_wealth(e, out.strategy, opt.x0, layer);
  const auto xt = terminal_values(w.x, layer);
  std::vector<double> u(xt.size());
  for (std::size_t i = 0; i < xt.size(); ++i) u[i] = utility.u(xt[i]);
  out.objective = mean_se(u);
  out.admissibility = validate_admissibility(&w, e, utility, layer);
  const auto adj = solve_adjoint(e, w, utility, layer, opt.regression);
  auto oo = opt.optimality;
  if (!oo.wealth) oo.wealth = &w;
  out.report = check_optimality(adj, model, e, layer, opt.regression, oo);
  return out;
}

}  // namespace pivlab
