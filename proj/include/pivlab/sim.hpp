#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <optional>
#include <string>
#include <vector>

#include "pivlab/error.hpp"
#include "pivlab/grid.hpp"
#include "pivlab/model.hpp"
#include "pivlab/parallel.hpp"
#include "pivlab/rng.hpp"

namespace pivlab {

struct JumpEvent {
  int step = 0;
  double mark = 0.0;
  double size = 0.0;  // gamma(t_j-, zeta)
};

// Discretized trajectories. Columns of `s`, `hidden` and `filter` are grid
// points 0..n_steps; columns of the increment grids are steps 0..n_steps-1.
struct PathEnsemble {
  TimeGrid grid;
  int n_paths = 0;
  std::uint64_t seed = 0;
  double s0 = 1.0;
  std::string model_name;
  PathGrid s;
  PathGrid db;
  PathGrid jump_sum;     // sum of jump sizes inside step j; empty when no jumps
  PathGrid compensator;  // dt * int gamma nu at step j; empty when no jumps
  std::vector<std::size_t> jump_offsets;  // CSR index into jump_events, n_paths + 1 entries
  std::vector<JumpEvent> jump_events;
  std::optional<PathMatrix<int>> hidden;
  std::optional<PathGrid> filter;  // P(high | observations), attached by the hidden-drift scenario
  std::uint64_t fingerprint = 0;

  bool has_jumps() const noexcept { return !jump_sum.empty(); }

  // Compensated jump increment of step j.
  double jump_increment(int path, int step) const noexcept {
    return has_jumps() ? jump_sum(path, step) - compensator(path, step) : 0.0;
  }

  std::span<const JumpEvent> jumps_of(int path) const noexcept {
    if (jump_offsets.empty()) return {};
    const auto b = jump_offsets[static_cast<std::size_t>(path)];
    const auto e = jump_offsets[static_cast<std::size_t>(path) + 1];
    return {jump_events.data() + b, e - b};
  }

  double pi(int path, int col) const noexcept { return filter ? (*filter)(path, col) : 0.0; }
  int hidden_state(int path, int col) const noexcept { return hidden ? (*hidden)(path, col) : 0; }
};

namespace detail {

inline std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t bytes) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < bytes; ++i) {
    h ^= p[i];
    h *= 0x100000001B3ull;
  }
  return h;
}

inline std::uint64_t compute_fingerprint(const PathEnsemble& e) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  h = fnv1a(h, &e.seed, sizeof e.seed);
  h = fnv1a(h, &e.n_paths, sizeof e.n_paths);
  h = fnv1a(h, &e.grid.horizon, sizeof e.grid.horizon);
  h = fnv1a(h, &e.grid.n_steps, sizeof e.grid.n_steps);
  h = fnv1a(h, e.model_name.data(), e.model_name.size());
  h = fnv1a(h, e.s.data().data(), e.s.data().size() * sizeof(double));
  return h;
}

}  // namespace detail

inline void finalize_ensemble(PathEnsemble& e) { e.fingerprint = detail::compute_fingerprint(e); }

// Euler scheme with left-point coefficients and compensated jumps.
inline PathEnsemble simulate(const MarketModel& model, const TimeGrid& grid, int n_paths,
                             std::uint64_t seed) {
  if (n_paths < 1) throw Error("n_paths must be >= 1");
  PathEnsemble e;
  e.grid = grid;
  e.n_paths = n_paths;
  e.seed = seed;
  e.s0 = model.s0;
  e.model_name = model.name;
  const int n = grid.n_steps;
  e.s = PathGrid(n_paths, n + 1);
  e.db = PathGrid(n_paths, n);
  const bool jumps = model.jumps.active();
  if (jumps) {
    e.jump_sum = PathGrid(n_paths, n);
    e.compensator = PathGrid(n_paths, n);
  }
  if (model.hidden) e.hidden = PathMatrix<int>(n_paths, n + 1);

  const CounterRng rng(seed);
  const double dt = grid.dt();
  const double sqdt = std::sqrt(dt);
  std::vector<std::vector<JumpEvent>> events(jumps ? static_cast<std::size_t>(n_paths) : 0);

  parallel_for_blocks(n_paths, [&](int begin, int end) {
    for (int p = begin; p < end; ++p) {
      const auto up = static_cast<std::uint32_t>(p);
      double s = model.s0;
      int h = 0;
      if (model.hidden) {
        h = rng.uniform(up, 0, Stream::kHiddenInit) < model.hidden->pi0 ? 1 : 0;
        (*e.hidden)(p, 0) = h;
      }
      e.s(p, 0) = s;
      for (int j = 0; j < n; ++j) {
        const auto uj = static_cast<std::uint32_t>(j);
        const double t = grid.time(j);
        const CoefficientState st{s, h};
        const double b = model.drift(t, st);
        const double sig = model.diffusion(t, st);
        if (!std::isfinite(b) || !std::isfinite(sig))
          throw Error("coefficient blow-up at " + at_path_step(p, j));
        if (!model.within_bound(b) || !model.within_bound(sig))
          throw Error("bounded regime violated at " + at_path_step(p, j));
        const double dbj = sqdt * rng.normal(up, uj, Stream::kBrownian);
        double ds = b * dt + sig * dbj;
        if (jumps) {
          const int k = rng.poisson(model.jumps.intensity * dt, up, uj, Stream::kJumpCount);
          double sum = 0.0;
          for (int i = 0; i < k; ++i) {
            const auto u = rng.uniforms(up, uj, Stream::kJumpMark, static_cast<std::uint32_t>(i));
            const double mark = model.jumps.sample(u[0], u[1]);
            const double size = model.jump(t, st, mark);
            if (!std::isfinite(size)) throw Error("coefficient blow-up at " + at_path_step(p, j));
            if (!model.within_bound(size))
              throw Error("bounded regime violated at " + at_path_step(p, j));
            sum += size;
            events[static_cast<std::size_t>(p)].push_back({j, mark, size});
          }
          const double comp = dt * model.compensator(t, st);
          if (!std::isfinite(comp)) throw Error("coefficient blow-up at " + at_path_step(p, j));
          e.jump_sum(p, j) = sum;
          e.compensator(p, j) = comp;
          ds += sum - comp;
        }
        s += ds;
        if (!std::isfinite(s)) throw Error("coefficient blow-up at " + at_path_step(p, j));
        e.db(p, j) = dbj;
        e.s(p, j + 1) = s;
        if (model.hidden) {
          h = rng.uniform(up, uj, Stream::kHidden) < model.hidden->prob_to_high(h, dt) ? 1 : 0;
          (*e.hidden)(p, j + 1) = h;
        }
      }
    }
  });

  if (jumps) {
    e.jump_offsets.assign(static_cast<std::size_t>(n_paths) + 1, 0);
    for (int p = 0; p < n_paths; ++p)
      e.jump_offsets[static_cast<std::size_t>(p) + 1] =
          e.jump_offsets[static_cast<std::size_t>(p)] + events[static_cast<std::size_t>(p)].size();
    e.jump_events.reserve(e.jump_offsets.back());
    for (auto& v : events) e.jump_events.insert(e.jump_events.end(), v.begin(), v.end());
  }
  finalize_ensemble(e);
  return e;
}

// Exact grid marginals of the three-dimensional Bessel process started at x:
// S = |(x,0,0) + W| for a 3-d Brownian motion W. The recorded driving
// increment is the radial projection <R/|R|, dW>, itself N(0, dt) and
// independent of the past, so S - int dt/S - B stays a discretization of the
// Bessel SDE dS = dt/S + dB.
inline PathEnsemble simulate_bes3(double x, const TimeGrid& grid, int n_paths,
                                  std::uint64_t seed) {
  if (!(x > 0.0)) throw Error("Bessel start must be positive");
  if (n_paths < 1) throw Error("n_paths must be >= 1");
  PathEnsemble e;
  e.grid = grid;
  e.n_paths = n_paths;
  e.seed = seed;
  e.s0 = x;
  e.model_name = "bessel";
  const int n = grid.n_steps;
  e.s = PathGrid(n_paths, n + 1);
  e.db = PathGrid(n_paths, n);
  const CounterRng rng(seed);
  const double sqdt = std::sqrt(grid.dt());

  parallel_for_blocks(n_paths, [&](int begin, int end) {
    for (int p = begin; p < end; ++p) {
      const auto up = static_cast<std::uint32_t>(p);
      double r[3] = {x, 0.0, 0.0};
      double norm = x;
      e.s(p, 0) = x;
      for (int j = 0; j < n; ++j) {
        const auto uj = static_cast<std::uint32_t>(j);
        const auto g01 = rng.normals(up, uj, Stream::kBessel, 0);
        const double g2 = rng.normal(up, uj, Stream::kBessel, 1);
        const double dw[3] = {sqdt * g01[0], sqdt * g01[1], sqdt * g2};
        e.db(p, j) = (r[0] * dw[0] + r[1] * dw[1] + r[2] * dw[2]) / norm;
        for (int k = 0; k < 3; ++k) r[k] += dw[k];
        norm = std::sqrt(r[0] * r[0] + r[1] * r[1] + r[2] * r[2]);
        e.s(p, j + 1) = norm;
      }
    }
  });
  finalize_ensemble(e);
  return e;
}

struct StoppingLayer {
  int level = 0;
  std::vector<int> tau_index;  // grid index of T ^ tau_n per path; n_steps when no exit
  std::string rule;

  int stopped(int path, int step) const noexcept {
    const int tau = tau_index[static_cast<std::size_t>(path)];
    return step < tau ? step : tau;
  }
  bool alive(int path, int step) const noexcept {
    return step < tau_index[static_cast<std::size_t>(path)];
  }
};

// First grid index with S outside (s0/n, s0*n). With a model, the optional
// coefficient band also stops the path once |b| or |sigma| reaches n.
inline StoppingLayer first_exit_layer(const PathEnsemble& e, int n,
                                      const MarketModel* coefficient_band = nullptr) {
  if (n < 2) throw Error("first_exit_layer: level must be >= 2");
  StoppingLayer layer;
  layer.level = n;
  layer.rule = "first grid exit of S from (s0/" + std::to_string(n) + ", s0*" + std::to_string(n) + ")";
  if (coefficient_band) layer.rule += " or |b|,|sigma| >= " + std::to_string(n);
  const double lo = e.s0 / n;
  const double hi = e.s0 * n;
  layer.tau_index.assign(static_cast<std::size_t>(e.n_paths), e.grid.n_steps);
  for (int p = 0; p < e.n_paths; ++p) {
    for (int j = 0; j <= e.grid.n_steps; ++j) {
      const double s = e.s(p, j);
      bool exit = !(s > lo && s < hi);
      if (!exit && coefficient_band) {
        const CoefficientState st{s, e.hidden_state(p, j)};
        const double t = e.grid.time(j);
        exit = !(std::abs(coefficient_band->drift(t, st)) < n) ||
               !(std::abs(coefficient_band->diffusion(t, st)) < n);
      }
      if (exit) {
        layer.tau_index[static_cast<std::size_t>(p)] = j;
        break;
      }
    }
  }
  return layer;
}

// Layer that never stops: used where a global (unlayered) object is wanted.
inline StoppingLayer unstopped_layer(const PathEnsemble& e) {
  return {0, std::vector<int>(static_cast<std::size_t>(e.n_paths), e.grid.n_steps), "none"};
}

struct WealthPath {
  Strategy strategy;
  double x0 = 0.0;
  PathGrid x;
  int layer_level = 0;  // 0 when not stopped
  std::uint64_t ensemble_fingerprint = 0;
};

inline ObservedState observe(const PathEnsemble& e, int path, int step, double wealth) {
  return {e.grid.time(step), e.s(path, step), wealth, e.pi(path, step)};
}

// X(t_{j+1}) = X(t_j) + phi(t_j, state_j) (S(t_{j+1}) - S(t_j)), frozen after tau.
inline WealthPath integrate_wealth(const PathEnsemble& e, const Strategy& strategy, double x0,
                                   const StoppingLayer* layer = nullptr) {
  if (strategy.needs_filter && !e.filter)
    throw Error("strategy '" + strategy.label + "' needs filter state");
  WealthPath w;
  w.strategy = strategy;
  w.x0 = x0;
  w.layer_level = layer ? layer->level : 0;
  w.ensemble_fingerprint = e.fingerprint;
  const int n = e.grid.n_steps;
  w.x = PathGrid(e.n_paths, n + 1);
  parallel_for_blocks(e.n_paths, [&](int begin, int end) {
    for (int p = begin; p < end; ++p) {
      double x = x0;
      w.x(p, 0) = x;
      const int stop = layer ? layer->tau_index[static_cast<std::size_t>(p)] : n;
      for (int j = 0; j < n; ++j) {
        if (j < stop) x += strategy(observe(e, p, j, x)) * (e.s(p, j + 1) - e.s(p, j));
        w.x(p, j + 1) = x;
      }
    }
  });
  return w;
}

// Values of a grid process at T ^ tau per path.
inline std::vector<double> terminal_values(const PathGrid& g, const StoppingLayer* layer) {
  std::vector<double> out(static_cast<std::size_t>(g.n_paths()));
  const int last = g.n_cols() - 1;
  for (int p = 0; p < g.n_paths(); ++p)
    out[static_cast<std::size_t>(p)] = g(p, layer ? layer->stopped(p, last) : last);
  return out;
}

}  // namespace pivlab
