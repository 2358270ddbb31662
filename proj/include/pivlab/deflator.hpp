#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "pivlab/audit.hpp"
#include "pivlab/bsde.hpp"
#include "pivlab/condexp.hpp"
#include "pivlab/error.hpp"
#include "pivlab/model.hpp"
#include "pivlab/format.hpp"
#include "pivlab/sim.hpp"
#include "pivlab/stats.hpp"

namespace pivlab {

enum class SegmentMethod {
  kRegression,          // projection of the normalized terminal marginal utility
  kMartingaleIdentity,  // U'(X(t ^ tau)) / U'(x0); exact when U'(X) is itself a martingale
};

struct SegmentOptions {
  double x0 = 1.0;
  SegmentMethod method = SegmentMethod::kRegression;
  RegressionSpec regression;
};

// Density Z_{phi_n}(t_j) of one layer, frozen after T ^ tau_n.
inline PathGrid segment_density(const Strategy& strategy, const StoppingLayer& layer,
                                const PathEnsemble& e, const UtilitySpec& utility,
                                const SegmentOptions& opt = {}) {
  const auto wealth = integrate_wealth(e, strategy, opt.x0, &layer);
  const int n = e.grid.n_steps;
  if (opt.method == SegmentMethod::kMartingaleIdentity) {
    const double u0 = utility.u_prime(opt.x0);
    PathGrid z(e.n_paths, n + 1);
    std::vector<int> bad;
    for (int p = 0; p < e.n_paths; ++p) {
      for (int j = 0; j <= n; ++j) {
        const double x = wealth.x(p, layer.stopped(p, j));
        if (!utility.in_domain(x)) {
          bad.push_back(p);
          break;
        }
        z(p, j) = utility.u_prime(x) / u0;
      }
    }
    if (!bad.empty()) throw DomainViolation(std::move(bad));
    return z;
  }
  // Partial information: project on observed features when a hidden state exists.
  PathGrid z(e.n_paths, n + 1);
  std::vector<int> bad;
  double sum = 0.0;
  for (int p = 0; p < e.n_paths; ++p) {
    const int tau = layer.stopped(p, n);
    const double x = wealth.x(p, tau);
    if (!utility.in_domain(x)) {
      bad.push_back(p);
      continue;
    }
    const double v = utility.u_prime(x);
    sum += v;
    for (int j = tau; j <= n; ++j) z(p, j) = v;
  }
  if (!bad.empty()) throw DomainViolation(std::move(bad));
  const TagInputs in{&layer, &wealth, true};
  const auto tag = e.hidden ? observed_tag(e, in) : full_tag(e, in);
  detail::backward_martingale(z, e, tag, &layer, opt.regression);
  const double norm = sum / e.n_paths;
  for (double& v : z.data()) v /= norm;
  for (int p = 0; p < e.n_paths; ++p) z(p, 0) = 1.0;
  return z;
}

struct DeflatorPath {
  PathGrid z;        // indicator form
  PathGrid product;  // telescoping product form
  PathMatrix<int> segment;  // k on (tau_{k-1}, tau_k], 0 at t = 0
  std::vector<PathGrid> segments;
  std::vector<int> levels;
  std::vector<std::string> strategies;
  std::uint64_t ensemble_fingerprint = 0;

  // Largest |indicator - product| over paths and grid points.
  double form_gap() const {
    double m = 0.0;
    for (std::size_t i = 0; i < z.data().size(); ++i)
      m = std::max(m, std::abs(z.data()[i] - product.data()[i]));
    return m;
  }
};

inline void check_nested(std::span<const StoppingLayer> layers) {
  for (std::size_t k = 1; k < layers.size(); ++k)
    for (std::size_t p = 0; p < layers[k].tau_index.size(); ++p)
      if (layers[k].tau_index[p] < layers[k - 1].tau_index[p]) throw Error("layers not nested");
}

// Pastes per-layer densities: Z(0) = 1, Z = Z_k on (tau_{k-1}, tau_k], frozen
// after tau_N. Also builds the product form prod_k Z_k(t ^ tau_k) / Z_k(t ^ tau_{k-1}).
inline DeflatorPath paste_segments(std::vector<PathGrid> segments, std::span<const StoppingLayer> layers,
                                   const PathEnsemble& e) {
  if (segments.size() != layers.size() || segments.empty()) throw Error("missing layer strategy");
  check_nested(layers);
  const int n = e.grid.n_steps;
  const auto nl = static_cast<int>(layers.size());
  DeflatorPath d;
  d.z = PathGrid(e.n_paths, n + 1);
  d.product = PathGrid(e.n_paths, n + 1);
  d.segment = PathMatrix<int>(e.n_paths, n + 1);
  for (const auto& l : layers) d.levels.push_back(l.level);
  d.ensemble_fingerprint = e.fingerprint;
  for (int p = 0; p < e.n_paths; ++p) {
    for (int j = 0; j <= n; ++j) {
      if (j == 0) {
        d.z(p, j) = 1.0;
        d.product(p, j) = 1.0;
        d.segment(p, j) = 0;
        continue;
      }
      int k = 0;
      while (k < nl - 1 && j > layers[static_cast<std::size_t>(k)].tau_index[static_cast<std::size_t>(p)]) ++k;
      const auto& lk = layers[static_cast<std::size_t>(k)];
      d.z(p, j) = segments[static_cast<std::size_t>(k)](p, lk.stopped(p, j));
      d.segment(p, j) = k + 1;
      double prod = 1.0;
      for (int i = 0; i < nl; ++i) {
        const auto& zi = segments[static_cast<std::size_t>(i)];
        const int hi = layers[static_cast<std::size_t>(i)].stopped(p, j);
        const int lo = i == 0 ? 0 : layers[static_cast<std::size_t>(i - 1)].stopped(p, j);
        prod *= zi(p, hi) / zi(p, lo);
      }
      d.product(p, j) = prod;
    }
  }
  d.segments = std::move(segments);
  return d;
}

inline DeflatorPath paste(std::span<const Strategy> strategies, const PathEnsemble& e,
                          const UtilitySpec& utility, std::span<const StoppingLayer> layers,
                          const SegmentOptions& opt = {}) {
  if (strategies.size() != layers.size()) throw Error("missing layer strategy");
  std::vector<PathGrid> segs;
  for (std::size_t k = 0; k < layers.size(); ++k)
    segs.push_back(segment_density(strategies[k], layers[k], e, utility, opt));
  auto d = paste_segments(std::move(segs), layers, e);
  for (const auto& s : strategies) d.strategies.push_back(s.label);
  return d;
}

struct ConsistencyPoint {
  int level = 0;       // layer n (compared against the previous layer)
  double mean = 0.0;   // mean of w_n - w_{n-1}; zero up to rounding by normalization
  double se = 0.0;
  double mean_square = 0.0;
  double zscore = 0.0;  // joint test of E[w_n - w_{n-1} | F_{T ^ tau_{n-1}}] = 0
};

struct ConsistencyReport {
  std::vector<ConsistencyPoint> points;
  double family_threshold = kFamilyThreshold;
  bool verdict = true;
};

// w_k = U'(X_k(T ^ tau_k)) / mean. The consistency condition asks that
// E[w_k | F_{T ^ tau_{k-1}}] = w_{k-1}; the difference is regressed on the
// observed state (with time) at the per-path index T ^ tau_{k-1}.
inline ConsistencyReport consistency_check(std::span<const Strategy> strategies,
                                           const PathEnsemble& e, const UtilitySpec& utility,
                                           std::span<const StoppingLayer> layers,
                                           const RegressionSpec& spec = {}, double x0 = 1.0,
                                           double threshold = kFamilyThreshold) {
  if (layers.size() < 2) throw Error("consistency: need at least two layers");
  if (strategies.size() != layers.size()) throw Error("missing layer strategy");
  check_nested(layers);
  std::vector<std::vector<double>> mu;  // U'(X_k(T ^ tau_k))
  std::vector<double> norm;
  for (std::size_t k = 0; k < layers.size(); ++k) {
    const auto wealth = integrate_wealth(e, strategies[k], x0, &layers[k]);
    const auto xt = terminal_values(wealth.x, &layers[k]);
    std::vector<double> v(xt.size());
    std::vector<int> bad;
    for (std::size_t p = 0; p < xt.size(); ++p) {
      if (!utility.in_domain(xt[p])) {
        bad.push_back(static_cast<int>(p));
        continue;
      }
      v[p] = utility.u_prime(xt[p]);
    }
    if (!bad.empty()) throw DomainViolation(std::move(bad));
    norm.push_back(mean_se(v).mean);
    mu.push_back(std::move(v));
  }
  ConsistencyReport rep;
  rep.family_threshold = threshold;
  const std::size_t np = static_cast<std::size_t>(e.n_paths);
  for (std::size_t k = 1; k < layers.size(); ++k) {
    const auto& prev = layers[k - 1];
    const auto wealth_prev = integrate_wealth(e, strategies[k - 1], x0, &prev);
    const auto tag = with_time(observed_tag(e, {&prev, &wealth_prev, true}), e.grid);
    const double mk = norm[k], mp = norm[k - 1];
    std::vector<double> d(np), der_k(np), infl_k(np), der_p(np), infl_p(np);
    double ms = 0.0;
    for (std::size_t p = 0; p < np; ++p) {
      d[p] = mu[k][p] / mk - mu[k - 1][p] / mp;
      ms += d[p] * d[p];
      der_k[p] = -mu[k][p] / (mk * mk);
      infl_k[p] = mu[k][p] - mk;
      der_p[p] = mu[k - 1][p] / (mp * mp);
      infl_p[p] = mu[k - 1][p] - mp;
    }
    const auto est = mean_se(d);
    // The normalizing means are estimated; their influence enters the covariance.
    const Nuisance nuisance[2] = {{der_k, infl_k}, {der_p, infl_p}};
    const Projector proj(tag, {}, prev.tau_index, e.n_paths, e.grid.n_steps, spec);
    const auto res = proj.fit(d, true, nuisance);
    rep.points.push_back({layers[k].level, est.mean, est.se, ms / static_cast<double>(np),
                          res.wald_z});
  }
  for (const auto& pt : rep.points)
    if (!(std::abs(pt.zscore) < threshold)) rep.verdict = false;
  return rep;
}

struct PilmdLayer {
  int level = 0;
  MartingaleReport z;   // Z(. ^ tau_n)
  MartingaleReport zs;  // Z(. ^ tau_n) S(. ^ tau_n), tested as S^tau under Z(T ^ tau_n) dP
};

struct PilmdReport {
  std::vector<PilmdLayer> layers;
  bool verdict = true;
};

inline PilmdReport pilmd_audit(const DeflatorPath& d, const PathEnsemble& e,
                               std::span<const StoppingLayer> layers,
                               const RegressionSpec& spec = {},
                               std::span<const int> checkpoints = {},
                               double threshold = kFamilyThreshold) {
  if (d.ensemble_fingerprint != e.fingerprint || d.z.n_paths() != e.n_paths)
    throw Error("ensemble mismatch");
  const auto cps = checkpoints.empty() ? default_checkpoints(e.grid)
                                       : std::vector<int>(checkpoints.begin(), checkpoints.end());
  PilmdReport rep;
  const int n = e.grid.n_steps;
  for (const auto& layer : layers) {
    PathGrid zt(e.n_paths, n + 1);
    PathGrid st(e.n_paths, n + 1);
    std::vector<double> w(static_cast<std::size_t>(e.n_paths));
    for (int p = 0; p < e.n_paths; ++p) {
      for (int j = 0; j <= n; ++j) {
        const int k = layer.stopped(p, j);
        zt(p, j) = d.z(p, k);
        st(p, j) = e.s(p, k);
      }
      w[static_cast<std::size_t>(p)] = zt(p, n);
    }
    const auto tag = observed_tag(e, {&layer, nullptr, true});
    PilmdLayer out;
    out.level = layer.level;
    out.z = martingale_test(zt, e, tag, cps, spec, threshold);
    out.zs = deflated_martingale_test(w, st, e, tag, cps, spec, threshold);
    if (!out.z.verdict || !out.zs.verdict) rep.verdict = false;
    rep.layers.push_back(std::move(out));
  }
  return rep;
}

inline void write_deflator_csv(const std::string& path, const DeflatorPath& d, const PathEnsemble& e) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out << "path,step,t,Z,segment_index\n";
  for (int p = 0; p < d.z.n_paths(); ++p)
    for (int j = 0; j < d.z.n_cols(); ++j)
      out << p << ',' << j << ',' << format_double(e.grid.time(j)) << ','
          << format_double(d.z(p, j)) << ',' << d.segment(p, j) << '\n';
}

}  // namespace pivlab
