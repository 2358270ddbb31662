#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "pivlab/condexp.hpp"
#include "pivlab/error.hpp"
#include "pivlab/model.hpp"
#include "pivlab/sim.hpp"
#include "pivlab/stats.hpp"

namespace pivlab {

struct CheckpointStat {
  int step = 0;
  double t = 0.0;
  double mean = 0.0;  // sample mean of the process at the checkpoint
  double se = 0.0;    // standard error of the mean change since the first checkpoint
  double z = 0.0;
};

struct IncrementRegression {
  int step = 0;
  double t = 0.0;
  double wald_z = 0.0;
  int dof = 0;
  std::vector<double> coef_z;
};

struct MartingaleReport {
  std::vector<CheckpointStat> checkpoints;
  std::vector<IncrementRegression> increment_regressions;
  double family_threshold = kFamilyThreshold;
  bool verdict = true;
  bool zero_variance = false;

  double max_abs_z() const {
    double m = 0.0;
    for (const auto& c : checkpoints) m = std::max(m, std::abs(c.z));
    for (const auto& r : increment_regressions) m = std::max(m, std::abs(r.wald_z));
    return m;
  }
};

// `count` equally spaced grid indices after 0, plus 0 itself (so count + 1 points).
inline std::vector<int> default_checkpoints(const TimeGrid& grid, int count = 8) {
  std::vector<int> out{0};
  for (int i = 1; i <= count; ++i) {
    const int j = static_cast<int>(std::lround(static_cast<double>(i) * grid.n_steps / count));
    if (j > out.back()) out.push_back(j);
  }
  return out;
}

namespace detail {

inline std::vector<int> checked_checkpoints(std::span<const int> checkpoints, const TimeGrid& grid) {
  std::vector<int> cps(checkpoints.begin(), checkpoints.end());
  std::sort(cps.begin(), cps.end());
  cps.erase(std::unique(cps.begin(), cps.end()), cps.end());
  if (cps.size() < 2) throw Error("martingale test: need at least 2 checkpoints");
  if (cps.front() < 0 || cps.back() > grid.n_steps)
    throw Error("martingale test: checkpoint out of range");
  return cps;
}

// Shared engine: the mean of d(c) = w * (A(c) - A(c0)) must vanish at every
// checkpoint, and the closure d(c_last) - d(c) must have zero conditional
// mean given the features at c.
inline MartingaleReport weighted_martingale_test(std::span<const double> weight, const PathGrid& a,
                                                 const PathEnsemble& e, const FiltrationTag& tag,
                                                 std::span<const int> checkpoints,
                                                 const RegressionSpec& spec, double threshold) {
  if (a.n_paths() != e.n_paths || a.n_cols() != e.grid.n_points())
    throw Error("ensemble mismatch");
  const auto cps = checked_checkpoints(checkpoints, e.grid);
  MartingaleReport rep;
  rep.family_threshold = threshold;
  const int n = e.n_paths;
  auto w = [&](int p) { return weight.empty() ? 1.0 : weight[static_cast<std::size_t>(p)]; };

  bool constant = true;
  const double first = a(0, cps.front());
  for (int c : cps)
    for (int p = 0; p < n && constant; ++p)
      if (a(p, c) != first) constant = false;
  if (constant) {
    rep.zero_variance = true;
    for (int c : cps) rep.checkpoints.push_back({c, e.grid.time(c), first, 0.0, 0.0});
    return rep;
  }

  const int c0 = cps.front();
  const int last = cps.back();
  std::vector<double> buf(static_cast<std::size_t>(n));
  for (int c : cps) {
    double level = 0.0;
    for (int p = 0; p < n; ++p) {
      buf[static_cast<std::size_t>(p)] = w(p) * (a(p, c) - a(p, c0));
      level += a(p, c);
    }
    const auto est = mean_se(buf);
    const double z = c == c0 ? 0.0 : zscore(est.mean, est.se);
    rep.checkpoints.push_back({c, e.grid.time(c), level / n, est.se, z});
  }
  for (int c : cps) {
    if (c == last) break;
    for (int p = 0; p < n; ++p) buf[static_cast<std::size_t>(p)] = w(p) * (a(p, last) - a(p, c));
    const auto res = project(buf, e, c, tag, spec);
    rep.increment_regressions.push_back({c, e.grid.time(c), res.wald_z, res.wald_dof, res.coef_z});
  }
  rep.verdict = rep.max_abs_z() < threshold;
  return rep;
}

}  // namespace detail

// Tests (a) E[M(t_c)] = E[M(t_0)] at each checkpoint and (b) that
// M(T_last) - M(t_c) has zero conditional mean given the tag features at t_c.
inline MartingaleReport martingale_test(const PathGrid& values, const PathEnsemble& e,
                                        const FiltrationTag& tag, std::span<const int> checkpoints,
                                        const RegressionSpec& spec = {},
                                        double threshold = kFamilyThreshold) {
  return detail::weighted_martingale_test({}, values, e, tag, checkpoints, spec, threshold);
}

// Martingale test under the measure dQ = weight dP: weight * (A(t) - A(s))
// must have zero F_s-conditional P-mean. Uses only the terminal weights, so
// no regression error from an estimated density enters the test.
inline MartingaleReport deflated_martingale_test(std::span<const double> weight, const PathGrid& a,
                                                 const PathEnsemble& e, const FiltrationTag& tag,
                                                 std::span<const int> checkpoints,
                                                 const RegressionSpec& spec = {},
                                                 double threshold = kFamilyThreshold) {
  if (static_cast<int>(weight.size()) != e.n_paths) throw Error("ensemble mismatch");
  return detail::weighted_martingale_test(weight, a, e, tag, checkpoints, spec, threshold);
}

struct CandidateResult {
  std::string label;
  MeanEstimate utility;
  MeanEstimate gap;  // paired difference against the top candidate
  bool domain_violation = false;
  int index = 0;     // position in the input list
};

struct UtilityRanking {
  std::vector<CandidateResult> ranked;  // best first; candidates with violations last
};

// Paired comparison of E[U(X(T ^ tau))] on common random numbers.
inline UtilityRanking compare_expected_utility(std::span<const WealthPath> candidates,
                                               const UtilitySpec& utility,
                                               const StoppingLayer* layer = nullptr) {
  if (candidates.empty()) return {};
  const std::uint64_t fp = candidates.front().ensemble_fingerprint;
  std::vector<std::vector<double>> u(candidates.size());
  UtilityRanking out;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (candidates[i].ensemble_fingerprint != fp) throw Error("ensemble mismatch");
    const auto xt = terminal_values(candidates[i].x, layer);
    CandidateResult r;
    r.label = candidates[i].strategy.label;
    r.index = static_cast<int>(i);
    u[i].resize(xt.size());
    for (std::size_t p = 0; p < xt.size(); ++p) {
      if (!utility.in_domain(xt[p])) {
        r.domain_violation = true;
        break;
      }
      u[i][p] = utility.u(xt[p]);
    }
    if (!r.domain_violation) r.utility = mean_se(u[i]);
    else r.utility.mean = -std::numeric_limits<double>::infinity();
    out.ranked.push_back(r);
  }
  std::stable_sort(out.ranked.begin(), out.ranked.end(), [](const auto& a, const auto& b) {
    if (a.domain_violation != b.domain_violation) return !a.domain_violation;
    return a.utility.mean > b.utility.mean;
  });
  if (out.ranked.front().domain_violation) return out;
  const auto& top = u[static_cast<std::size_t>(out.ranked.front().index)];
  for (auto& r : out.ranked) {
    if (r.domain_violation) continue;
    const auto& mine = u[static_cast<std::size_t>(r.index)];
    std::vector<double> diff(mine.size());
    for (std::size_t p = 0; p < mine.size(); ++p) diff[p] = mine[p] - top[p];
    r.gap = mean_se(diff);
  }
  return out;
}

}  // namespace pivlab
