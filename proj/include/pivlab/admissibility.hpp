#pragma once

#include <algorithm>
#include <vector>

#include "pivlab/error.hpp"
#include "pivlab/model.hpp"
#include "pivlab/sim.hpp"
#include "pivlab/stats.hpp"

namespace pivlab {

struct AdmissibilityReport {
  NestedEstimate sup_wealth_sq;        // E[sup_{t <= T^tau} X(t)^2]
  NestedEstimate marginal_utility_sq;  // E[U'(X(T^tau))^2]
  bool flagged = false;                // either estimate diverges across nested sub-samples
  bool pass() const noexcept { return !flagged; }
};

inline AdmissibilityReport validate_admissibility(const WealthPath* wealth, const PathEnsemble& e,
                                                  const UtilitySpec& utility,
                                                  const StoppingLayer* layer = nullptr) {
  if (wealth == nullptr || wealth->x.empty()) throw Error("wealth not computed");
  if (wealth->ensemble_fingerprint != e.fingerprint) throw Error("ensemble mismatch");
  const int n = e.grid.n_steps;
  std::vector<double> sup_sq(static_cast<std::size_t>(e.n_paths));
  std::vector<double> mu_sq(static_cast<std::size_t>(e.n_paths));
  std::vector<int> bad;
  for (int p = 0; p < e.n_paths; ++p) {
    const int stop = layer ? layer->stopped(p, n) : n;
    double m = 0.0;
    for (int j = 0; j <= stop; ++j) m = std::max(m, wealth->x(p, j) * wealth->x(p, j));
    sup_sq[static_cast<std::size_t>(p)] = m;
    const double xt = wealth->x(p, stop);
    if (!utility.in_domain(xt)) {
      bad.push_back(p);
      continue;
    }
    const double up = utility.u_prime(xt);
    mu_sq[static_cast<std::size_t>(p)] = up * up;
  }
  if (!bad.empty()) throw DomainViolation(std::move(bad));
  AdmissibilityReport r;
  r.sup_wealth_sq = nested_estimate(sup_sq);
  r.marginal_utility_sq = nested_estimate(mu_sq);
  r.flagged = r.sup_wealth_sq.diverging || r.marginal_utility_sq.diverging;
  return r;
}

}  // namespace pivlab
