#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pivlab/error.hpp"
#include "pivlab/sim.hpp"
#include "pivlab/stats.hpp"

namespace pivlab {

// One regressor: a function of (path, grid index). log_inverse adds 1/f and
// log f to the basis at steps where f is positive on every path.
struct Feature {
  std::string name;
  std::function<double(int path, int step)> eval;
  bool log_inverse = false;
  int max_degree = 3;
};

enum class Filtration { kFull, kObserved };

// Features spanning the information at a grid index. Observed (F) features
// are always a prefix of the full (G) features built from the same inputs.
// Features capture references: the ensemble, layer and wealth must outlive
// the tag.
struct FiltrationTag {
  Filtration kind = Filtration::kObserved;
  std::vector<Feature> features;
};

struct TagInputs {
  const StoppingLayer* layer = nullptr;  // features frozen at T ^ tau
  const WealthPath* wealth = nullptr;    // adds X as a feature
  bool use_filter = true;                // adds pi when the ensemble carries a filter
};

inline FiltrationTag observed_tag(const PathEnsemble& e, TagInputs in = {}) {
  FiltrationTag tag;
  tag.kind = Filtration::kObserved;
  const StoppingLayer* layer = in.layer;
  auto at = [layer](int p, int j) { return layer ? layer->stopped(p, j) : j; };
  tag.features.push_back({"S", [&e, at](int p, int j) { return e.s(p, at(p, j)); }, true, 3});
  if (in.wealth) {
    const WealthPath* w = in.wealth;
    tag.features.push_back({"X", [w, at](int p, int j) { return w->x(p, at(p, j)); }, true, 3});
  }
  if (in.use_filter && e.filter)
    tag.features.push_back({"pi", [&e, at](int p, int j) { return e.pi(p, at(p, j)); }, false, 3});
  return tag;
}

// G-features: the observed ones plus the hidden regime when there is one.
inline FiltrationTag full_tag(const PathEnsemble& e, TagInputs in = {}) {
  FiltrationTag tag = observed_tag(e, in);
  tag.kind = Filtration::kFull;
  if (e.hidden) {
    const StoppingLayer* layer = in.layer;
    tag.features.push_back({"hidden",
                            [&e, layer](int p, int j) {
                              return static_cast<double>(
                                  e.hidden_state(p, layer ? layer->stopped(p, j) : j));
                            },
                            false, 1});
  }
  return tag;
}

// Adds grid time as a feature (for regressions at path-dependent indices).
inline FiltrationTag with_time(FiltrationTag tag, const TimeGrid& grid) {
  tag.features.push_back({"t", [grid](int, int j) { return grid.time(j); }, false, 3});
  return tag;
}

struct RegressionSpec {
  int degree = 3;             // powers 1..degree of each feature
  bool interactions = false;  // cross products up to total degree `degree`
  bool augment = true;        // 1/f and log f terms for log_inverse features
  double ridge = 1e-8;
};

struct ProjectionResult {
  std::vector<double> fitted;
  Eigen::VectorXd coef;  // on standardized columns, intercept first
  std::vector<std::string> columns;
  std::vector<double> coef_se;
  std::vector<double> coef_z;
  double residual_variance = 0.0;
  double r_squared = 0.0;
  double wald_stat = 0.0;
  int wald_dof = 0;
  double wald_z = 0.0;  // joint test of E[target | features] = 0, as a |z|
  double condition_number = 1.0;
};

// A sample mean m the target depends on: derivative[i] = d y_i / d m and
// influence[i] = u_i - mean(u). Inference then accounts for m being estimated.
struct Nuisance {
  std::span<const double> derivative;
  std::span<const double> influence;
};

// Least-squares projector for one design. Factor once, fit many targets.
// Fitted values use the full basis. The joint test of E[target | features] = 0
// regresses the target on polynomials of the feature ranks instead: the null
// implies a zero projection on any bounded test function, and bounded columns
// keep the sandwich covariance reliable when a few rows have extreme features.
class Projector {
 public:
  // Row i of the design is path rows[i] (all paths 0..n_paths-1 when rows is
  // empty) read at grid index steps[i]; a single step applies to every row.
  // Targets and weights are indexed by row. label_step names the step in
  // error messages.
  Projector(const FiltrationTag& tag, std::span<const int> rows, std::span<const int> steps,
            int n_paths, int label_step, const RegressionSpec& spec,
            std::span<const double> weights = {})
      : n_(rows.empty() ? n_paths : static_cast<int>(rows.size())), label_step_(label_step), spec_(spec) {
    build(tag, rows, steps, spec);
    if (!weights.empty()) {
      if (static_cast<int>(weights.size()) != n_) throw Error("regression: weight count mismatch");
      double sum = 0.0;
      for (double w : weights) sum += w;
      if (!(sum > 0.0)) throw Error("regression: weights must have positive sum");
      w_ = Eigen::VectorXd(n_);
      for (int i = 0; i < n_; ++i) w_(i) = weights[static_cast<std::size_t>(i)] * n_ / sum;
    }
    factor(spec);
  }

  // Number of candidate basis functions before constant columns are dropped.
  static int basis_size(const FiltrationTag& tag, const RegressionSpec& spec) {
    std::function<int(std::size_t, int)> count = [&](std::size_t k, int left) -> int {
      if (k == tag.features.size()) return 1;
      int total = 0;
      for (int e = 0; e <= std::min(left, tag.features[k].max_degree); ++e) total += count(k + 1, left - e);
      return total;
    };
    int n = 1;
    if (spec.interactions) n = count(0, spec.degree);
    else
      for (const auto& f : tag.features) n += std::min(spec.degree, f.max_degree);
    if (spec.augment)
      for (const auto& f : tag.features)
        if (f.log_inverse) n += 2;
    return n;
  }

  int n_columns() const noexcept { return static_cast<int>(x_.cols()); }
  int n_candidates() const noexcept { return n_candidates_; }
  const std::vector<std::string>& columns() const noexcept { return names_; }

  ProjectionResult fit(std::span<const double> y_in, bool inference = true,
                       std::span<const Nuisance> nuisance = {}) const {
    if (static_cast<int>(y_in.size()) != n_) throw Error("regression: target count mismatch");
    Eigen::Map<const Eigen::VectorXd> y(y_in.data(), n_);
    if (!y.allFinite()) throw Error("degenerate design at step " + std::to_string(label_step_));
    const Eigen::VectorXd rhs = weighted_t(y);
    Eigen::VectorXd beta = solver_.solve(rhs);
    // Iterative refinement towards the unregularized solution: the ridge only
    // survives along directions the data cannot resolve.
    for (int it = 0; it < kRefinements; ++it) beta += solver_.solve(rhs - normal_ * beta);
    ProjectionResult out;
    out.coef = beta;
    out.columns = names_;
    out.condition_number = condition_;
    const Eigen::VectorXd fitted = x_ * beta;
    out.fitted.assign(fitted.data(), fitted.data() + n_);
    if (!inference) return out;

    const Eigen::VectorXd resid = y - fitted;
    const double mean_y = y.mean();
    const double sst = (y.array() - mean_y).square().sum();
    const double sse = resid.squaredNorm();
    out.residual_variance = n_ > n_columns() ? sse / (n_ - n_columns()) : 0.0;
    out.r_squared = sst > 0.0 ? 1.0 - sse / sst : 1.0;

    // HC3: residuals inflated by 1 / (1 - leverage) so that isolated
    // high-leverage paths cannot hide their own variance.
    Eigen::VectorXd score = resid;
    if (w_.size()) score.array() *= w_.array();
    const Eigen::VectorXd lev = ((x_ * bread_).array() * x_.array()).rowwise().sum();
    for (int i = 0; i < n_; ++i) {
      const double h = std::clamp(lev(i) * (w_.size() ? w_(i) : 1.0), 0.0, 1.0 - 1e-9);
      score(i) /= 1.0 - h;
    }
    Eigen::MatrixXd scores = x_.array().colwise() * score.array();
    for (const auto& nu : nuisance) {
      if (static_cast<int>(nu.derivative.size()) != n_ || static_cast<int>(nu.influence.size()) != n_)
        throw Error("regression: nuisance size mismatch");
      Eigen::Map<const Eigen::VectorXd> der(nu.derivative.data(), n_);
      Eigen::Map<const Eigen::VectorXd> infl(nu.influence.data(), n_);
      const Eigen::VectorXd g = weighted_t(der) / n_;
      scores += infl * g.transpose();
    }
    const Eigen::MatrixXd meat = scores.transpose() * scores;
    const Eigen::MatrixXd cov = bread_ * meat * bread_.transpose();
    out.coef_se.resize(static_cast<std::size_t>(n_columns()));
    out.coef_z.resize(static_cast<std::size_t>(n_columns()));
    for (int k = 0; k < n_columns(); ++k) {
      out.coef_se[static_cast<std::size_t>(k)] = std::sqrt(std::max(0.0, cov(k, k)));
      out.coef_z[static_cast<std::size_t>(k)] =
          zscore(beta(k), out.coef_se[static_cast<std::size_t>(k)], 1e-300);
    }

    const double rms_y = std::sqrt(y.squaredNorm() / n_);
    const double rms_fit = std::sqrt(fitted.squaredNorm() / n_);
    if (rms_y <= kZeroTol || rms_fit <= kZeroTol) return out;  // numerically zero target
    if (!rank_test_) {
      const auto t = rank_design().fit(y_in, true, nuisance);
      out.wald_stat = t.wald_stat;
      out.wald_dof = t.wald_dof;
      out.wald_z = t.wald_z;
      return out;
    }
    // Joint test restricted to the directions the design resolves.
    const Eigen::MatrixXd cov_r = resolved_.transpose() * cov * resolved_;
    const Eigen::VectorXd beta_r = resolved_.transpose() * beta;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov_r);
    const double top = eig.eigenvalues().maxCoeff();
    if (!(top > 0.0) || !std::isfinite(top)) {
      out.wald_stat = std::numeric_limits<double>::infinity();
      out.wald_dof = static_cast<int>(beta_r.size());
      out.wald_z = std::numeric_limits<double>::infinity();
      return out;
    }
    const Eigen::VectorXd proj = eig.eigenvectors().transpose() * beta_r;
    double stat = 0.0;
    int dof = 0;
    for (int k = 0; k < static_cast<int>(beta_r.size()); ++k) {
      const double lam = eig.eigenvalues()(k);
      if (lam > top * 1e-12) {
        stat += proj(k) * proj(k) / lam;
        ++dof;
      }
    }
    out.wald_stat = stat;
    out.wald_dof = dof;
    out.wald_z = chi_square_to_z(stat, dof);
    return out;
  }

  static constexpr double kZeroTol = 1e-10;
  static constexpr int kRefinements = 3;
  // Gram eigenvalues below this fraction of the largest count as unresolved.
  static constexpr double kResolvable = 1e-12;

 private:
  struct FeatureMeta {
    std::string name;
    bool log_inverse = false;
    int max_degree = 3;
  };

  // Test design: features replaced by centred mid-ranks in (-1/2, 1/2).
  Projector(const Eigen::MatrixXd& ranks, std::vector<FeatureMeta> meta, int label_step,
            const RegressionSpec& spec, const Eigen::VectorXd& w)
      : n_(static_cast<int>(ranks.rows())), label_step_(label_step), spec_(spec), rank_test_(true) {
    columns(ranks, meta, spec);
    w_ = w;
    factor(spec);
  }

  const Projector& rank_design() const {
    if (!test_) {
      Eigen::MatrixXd u(n_, f_.cols());
      std::vector<int> order(static_cast<std::size_t>(n_));
      for (Eigen::Index k = 0; k < f_.cols(); ++k) {
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](int a, int b) { return f_(a, k) < f_(b, k); });
        for (int i = 0; i < n_;) {
          int j = i;
          while (j + 1 < n_ && f_(order[static_cast<std::size_t>(j + 1)], k) == f_(order[static_cast<std::size_t>(i)], k)) ++j;
          const double mid = 0.5 * (i + j);
          for (int r = i; r <= j; ++r) u(order[static_cast<std::size_t>(r)], k) = (mid + 0.5) / n_ - 0.5;
          i = j + 1;
        }
      }
      std::vector<FeatureMeta> meta = meta_;
      for (auto& m : meta) m.name = "rank(" + m.name + ")";
      RegressionSpec rs = spec_;
      rs.augment = false;
      test_.reset(new Projector(u, std::move(meta), label_step_, rs, w_));
    }
    return *test_;
  }

  Eigen::VectorXd weighted_t(const Eigen::VectorXd& y) const {
    if (w_.size()) return x_.transpose() * (w_.array() * y.array()).matrix();
    return x_.transpose() * y;
  }

  void build(const FiltrationTag& tag, std::span<const int> rows, std::span<const int> steps,
             const RegressionSpec& spec) {
    if (steps.size() != 1 && static_cast<int>(steps.size()) != n_)
      throw Error("regression: step count mismatch");
    auto step_of = [&](int i) {
      return steps.size() == 1 ? steps[0] : steps[static_cast<std::size_t>(i)];
    };
    auto path_of = [&](int i) { return rows.empty() ? i : rows[static_cast<std::size_t>(i)]; };
    const int m = static_cast<int>(tag.features.size());
    Eigen::MatrixXd f(n_, m);
    for (int k = 0; k < m; ++k)
      for (int i = 0; i < n_; ++i)
        f(i, k) = tag.features[static_cast<std::size_t>(k)].eval(path_of(i), step_of(i));
    if (!f.allFinite()) throw Error("degenerate design at step " + std::to_string(label_step_));
    for (const auto& feat : tag.features) meta_.push_back({feat.name, feat.log_inverse, feat.max_degree});
    columns(f, meta_, spec);
    f_ = std::move(f);
  }

  void columns(const Eigen::MatrixXd& f, const std::vector<FeatureMeta>& meta, const RegressionSpec& spec) {
    const int m = static_cast<int>(meta.size());
    // Monomials of total degree <= d with per-feature caps; without
    // interactions only single-feature powers.
    std::vector<std::vector<int>> powers;
    std::vector<int> cur(static_cast<std::size_t>(m), 0);
    std::function<void(int, int)> gen = [&](int k, int left) {
      if (k == m) {
        powers.push_back(cur);
        return;
      }
      const int cap = std::min(left, meta[static_cast<std::size_t>(k)].max_degree);
      for (int e = 0; e <= cap; ++e) {
        cur[static_cast<std::size_t>(k)] = e;
        gen(k + 1, left - e);
      }
      cur[static_cast<std::size_t>(k)] = 0;
    };
    if (spec.interactions) {
      gen(0, spec.degree);
    } else {
      powers.push_back(cur);
      for (int k = 0; k < m; ++k)
        for (int e = 1; e <= std::min(spec.degree, meta[static_cast<std::size_t>(k)].max_degree); ++e) {
          cur[static_cast<std::size_t>(k)] = e;
          powers.push_back(cur);
          cur[static_cast<std::size_t>(k)] = 0;
        }
    }
    std::sort(powers.begin(), powers.end(), [](const auto& a, const auto& b) {
      int da = 0, db = 0;
      for (int v : a) da += v;
      for (int v : b) db += v;
      return da != db ? da < db : a > b;
    });

    std::vector<Eigen::VectorXd> cols;
    std::vector<std::string> names;
    for (const auto& pw : powers) {
      Eigen::VectorXd c = Eigen::VectorXd::Ones(n_);
      std::string name;
      for (int k = 0; k < m; ++k) {
        const int e = pw[static_cast<std::size_t>(k)];
        if (e == 0) continue;
        c.array() *= f.col(k).array().pow(e);
        if (!name.empty()) name += "*";
        name += meta[static_cast<std::size_t>(k)].name;
        if (e > 1) name += "^" + std::to_string(e);
      }
      cols.push_back(std::move(c));
      names.push_back(name.empty() ? "1" : name);
    }
    n_candidates_ = static_cast<int>(cols.size());
    if (spec.augment) {
      for (int k = 0; k < m; ++k) {
        const auto& feat = meta[static_cast<std::size_t>(k)];
        if (!feat.log_inverse) continue;
        n_candidates_ += 2;
        if (!(f.col(k).minCoeff() > 0.0)) continue;
        cols.push_back(f.col(k).array().inverse().matrix());
        names.push_back("1/" + feat.name);
        cols.push_back(f.col(k).array().log().matrix());
        names.push_back("log " + feat.name);
      }
    }
    if (n_ < 10 * n_candidates_) throw Error("underdetermined regression");

    // Standardize; drop columns that are constant on this sample.
    std::vector<int> keep;
    for (std::size_t c = 0; c < cols.size(); ++c) {
      if (c == 0) {
        keep.push_back(0);
        continue;
      }
      const double mean = cols[c].mean();
      const double sd = std::sqrt((cols[c].array() - mean).square().mean());
      if (!std::isfinite(sd)) throw Error("degenerate design at step " + std::to_string(label_step_));
      if (sd <= 1e-12 * std::max(1.0, std::abs(mean))) continue;
      cols[c] = ((cols[c].array() - mean) / sd).matrix();
      keep.push_back(static_cast<int>(c));
    }
    x_.resize(n_, static_cast<Eigen::Index>(keep.size()));
    for (std::size_t i = 0; i < keep.size(); ++i) {
      x_.col(static_cast<Eigen::Index>(i)) = cols[static_cast<std::size_t>(keep[i])];
      names_.push_back(names[static_cast<std::size_t>(keep[i])]);
    }
  }

  void factor(const RegressionSpec& spec) {
    if (w_.size()) normal_ = x_.transpose() * w_.asDiagonal() * x_;
    else normal_ = x_.transpose() * x_;
    Eigen::MatrixXd reg = normal_;
    for (int k = 1; k < n_columns(); ++k) reg(k, k) += spec.ridge * n_;
    solver_.compute(reg);
    const auto d = solver_.vectorD();
    if (solver_.info() != Eigen::Success || !reg.allFinite() || !(d.minCoeff() > 0.0))
      throw Error("degenerate design at step " + std::to_string(label_step_));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(reg, Eigen::EigenvaluesOnly);
    condition_ = eig.eigenvalues().maxCoeff() / eig.eigenvalues().minCoeff();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> gram(normal_);
    const double gtop = gram.eigenvalues().maxCoeff();
    std::vector<int> dirs;
    for (int k = 0; k < n_columns(); ++k)
      if (gram.eigenvalues()(k) > kResolvable * gtop) dirs.push_back(k);
    resolved_.resize(n_columns(), static_cast<Eigen::Index>(dirs.size()));
    for (std::size_t i = 0; i < dirs.size(); ++i)
      resolved_.col(static_cast<Eigen::Index>(i)) = gram.eigenvectors().col(dirs[i]);
    // beta = bread X'W y exactly, refinements included, so the sandwich
    // covariance matches the estimator actually used.
    const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(n_columns(), n_columns());
    const Eigen::MatrixXd inv = solver_.solve(eye);
    const Eigen::MatrixXd step = eye - inv * normal_;
    Eigen::MatrixXd sum = eye, power = eye;
    for (int it = 0; it < kRefinements; ++it) {
      power = power * step;
      sum += power;
    }
    bread_ = sum * inv;
  }

  int n_ = 0;
  int label_step_ = 0;
  RegressionSpec spec_;
  bool rank_test_ = false;
  int n_candidates_ = 0;
  std::vector<FeatureMeta> meta_;
  Eigen::MatrixXd f_;  // raw feature values, kept for the test design
  mutable std::shared_ptr<const Projector> test_;
  Eigen::MatrixXd x_;
  Eigen::VectorXd w_;
  Eigen::MatrixXd normal_;
  Eigen::MatrixXd bread_;
  Eigen::MatrixXd resolved_;  // orthonormal basis of resolved coefficient directions
  Eigen::LDLT<Eigen::MatrixXd> solver_;
  std::vector<std::string> names_;
  double condition_ = 1.0;
};

// E[target | tag features at `step`] by least squares on the basis.
inline ProjectionResult project(std::span<const double> targets, const PathEnsemble& e, int step,
                                const FiltrationTag& tag, const RegressionSpec& spec = {},
                                std::span<const double> weights = {}) {
  if (step < 0 || step > e.grid.n_steps) throw Error("regression: step out of range");
  if (static_cast<int>(targets.size()) != e.n_paths)
    throw Error("regression: target count mismatch");
  const int steps[1] = {step};
  Projector proj(tag, {}, steps, e.n_paths, step, spec, weights);
  return proj.fit(targets, true);
}

}  // namespace pivlab
