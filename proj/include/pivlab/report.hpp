#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pivlab/admissibility.hpp"
#include "pivlab/audit.hpp"
#include "pivlab/bsde.hpp"
#include "pivlab/deflator.hpp"
#include "pivlab/error.hpp"
#include "pivlab/format.hpp"
#include "pivlab/measure.hpp"
#include "pivlab/stats.hpp"

namespace pivlab {

using nlohmann::json;

inline json to_json(const MeanEstimate& m) {
  return {{"mean", json_number(m.mean)}, {"se", json_number(m.se)}, {"n", m.n}};
}

inline json to_json(const NestedEstimate& m) {
  json nested = json::array();
  for (double v : m.nested) nested.push_back(json_number(v));
  return {{"estimate", to_json(m.full)}, {"nested_prefix_means", nested}, {"diverging", m.diverging}};
}

inline json to_json(const MartingaleReport& r) {
  json cps = json::array();
  for (const auto& c : r.checkpoints)
    cps.push_back({{"step", c.step}, {"t", json_number(c.t)}, {"mean", json_number(c.mean)},
                   {"se", json_number(c.se)}, {"z", json_number(c.z)}});
  json regs = json::array();
  for (const auto& g : r.increment_regressions)
    regs.push_back({{"step", g.step}, {"t", json_number(g.t)}, {"wald_z", json_number(g.wald_z)},
                    {"dof", g.dof}});
  return {{"checkpoints", cps},
          {"increment_regressions", regs},
          {"max_abs_z", json_number(r.max_abs_z())},
          {"family_threshold", json_number(r.family_threshold)},
          {"zero_variance", r.zero_variance},
          {"verdict", r.verdict}};
}

inline json to_json(const OptimalityReport& r) {
  json pts = json::array();
  for (const auto& p : r.points)
    pts.push_back({{"step", p.step}, {"t", json_number(p.t)}, {"residual", json_number(p.residual)},
                   {"se", json_number(p.se)}, {"z", json_number(p.zscore)},
                   {"fitted_rms", json_number(p.fitted_rms)}});
  return {{"points", pts},
          {"max_abs_z", json_number(r.max_abs_z())},
          {"family_threshold", json_number(r.family_threshold)},
          {"verdict", r.verdict}};
}

inline json to_json(const PiemmReport& r) {
  json direct = json::array();
  for (const auto& p : r.direct)
    direct.push_back({{"step", p.step}, {"t", json_number(p.t)}, {"residual", json_number(p.residual)},
                      {"se", json_number(p.se)}, {"z", json_number(p.zscore)}});
  return {{"direct_applicable", r.direct_applicable},
          {"direct", direct},
          {"direct_pass", r.direct_pass},
          {"structural", to_json(r.structural)},
          {"verdict", r.verdict}};
}

inline json to_json(const PilmdReport& r) {
  json layers = json::array();
  for (const auto& l : r.layers) layers.push_back({{"level", l.level}, {"Z", to_json(l.z)}, {"ZS", to_json(l.zs)}});
  return {{"layers", layers}, {"verdict", r.verdict}};
}

inline json to_json(const ConsistencyReport& r) {
  json pts = json::array();
  for (const auto& p : r.points)
    pts.push_back({{"level", p.level}, {"mean", json_number(p.mean)}, {"se", json_number(p.se)},
                   {"mean_square", json_number(p.mean_square)}, {"z", json_number(p.zscore)}});
  return {{"points", pts}, {"family_threshold", json_number(r.family_threshold)}, {"verdict", r.verdict}};
}

inline json to_json(const MomentReport& r) {
  json ms = json::array();
  for (const auto& m : r.moments) ms.push_back({{"order", json_number(m.order)}, {"sup_moment", to_json(m.estimate)}});
  return {{"moments", ms}, {"bound_ok", r.bound_ok}, {"verdict", r.verdict}};
}

inline json to_json(const AdmissibilityReport& r) {
  return {{"sup_wealth_sq", to_json(r.sup_wealth_sq)},
          {"marginal_utility_sq", to_json(r.marginal_utility_sq)},
          {"flagged", r.flagged}};
}

inline json to_json(const UtilityRanking& r) {
  json out = json::array();
  for (const auto& c : r.ranked)
    out.push_back({{"label", c.label}, {"index", c.index}, {"utility", to_json(c.utility)},
                   {"gap", to_json(c.gap)}, {"domain_violation", c.domain_violation}});
  return out;
}

// One plot-ready series: rows (t, value, lo, hi).
struct Curve {
  std::string name;
  std::vector<double> t, value, lo, hi;

  void add(double ti, double v, double se) {
    t.push_back(ti);
    value.push_back(v);
    lo.push_back(v - 3.0 * se);
    hi.push_back(v + 3.0 * se);
  }
};

inline Curve residual_curve(std::string name, const OptimalityReport& r) {
  Curve c{std::move(name), {}, {}, {}, {}};
  for (const auto& p : r.points) c.add(p.t, p.residual, p.se);
  return c;
}

inline Curve level_curve(std::string name, const MartingaleReport& r) {
  Curve c{std::move(name), {}, {}, {}, {}};
  for (const auto& p : r.checkpoints) c.add(p.t, p.mean, p.se);
  return c;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("cannot write " + path.string());
}

// One CSV per curve, named <curve>.csv in `dir`. Nothing is created for an empty list.
inline std::vector<std::filesystem::path> emit_plot_data(const std::vector<Curve>& curves,
                                                         const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> written;
  if (curves.empty()) return written;
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error("cannot create " + dir.string() + ": " + ec.message());
  for (const auto& c : curves) {
    std::string text = "t,value,lo,hi\n";
    for (std::size_t i = 0; i < c.t.size(); ++i)
      text += format_double(c.t[i]) + "," + format_double(c.value[i]) + "," + format_double(c.lo[i]) + "," +
              format_double(c.hi[i]) + "\n";
    const auto path = dir / (c.name + ".csv");
    write_text(path, text);
    written.push_back(path);
  }
  return written;
}

}  // namespace pivlab
