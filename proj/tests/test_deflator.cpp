#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "pivlab/pivlab.hpp"

using namespace pivlab;

namespace {

std::vector<StoppingLayer> layers_of(const PathEnsemble& e, std::initializer_list<int> levels) {
  std::vector<StoppingLayer> out;
  for (int n : levels) out.push_back(first_exit_layer(e, n));
  return out;
}

SegmentOptions exact() {
  SegmentOptions opt;
  opt.method = SegmentMethod::kMartingaleIdentity;
  return opt;
}

}  // namespace

TEST(Paste, ExactSegmentsReproduceInversePrice) {
  const auto e = simulate_bes3(1.0, TimeGrid::make(1.0, 128), 4000, 1);
  const auto layers = layers_of(e, {2, 4, 8});
  const std::vector<Strategy> hold(3, Strategy::constant(1.0));
  const auto d = paste(hold, e, UtilitySpec::log(), layers, exact());
  const auto& last = layers.back();
  double dev = 0.0;
  for (int p = 0; p < e.n_paths; ++p)
    for (int j = 0; j <= 128; ++j) dev = std::max(dev, std::abs(d.z(p, j) - 1.0 / e.s(p, last.stopped(p, j))));
  EXPECT_LT(dev, 1e-12);
  EXPECT_LT(d.form_gap(), 1e-12);
  for (double v : d.z.data()) ASSERT_GT(v, 0.0);
  EXPECT_EQ(d.levels, (std::vector<int>{2, 4, 8}));
}

TEST(Paste, SegmentIndexFollowsExits) {
  const auto e = simulate_bes3(1.0, TimeGrid::make(1.0, 128), 1000, 2);
  const auto layers = layers_of(e, {2, 4});
  const std::vector<Strategy> hold(2, Strategy::constant(1.0));
  const auto d = paste(hold, e, UtilitySpec::log(), layers, exact());
  for (int p = 0; p < e.n_paths; ++p) {
    const int t1 = layers[0].tau_index[static_cast<std::size_t>(p)];
    const int t2 = layers[1].tau_index[static_cast<std::size_t>(p)];
    EXPECT_EQ(d.segment(p, 0), 0);
    for (int j = 1; j <= 128; ++j) {
      const int want = j <= t1 ? 1 : (j <= t2 ? 2 : 2);
      ASSERT_EQ(d.segment(p, j), want) << p << " " << j;
    }
  }
}

TEST(Paste, SingleLayerIsTheSegment) {
  const auto e = simulate_bes3(1.0, TimeGrid::make(1.0, 64), 1000, 3);
  const auto layers = layers_of(e, {4});
  const std::vector<Strategy> hold{Strategy::constant(1.0)};
  const auto d = paste(hold, e, UtilitySpec::log(), layers, exact());
  const auto seg = segment_density(hold[0], layers[0], e, UtilitySpec::log(), exact());
  EXPECT_EQ(d.z, seg);
}

TEST(Paste, RegressionSegmentsArePositiveDensities) {
  const auto e = simulate_bes3(1.0, TimeGrid::make(1.0, 64), 10000, 4);
  const auto layers = layers_of(e, {2, 4});
  const std::vector<Strategy> hold(2, Strategy::constant(1.0));
  const auto d = paste(hold, e, UtilitySpec::log(), layers);
  for (int p = 0; p < e.n_paths; ++p) ASSERT_EQ(d.z(p, 0), 1.0);
  for (const auto& seg : d.segments) {
    const auto m = mean_se(terminal_values(seg, nullptr));
    EXPECT_NEAR(m.mean, 1.0, 1e-9);
  }
  // On the first layer the fit tracks 1/S closely.
  double err = 0.0;
  int count = 0;
  for (int p = 0; p < e.n_paths; ++p)
    for (int j = 0; j < layers[0].tau_index[static_cast<std::size_t>(p)]; ++j, ++count)
      err += std::pow(d.z(p, j) - 1.0 / e.s(p, j), 2);
  EXPECT_LT(std::sqrt(err / count), 0.02);
}

TEST(Paste, Errors) {
  const auto e = simulate_bes3(1.0, TimeGrid::make(1.0, 16), 500, 5);
  const auto layers = layers_of(e, {2, 4});
  const std::vector<Strategy> one{Strategy::constant(1.0)};
  EXPECT_THROW(paste(one, e, UtilitySpec::log(), layers, exact()), Error);
  const auto reversed = layers_of(e, {4, 2});
  const std::vector<Strategy> two(2, Strategy::constant(1.0));
  EXPECT_THROW(paste(two, e, UtilitySpec::log(), reversed, exact()), Error);
  EXPECT_THROW(segment_density(Strategy::constant(5.0), layers[1], e, UtilitySpec::log(), exact()),
               DomainViolation);
}

TEST(Consistency, LinearUtilityIsExact) {
  const auto e = simulate_bes3(1.0, TimeGrid::make(1.0, 64), 4000, 6);
  const auto layers = layers_of(e, {2, 4, 8});
  const std::vector<Strategy> s{Strategy::constant(1.0), Strategy::constant(0.5), Strategy::constant(0.0)};
  const auto rep = consistency_check(s, e, UtilitySpec::linear(), layers);
  ASSERT_EQ(rep.points.size(), 2u);
  for (const auto& pt : rep.points) {
    EXPECT_EQ(pt.mean, 0.0);
    EXPECT_EQ(pt.mean_square, 0.0);
  }
  EXPECT_TRUE(rep.verdict);
}

TEST(Consistency, BesselBuyAndHoldIsConsistent) {
  const auto e = simulate_bes3(1.0, TimeGrid::make(1.0, 128), 20000, 7);
  const auto layers = layers_of(e, {2, 4});
  const std::vector<Strategy> hold(2, Strategy::constant(1.0));
  EXPECT_TRUE(consistency_check(hold, e, UtilitySpec::log(), layers).verdict);
  const std::vector<Strategy> single{Strategy::constant(1.0)};
  const auto one = layers_of(e, {2});
  EXPECT_THROW(consistency_check(single, e, UtilitySpec::log(), one), Error);
}

TEST(Pilmd, ExactBesselDeflatorPasses) {
  const auto e = simulate_bes3(1.0, TimeGrid::make(1.0, 128), 20000, 8);
  const auto layers = layers_of(e, {2, 4});
  const std::vector<Strategy> hold(2, Strategy::constant(1.0));
  const auto d = paste(hold, e, UtilitySpec::log(), layers, exact());
  const auto rep = pilmd_audit(d, e, layers);
  ASSERT_EQ(rep.layers.size(), 2u);
  EXPECT_TRUE(rep.verdict) << rep.layers[0].z.max_abs_z() << " " << rep.layers[1].zs.max_abs_z();
}

TEST(Pilmd, UnitDeflatorFailsOnDriftedPrice) {
  // phi = 0 with log utility keeps X = 1, so Z = 1: Z is trivially a
  // martingale but Z S inherits the drift of S.
  const auto e = simulate(build_merton(0.1, 0.2), TimeGrid::make(1.0, 64), 20000, 9);
  const std::vector<StoppingLayer> layers{unstopped_layer(e)};
  const std::vector<Strategy> idle{Strategy::constant(0.0)};
  const auto d = paste(idle, e, UtilitySpec::log(), layers, exact());
  for (double v : d.z.data()) ASSERT_EQ(v, 1.0);
  const auto rep = pilmd_audit(d, e, layers);
  EXPECT_TRUE(rep.layers[0].z.verdict);
  EXPECT_FALSE(rep.layers[0].zs.verdict);
  EXPECT_FALSE(rep.verdict);
}

TEST(DeflatorCsv, OneRowPerPathAndStep) {
  const auto e = simulate_bes3(1.0, TimeGrid::make(1.0, 8), 20, 10);
  const auto layers = layers_of(e, {2});
  const std::vector<Strategy> hold{Strategy::constant(1.0)};
  const auto d = paste(hold, e, UtilitySpec::log(), layers, exact());
  const auto path = (std::filesystem::temp_directory_path() / "pivlab_deflator_test.csv").string();
  write_deflator_csv(path, d, e);
  std::ifstream in(path);
  std::string line;
  int rows = 0;
  std::getline(in, line);
  EXPECT_EQ(line, "path,step,t,Z,segment_index");
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 20 * 9);
  std::filesystem::remove(path);
}
