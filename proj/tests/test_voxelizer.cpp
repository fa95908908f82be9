#include "srkd/voxelizer.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <set>
#include <tuple>

using namespace srkd;

namespace {

constexpr double kPi = std::numbers::pi;

Matrix point(double x, double y, double z) {
  Matrix m(1, 3);
  m << x, y, z;
  return m;
}

CylGrid grid_of(double r, double rv, double a, double av, double h, double hv) {
  CylGrid g;
  g.radial_extent = r;
  g.radial_cell = rv;
  g.angular_extent = a;
  g.angular_cell = av;
  g.height_extent = h;
  g.height_cell = hv;
  return g;
}

FixedSample sample_at(const Matrix& positions, const std::vector<Label>& labels, std::size_t d = 2) {
  FixedSample s;
  s.cloud.positions = positions;
  s.cloud.features = Matrix::Zero(positions.rows(), static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < positions.rows(); ++i)
    for (Eigen::Index k = 0; k < s.cloud.features.cols(); ++k) s.cloud.features(i, k) = static_cast<double>(i * 10 + k);
  s.cloud.labels = labels;
  s.cloud.n_classes = 4;
  s.validity.assign(static_cast<std::size_t>(positions.rows()), true);
  return s;
}

}  // namespace

TEST(Cylindrical, Examples) {
  EXPECT_TRUE(to_cylindrical(point(1, 0, 2)).isApprox(point(1, 0, 2), 1e-15));
  EXPECT_TRUE(to_cylindrical(point(0, 1, 0)).isApprox(point(1, kPi / 2, 0), 1e-15));
  const Matrix c = to_cylindrical(point(-1, -1, 3));
  EXPECT_NEAR(c(0, 0), std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(c(0, 1), 5 * kPi / 4, 1e-15);
  EXPECT_EQ(c(0, 2), 3.0);
  EXPECT_TRUE(to_cylindrical(point(0, 0, -1)).isApprox(point(0, 0, -1), 0));
}

TEST(Cylindrical, AngleAlwaysInRange) {
  Rng rng(4);
  const Matrix p = testutil::random_matrix(rng, 500, 3, 5.0);
  const Matrix c = to_cylindrical(p);
  for (Eigen::Index i = 0; i < c.rows(); ++i) {
    EXPECT_GE(c(i, 1), 0.0);
    EXPECT_LT(c(i, 1), 2 * kPi);
    EXPECT_NEAR(c(i, 0) * std::cos(c(i, 1)), p(i, 0), 1e-12);
    EXPECT_NEAR(c(i, 0) * std::sin(c(i, 1)), p(i, 1), 1e-12);
  }
}

TEST(VoxelCount, Examples) {
  EXPECT_EQ(voxel_count(grid_of(10, 3, 2 * kPi, kPi / 2, 4, 2)), 32u);
  EXPECT_EQ(voxel_count(grid_of(5, 5, 2 * kPi, 2 * kPi, 3, 3)), 1u);
  EXPECT_EQ(grid_of(1, 0.3, 2 * kPi, kPi, 1, 1).radial_cells(), 4u);
}

TEST(VoxelCount, MatchesDistinctCellsOverDenseSweep) {
  Rng rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    const double r = 1 + 19 * rng.uniform(), a = (0.2 + 0.8 * rng.uniform()) * 2 * kPi, h = 0.5 + 5 * rng.uniform();
    const CylGrid g = grid_of(r, r * (0.08 + 0.92 * rng.uniform()), a, a * (0.08 + 0.92 * rng.uniform()), h,
                              h * (0.08 + 0.92 * rng.uniform()));
    const double expected = std::ceil(g.radial_extent / g.radial_cell) * std::ceil(g.angular_extent / g.angular_cell) *
                            std::ceil(g.height_extent / g.height_cell);
    ASSERT_EQ(voxel_count(g), static_cast<std::size_t>(expected));

    constexpr int kSteps = 4000;
    auto reps = [&](double extent, auto axis_index) {
      std::map<int, double> seen;
      for (int s = 0; s < kSteps; ++s) {
        const double x = extent * (s + 0.5) / kSteps;
        seen.emplace(axis_index(x), x);
      }
      return seen;
    };
    const auto rs = reps(g.radial_extent, [&](double x) { return cell_of(g, x, 0, g.height_origin).radial; });
    const auto as = reps(g.angular_extent, [&](double x) { return cell_of(g, 0, x, g.height_origin).angular; });
    const auto hs = reps(g.height_extent, [&](double x) { return cell_of(g, 0, 0, g.height_origin + x).height; });
    std::set<std::tuple<int, int, int>> cells;
    for (const auto& [ri, rx] : rs)
      for (const auto& [ai, ax] : as)
        for (const auto& [hi, hx] : hs) {
          const CellIndex c = cell_of(g, rx, ax, g.height_origin + hx);
          cells.emplace(c.radial, c.angular, c.height);
        }
    EXPECT_EQ(cells.size(), voxel_count(g)) << "trial " << trial;
  }
}

TEST(VoxelCount, RejectsInvalidGrid) {
  EXPECT_EQ(testutil::error_kind_of([] { voxel_count(grid_of(10, 0, 2 * kPi, 1, 4, 2)); }), ErrorKind::Config);
  EXPECT_EQ(testutil::error_kind_of([] { voxel_count(grid_of(10, 11, 2 * kPi, 1, 4, 2)); }), ErrorKind::Config);
}

TEST(TauClass, Examples) {
  std::vector<std::size_t> hist{20, 80};
  const std::vector<Label> zero(3, 0), one(2, 1);
  EXPECT_NEAR(tau_class(zero, hist), 0.8, 1e-15);
  EXPECT_EQ(tau_class(zero, {100, 0}), 0.0);
  hist = {10, 60, 30};
  const double rare = tau_class(zero, hist), common = tau_class(std::vector<Label>{1, 1, 0}, hist);
  EXPECT_NEAR(rare, 0.9, 1e-15);
  EXPECT_NEAR(common, 0.4, 1e-15);
  EXPECT_GT(rare, common);
}

TEST(TauClass, TiesGoToLowerClassAndIgnoreSkips) {
  const std::vector<std::size_t> hist{30, 50, 20};
  EXPECT_NEAR(tau_class(std::vector<Label>{2, 1, 1, 2}, hist), 0.5, 1e-15);
  EXPECT_NEAR(tau_class(std::vector<Label>{kIgnoreLabel, kIgnoreLabel, 2}, hist), 0.8, 1e-15);
  EXPECT_EQ(testutil::error_kind_of([&] { tau_class(std::vector<Label>{}, hist); }), ErrorKind::Data);
}

TEST(SupervoxelWeight, Examples) {
  const CylGrid g32 = grid_of(10, 3, 2 * kPi, kPi / 2, 4, 2);
  ASSERT_EQ(voxel_count(g32), 32u);
  EXPECT_NEAR(supervoxel_weight(0.8, 6, g32), 0.015, 1e-17);
  EXPECT_EQ(supervoxel_weight(0.8, 6, g32), (0.8 / 32) * (6.0 / 10));
  EXPECT_EQ(supervoxel_weight(0.0, 7, g32), 0.0);
  const CylGrid g1 = grid_of(5, 5, 2 * kPi, 2 * kPi, 3, 3);
  EXPECT_EQ(supervoxel_weight(1.0, 5, g1), 1.0);
}

TEST(SupervoxelWeight, MonotoneInTauAndDistance) {
  const CylGrid g;
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const double t1 = rng.uniform(), t2 = rng.uniform(), d1 = 10 * rng.uniform(), d2 = 10 * rng.uniform();
    if (t1 < t2) EXPECT_LE(supervoxel_weight(t1, d1, g), supervoxel_weight(t2, d1, g));
    if (d1 < d2) EXPECT_LE(supervoxel_weight(t1, d1, g), supervoxel_weight(t1, d2, g));
    EXPECT_LE(supervoxel_weight(t1, d1, g), 1.0 / static_cast<double>(voxel_count(g)));
  }
  EXPECT_EQ(testutil::error_kind_of([&] { supervoxel_weight(1.5, 1, g); }), ErrorKind::Numeric);
  EXPECT_EQ(testutil::error_kind_of([&] { supervoxel_weight(0.5, 11, g); }), ErrorKind::Numeric);
}

TEST(Sampling, BinomialFrequency) {
  const std::vector<double> w{0.9, 0.1};
  int first = 0;
  for (std::uint64_t t = 0; t < 10000; ++t) first += sample_weighted_indices(w, 1, derive_seed(99, {t}))[0] == 0 ? 1 : 0;
  EXPECT_NEAR(first, 9000, 90);
}

TEST(Sampling, ChiSquareGoodnessOfFit) {
  const std::vector<double> w{0.05, 0.3, 0.15, 0.2, 0.0, 0.3};
  constexpr int kDraws = 100000;
  std::vector<int> counts(w.size(), 0);
  for (std::uint64_t t = 0; t < kDraws; ++t) ++counts[sample_weighted_indices(w, 1, derive_seed(7, {t}))[0]];
  EXPECT_EQ(counts[4], 0);
  double chi2 = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w[i] == 0) continue;
    const double expected = kDraws * w[i];
    chi2 += (counts[i] - expected) * (counts[i] - expected) / expected;
  }
  // Upper 0.001 quantile of chi-square with 4 degrees of freedom.
  EXPECT_LT(chi2, 18.467);
}

TEST(Sampling, ExhaustionPermutationAndFallback) {
  const std::vector<double> w{0.2, 0.5, 0.3};
  auto all = sample_weighted_indices(w, 5, 1);
  std::sort(all.begin(), all.end());
  EXPECT_EQ(all, (std::vector<std::size_t>{0, 1, 2}));
  auto perm = sample_weighted_indices(w, 3, 2);
  EXPECT_EQ(std::set<std::size_t>(perm.begin(), perm.end()).size(), 3u);

  EXPECT_EQ(sample_weighted_indices(std::vector<double>{0.0, 0.4, 0.0}, 3, 3), (std::vector<std::size_t>{1}));
  auto fallback = sample_weighted_indices(std::vector<double>{0.0, 0.0, 0.0, 0.0}, 2, 4);
  EXPECT_EQ(fallback.size(), 2u);
  EXPECT_NE(fallback[0], fallback[1]);
  EXPECT_EQ(sample_weighted_indices(w, 2, 11), sample_weighted_indices(w, 2, 11));
  EXPECT_EQ(testutil::error_kind_of([&] { sample_weighted_indices(w, 0, 1); }), ErrorKind::Config);
}

TEST(BuildSupervoxels, SingleCellSingleVoxel) {
  CylGrid g = grid_of(10, 10, 2 * kPi, 2 * kPi, 4, 4);
  SamplerConfig cfg{1, 8, 4, 1};
  Matrix pos(4, 3);
  pos << 1, 0, 1, 0, 2, 2, -3, 0, 3, 0, -4, 0.5;
  const auto svs = build_supervoxels(sample_at(pos, {0, 0, 1, 2}), g, cfg, {2, 1, 1, 0}, 5);
  ASSERT_EQ(svs.size(), 1u);
  EXPECT_EQ(svs[0].n_voxel_valid(), 1u);
  EXPECT_EQ(svs[0].n_point_valid(), 4u);
  EXPECT_TRUE(svs[0].voxel_features.row(0).isApprox(sample_at(pos, {0, 0, 1, 2}).cloud.features.colwise().mean()));
  EXPECT_NEAR(svs[0].tau, 0.5, 1e-15);
  EXPECT_EQ(svs[0].outer_distance, 10.0);
  EXPECT_NEAR(svs[0].weight, 0.5, 1e-15);
}

TEST(BuildSupervoxels, TruncationAndPadding) {
  CylGrid g = grid_of(10, 10, 2 * kPi, 2 * kPi, 4, 4);
  Rng rng(6);
  Matrix pos(50, 3);
  for (Eigen::Index i = 0; i < 50; ++i) pos.row(i) << 1 + 5 * rng.uniform(), 1 + 2 * rng.uniform(), 3 * rng.uniform();
  const FixedSample big = sample_at(pos, std::vector<Label>(50, 1));
  const auto a = build_supervoxels(big, g, {1, 32, 4, 2}, {0, 50}, 9);
  ASSERT_EQ(a.size(), 1u);
  EXPECT_EQ(a[0].n_point_valid(), 32u);
  EXPECT_EQ(std::set<int>(a[0].point_rows.begin(), a[0].point_rows.end()).size(), 32u);
  EXPECT_EQ(a[0].point_rows, build_supervoxels(big, g, {1, 32, 4, 2}, {0, 50}, 9)[0].point_rows);

  const FixedSample small = sample_at(pos.topRows(5), std::vector<Label>(5, 1));
  const auto b = build_supervoxels(small, g, {1, 8, 4, 2}, {0, 5}, 9);
  ASSERT_EQ(b.size(), 1u);
  EXPECT_EQ(b[0].n_point_valid(), 5u);
  for (std::size_t i = 5; i < 8; ++i) {
    EXPECT_FALSE(b[0].point_mask[i]);
    EXPECT_EQ(b[0].point_rows[i], -1);
    EXPECT_TRUE(b[0].point_features.row(static_cast<Eigen::Index>(i)).isZero(0));
  }
}

TEST(BuildSupervoxels, PartitionProperty) {
  SceneSpec spec;
  const FixedSample s = resample_fixed(generate_scene(spec, 2), 1024, 3);
  const CylGrid g;
  const SamplerConfig cfg{4, 1024, 64, 2};  // large enough that nothing is truncated
  const auto svs = build_supervoxels(s, g, cfg, class_histogram(s.cloud), 17);
  std::vector<int> cell_hits(s.size(), 0), voxel_hits(s.size(), 0);
  std::set<std::tuple<int, int, int>> cells;
  for (const auto& sv : svs) {
    EXPECT_TRUE(cells.emplace(sv.cell.radial, sv.cell.angular, sv.cell.height).second);
    for (int m : sv.members) ++cell_hits[static_cast<std::size_t>(m)];
    for (const auto& grp : sv.voxel_groups)
      for (int m : grp) ++voxel_hits[static_cast<std::size_t>(m)];
    EXPECT_LE(sv.n_voxel_valid(), cfg.sub_div * cfg.sub_div * cfg.sub_div);
    EXPECT_GE(sv.weight, 0.0);
  }
  EXPECT_LE(cells.size(), voxel_count(g));
  for (std::size_t i = 0; i < s.size(); ++i) {
    EXPECT_EQ(cell_hits[i], 1) << i;
    EXPECT_EQ(voxel_hits[i], 1) << i;
  }
}

TEST(BuildSupervoxels, EmptyCloudGivesNothing) {
  FixedSample s = sample_at(Matrix::Zero(3, 3), {0, 0, 0});
  s.validity.assign(3, false);
  EXPECT_TRUE(build_supervoxels(s, CylGrid{}, SamplerConfig{}, {0, 0, 0, 0}, 1).empty());
}
