#include "srkd/core.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

using namespace srkd;

namespace {

PointCloud tiny_cloud(std::size_t n, std::size_t d, std::uint32_t c, std::uint64_t seed) {
  Rng rng(seed);
  PointCloud p;
  p.positions = testutil::random_matrix(rng, static_cast<Eigen::Index>(n), 3);
  p.features = testutil::random_matrix(rng, static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  p.n_classes = c;
  for (std::size_t i = 0; i < n; ++i) p.labels.push_back(static_cast<Label>(rng.below(c)));
  return p;
}

}  // namespace

TEST(Scene, DeterministicPerSeedAndIndex) {
  SceneSpec spec;
  spec.seed = 7;
  EXPECT_EQ(generate_scene(spec, 0), generate_scene(spec, 0));
  EXPECT_FALSE(generate_scene(spec, 0) == generate_scene(spec, 1));
  SceneSpec other = spec;
  other.seed = 8;
  EXPECT_FALSE(generate_scene(spec, 0) == generate_scene(other, 0));
}

TEST(Scene, ShapesAndLabelRange) {
  SceneSpec spec;
  const PointCloud p = generate_scene(spec, 3);
  EXPECT_EQ(p.size(), 2048u);
  EXPECT_EQ(p.positions.cols(), 3);
  EXPECT_EQ(p.feature_dim(), spec.feature_dim);
  for (Label l : p.labels) EXPECT_LT(l, 8);
  EXPECT_NO_THROW(p.validate());
}

TEST(Scene, ClassFrequencyDecays) {
  SceneSpec spec;
  spec.n_scenes = 100;
  int wins = 0;
  for (std::size_t i = 0; i < 100; ++i) {
    const auto h = class_histogram(generate_scene(spec, i));
    wins += h[0] > h[7] ? 1 : 0;
  }
  EXPECT_GE(wins, 95);
}

TEST(Scene, RejectsBadSpecs) {
  SceneSpec spec;
  EXPECT_EQ(testutil::error_kind_of([&] { generate_scene(spec, spec.n_scenes); }), ErrorKind::Config);
  spec.radial_extent = 0;
  EXPECT_EQ(testutil::error_kind_of([&] { generate_scene(spec, 0); }), ErrorKind::Config);
}

TEST(Resample, SubsampleToFixed) {
  SceneSpec spec;
  const FixedSample s = resample_fixed(generate_scene(spec, 0), 1024, 1);
  EXPECT_EQ(s.size(), 1024u);
  EXPECT_EQ(s.n_valid(), 1024u);
}

TEST(Resample, PadsWithIgnore) {
  const PointCloud p = tiny_cloud(1000, 2, 4, 3);
  const FixedSample s = resample_fixed(p, 1024, 1);
  EXPECT_EQ(s.n_valid(), 1000u);
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s.validity[i]) continue;
    EXPECT_EQ(s.cloud.labels[i], kIgnoreLabel);
    EXPECT_TRUE(s.cloud.positions.row(static_cast<Eigen::Index>(i)).isZero(0));
    EXPECT_TRUE(s.cloud.features.row(static_cast<Eigen::Index>(i)).isZero(0));
  }
}

TEST(Resample, IdentityKeepsMultiset) {
  const PointCloud p = tiny_cloud(64, 2, 4, 5);
  const FixedSample s = resample_fixed(p, 64, 9);
  EXPECT_EQ(s.n_valid(), 64u);
  auto rows = [](const PointCloud& c) {
    std::multiset<std::vector<double>> out;
    for (Eigen::Index i = 0; i < c.positions.rows(); ++i)
      out.insert({c.positions(i, 0), c.positions(i, 1), c.positions(i, 2), c.features(i, 0), c.features(i, 1),
                  static_cast<double>(c.labels[static_cast<std::size_t>(i)])});
    return out;
  };
  EXPECT_EQ(rows(p), rows(s.cloud));
}

TEST(Resample, InvariantsOverRandomSizes) {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng.below(80), n_fixed = 1 + rng.below(80);
    const FixedSample s = resample_fixed(tiny_cloud(n, 1, 3, trial), n_fixed, trial);
    ASSERT_EQ(s.size(), n_fixed);
    EXPECT_EQ(s.n_valid(), std::min(n, n_fixed));
    for (std::size_t i = 0; i < n_fixed; ++i)
      if (!s.validity[i]) EXPECT_EQ(s.cloud.labels[i], kIgnoreLabel);
  }
}

TEST(Batch, AssemblesAndRejectsMixedWidths) {
  std::vector<PointCloud> clouds;
  for (int i = 0; i < 8; ++i) clouds.push_back(tiny_cloud(40, 2, 4, i));
  const MiniBatch a = assemble_batch(clouds, 32, 5), b = assemble_batch(clouds, 32, 5);
  EXPECT_EQ(a.size(), 8u);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a.samples[i].cloud, b.samples[i].cloud);
  EXPECT_EQ(assemble_batch({clouds[0]}, 32, 5).size(), 1u);
  clouds.push_back(tiny_cloud(40, 3, 4, 99));
  EXPECT_EQ(testutil::error_kind_of([&] { assemble_batch(clouds, 32, 5); }), ErrorKind::Data);
}

TEST(CloudIo, TextRecordParses) {
  const PointCloud p = parse_cloud_text("PCTXT v1 N=1 D=2 C=8\n0.5 1.0 -0.2 0.1 0.9 3\n");
  ASSERT_EQ(p.size(), 1u);
  EXPECT_EQ(p.positions(0, 0), 0.5);
  EXPECT_EQ(p.positions(0, 1), 1.0);
  EXPECT_EQ(p.positions(0, 2), -0.2);
  EXPECT_EQ(p.features(0, 0), 0.1);
  EXPECT_EQ(p.features(0, 1), 0.9);
  EXPECT_EQ(p.labels[0], 3);
}

TEST(CloudIo, TextErrorsNameTheLine) {
  try {
    parse_cloud_text("PCTXT v1 N=2 D=2 C=8\n0 0 0 0 0 1\n0.5 1.0 -0.2 0.1 0.9 9\n", "bad");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Parse);
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
  EXPECT_EQ(testutil::error_kind_of([] { parse_cloud_text("PCTXT v2 N=1 D=0 C=2\n0 0 0 1\n"); }), ErrorKind::Parse);
  EXPECT_EQ(testutil::error_kind_of([] { parse_cloud_text("PCTXT v1 N=1 D=0 C=2\nnan 0 0 1\n"); }), ErrorKind::Parse);
}

TEST(CloudIo, BinaryRoundTripIsExact) {
  const PointCloud p = tiny_cloud(37, 3, 5, 21);
  const std::string bytes = format_cloud_binary(p);
  EXPECT_EQ(bytes.substr(0, 4), "PCB1");
  EXPECT_EQ(bytes.size(), 4 + 12 + 37 * ((3 + 3) * 8 + 2));
  const PointCloud q = parse_cloud_binary(bytes);
  EXPECT_EQ(p, q);
  EXPECT_EQ(format_cloud_binary(q), bytes);
}

TEST(CloudIo, BinaryRejectsBadLabel) {
  PointCloud p = tiny_cloud(3, 1, 4, 2);
  std::string bytes = format_cloud_binary(p);
  bytes[bytes.size() - 2] = 9;  // last record's label, low byte
  bytes[bytes.size() - 1] = 0;
  EXPECT_EQ(testutil::error_kind_of([&] { parse_cloud_binary(bytes); }), ErrorKind::Parse);
  EXPECT_EQ(testutil::error_kind_of([&] { parse_cloud_binary(bytes.substr(0, bytes.size() - 1)); }), ErrorKind::Parse);
}

TEST(CloudIo, FileRoundTripBothFormats) {
  const auto dir = testutil::scratch_dir("io");
  const PointCloud p = tiny_cloud(20, 2, 4, 8);
  write_cloud(p, dir / "a.pcbin");
  write_cloud(p, dir / "a.pctxt");
  EXPECT_EQ(read_cloud(dir / "a.pcbin"), p);
  EXPECT_EQ(read_cloud(dir / "a.pctxt"), p);
  EXPECT_EQ(testutil::error_kind_of([&] { write_cloud(p, dir / "a.xyz"); }), ErrorKind::Io);
  EXPECT_EQ(testutil::error_kind_of([&] { read_cloud(dir / "missing.pcbin"); }), ErrorKind::Io);
}

TEST(Histogram, SkipsIgnore) {
  PointCloud p = tiny_cloud(4, 1, 3, 1);
  p.labels = {0, 2, kIgnoreLabel, 2};
  EXPECT_EQ(class_histogram(p), (std::vector<std::size_t>{1, 0, 2}));
}
