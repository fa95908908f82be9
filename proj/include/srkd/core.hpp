#pragma once

#include "srkd/types.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace srkd {

// A labeled point cloud. Rows of positions, features and labels are aligned.
struct PointCloud {
  Matrix positions;  // N x 3, meters
  Matrix features;   // N x D_in
  std::vector<Label> labels;
  std::uint32_t n_classes = 0;
  std::string id;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t feature_dim() const noexcept { return static_cast<std::size_t>(features.cols()); }

  // Throws Error(Data) when shapes disagree, a label is out of range or a value is non-finite.
  void validate() const;

  bool operator==(const PointCloud& other) const;
};

// A cloud resampled to exactly n_fixed rows; padded rows are zero with kIgnoreLabel.
struct FixedSample {
  PointCloud cloud;
  Mask validity;

  std::size_t size() const noexcept { return cloud.size(); }
  std::size_t n_valid() const noexcept { return count_valid(validity); }
};

struct MiniBatch {
  std::vector<FixedSample> samples;
  std::uint64_t seed = 0;

  std::size_t size() const noexcept { return samples.size(); }
};

struct SceneSpec {
  std::uint32_t n_classes = 8;
  std::uint32_t points_per_scene = 2048;
  std::uint32_t n_scenes = 80;
  std::uint32_t feature_dim = 3;
  double radial_extent = 10.0;  // meters
  double height_extent = 4.0;   // meters
  double noise_std = 0.02;      // positional jitter, meters
  double feature_noise = 0.35;  // per-point attribute noise
  double class_decay = 0.7;     // class c has relative frequency class_decay^c
  std::uint64_t seed = 0;

  void validate() const;
};

// Deterministic in (spec, scene_index). Each class is one primitive family
// (ground annulus, boxes, poles, spheres) with geometrically decaying frequency.
PointCloud generate_scene(const SceneSpec& spec, std::size_t scene_index);

FixedSample resample_fixed(const PointCloud& cloud, std::size_t n_fixed, std::uint64_t seed);

MiniBatch assemble_batch(const std::vector<PointCloud>& clouds, std::size_t n_fixed, std::uint64_t seed);

// Format is chosen by extension: ".pctxt" (text) or ".pcbin" (binary).
PointCloud read_cloud(const std::filesystem::path& path);
void write_cloud(const PointCloud& cloud, const std::filesystem::path& path);

PointCloud parse_cloud_text(const std::string& text, const std::string& id = {});
std::string format_cloud_text(const PointCloud& cloud);
PointCloud parse_cloud_binary(const std::string& bytes, const std::string& id = {});
std::string format_cloud_binary(const PointCloud& cloud);

// Point counts per class over valid labeled points.
std::vector<std::size_t> class_histogram(const PointCloud& cloud);

}  // namespace srkd
