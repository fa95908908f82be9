#include "srkd/core.hpp"

#include "srkd/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace srkd {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Config: return "config_error";
    case ErrorKind::Data: return "data_error";
    case ErrorKind::Parse: return "parse_error";
    case ErrorKind::Numeric: return "numeric_error";
    case ErrorKind::Shape: return "shape_error";
    case ErrorKind::Tape: return "tape_error";
    case ErrorKind::Pairing: return "pairing_error";
    case ErrorKind::UndefinedLoss: return "undefined_loss";
    case ErrorKind::Io: return "io_error";
    case ErrorKind::MissingTeacher: return "train-teacher-first";
    case ErrorKind::GradCheck: return "gradcheck_failed";
  }
  return "error";
}

void PointCloud::validate() const {
  const auto n = static_cast<Eigen::Index>(labels.size());
  if (n < 1) throw Error(ErrorKind::Data, "point cloud '" + id + "' is empty");
  if (positions.rows() != n || positions.cols() != 3)
    throw Error(ErrorKind::Data, "point cloud '" + id + "': positions must be N x 3");
  if (features.rows() != n) throw Error(ErrorKind::Data, "point cloud '" + id + "': feature rows != N");
  if (!positions.allFinite() || !features.allFinite())
    throw Error(ErrorKind::Data, "point cloud '" + id + "': non-finite coordinate or feature");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != kIgnoreLabel && labels[i] >= n_classes)
      throw Error(ErrorKind::Data, "point cloud '" + id + "': label " + std::to_string(labels[i]) +
                                       " out of range at point " + std::to_string(i));
  }
}

bool PointCloud::operator==(const PointCloud& other) const {
  return n_classes == other.n_classes && labels == other.labels &&
         positions.rows() == other.positions.rows() && features.cols() == other.features.cols() &&
         positions == other.positions && features == other.features;
}

void SceneSpec::validate() const {
  if (n_classes < 1 || n_classes >= kIgnoreLabel) throw Error(ErrorKind::Config, "n_classes must be in [1, 254]");
  if (points_per_scene < 1) throw Error(ErrorKind::Config, "points_per_scene must be >= 1");
  if (n_scenes < 1) throw Error(ErrorKind::Config, "n_scenes must be >= 1");
  if (!(radial_extent > 0.0) || !(height_extent > 0.0))
    throw Error(ErrorKind::Config, "scene extents must be positive");
  if (!(noise_std >= 0.0) || !(feature_noise >= 0.0)) throw Error(ErrorKind::Config, "noise levels must be >= 0");
  if (!(class_decay > 0.0 && class_decay <= 1.0)) throw Error(ErrorKind::Config, "class_decay must be in (0, 1]");
}

namespace {

enum class Primitive { Ground, Box, Pole, Sphere };

struct ClassShape {
  Primitive kind;
  double size;    // footprint half-width or radius
  double height;  // vertical extent
  double lift;    // elevation of the lowest point
};

// Fixed per-class geometry; classes of the same family differ only in scale,
// so telling them apart needs neighborhood context.
ClassShape class_shape(std::uint32_t c) {
  if (c == 0) return {Primitive::Ground, 0.0, 0.0, 0.0};
  const double s = static_cast<double>(c);
  switch ((c - 1) % 3) {
    case 0: return {Primitive::Box, 0.35 + 0.12 * s, 0.4 + 0.2 * s, 0.0};
    case 1: return {Primitive::Pole, 0.06 + 0.03 * s, 1.2 + 0.25 * s, 0.0};
    default: return {Primitive::Sphere, 0.25 + 0.08 * s, 0.0, 0.1 * s};
  }
}

RowVector class_color(std::uint32_t c, std::uint32_t dim) {
  Rng rng(derive_seed(0xC01085EEDull, {c}));
  RowVector color(dim);
  for (std::uint32_t k = 0; k < dim; ++k) color[k] = rng.uniform();
  return color;
}

Eigen::Vector3d sample_box_surface(Rng& rng, const Eigen::Vector3d& center, double half, double height, double yaw) {
  // Four side faces plus the top, area weighted.
  const double side = 2.0 * half * height;
  const double top = 4.0 * half * half;
  const double pick = rng.uniform() * (4.0 * side + top);
  double lx, ly, lz;
  if (pick < 4.0 * side) {
    const int face = static_cast<int>(pick / side);
    const double t = rng.uniform(-half, half);
    lz = rng.uniform(0.0, height);
    switch (face) {
      case 0: lx = half, ly = t; break;
      case 1: lx = -half, ly = t; break;
      case 2: lx = t, ly = half; break;
      default: lx = t, ly = -half; break;
    }
  } else {
    lx = rng.uniform(-half, half);
    ly = rng.uniform(-half, half);
    lz = height;
  }
  const double c = std::cos(yaw), s = std::sin(yaw);
  return center + Eigen::Vector3d(c * lx - s * ly, s * lx + c * ly, lz);
}

}  // namespace

PointCloud generate_scene(const SceneSpec& spec, std::size_t scene_index) {
  spec.validate();
  if (scene_index >= spec.n_scenes)
    throw Error(ErrorKind::Config, "scene_index " + std::to_string(scene_index) + " >= n_scenes");

  Rng rng(derive_seed(spec.seed, {0x5CE4Eull, scene_index}));
  const std::uint32_t n_classes = spec.n_classes;
  const std::size_t n = spec.points_per_scene;

  std::vector<double> cumulative(n_classes);
  double total = 0.0;
  for (std::uint32_t c = 0; c < n_classes; ++c) {
    total += std::pow(spec.class_decay, static_cast<double>(c));
    cumulative[c] = total;
  }

  std::vector<Label> labels(n);
  for (auto& label : labels) {
    const double u = rng.uniform() * total;
    const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
    label = static_cast<Label>(std::min<std::ptrdiff_t>(it - cumulative.begin(), n_classes - 1));
  }
  std::sort(labels.begin(), labels.end());

  // One or two instances per object class, placed in the annulus.
  struct Instance {
    Eigen::Vector3d base;
    double scale;
    double yaw;
  };
  std::vector<std::vector<Instance>> instances(n_classes);
  const double R = spec.radial_extent;
  for (std::uint32_t c = 1; c < n_classes; ++c) {
    const int count = 1 + static_cast<int>(rng.below(2));
    for (int k = 0; k < count; ++k) {
      const double r = rng.uniform(0.15 * R, 0.85 * R);
      const double a = rng.uniform(0.0, 2.0 * std::numbers::pi);
      instances[c].push_back({Eigen::Vector3d(r * std::cos(a), r * std::sin(a), 0.0), rng.uniform(0.85, 1.15),
                              rng.uniform(0.0, std::numbers::pi)});
    }
  }

  PointCloud cloud;
  cloud.n_classes = n_classes;
  cloud.id = "scene_" + std::to_string(scene_index);
  cloud.positions.resize(static_cast<Eigen::Index>(n), 3);
  cloud.features.resize(static_cast<Eigen::Index>(n), spec.feature_dim);
  cloud.labels = labels;

  std::vector<RowVector> colors;
  for (std::uint32_t c = 0; c < n_classes; ++c) colors.push_back(class_color(c, spec.feature_dim));

  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t c = labels[i];
    const ClassShape shape = class_shape(c);
    Eigen::Vector3d p;
    if (shape.kind == Primitive::Ground) {
      const double r = 0.95 * R * std::sqrt(rng.uniform());
      const double a = rng.uniform(0.0, 2.0 * std::numbers::pi);
      p = Eigen::Vector3d(r * std::cos(a), r * std::sin(a), 0.0);
    } else {
      const auto& inst = instances[c][rng.below(instances[c].size())];
      const double size = shape.size * inst.scale;
      switch (shape.kind) {
        case Primitive::Box:
          p = sample_box_surface(rng, inst.base, size, shape.height * inst.scale, inst.yaw);
          break;
        case Primitive::Pole: {
          const double a = rng.uniform(0.0, 2.0 * std::numbers::pi);
          p = inst.base + Eigen::Vector3d(size * std::cos(a), size * std::sin(a),
                                          rng.uniform(0.0, shape.height * inst.scale));
          break;
        }
        default: {
          Eigen::Vector3d d(rng.normal(), rng.normal(), rng.normal());
          d /= std::max(d.norm(), 1e-12);
          p = inst.base + Eigen::Vector3d(0.0, 0.0, shape.lift + size) + size * d;
          break;
        }
      }
    }
    for (int k = 0; k < 3; ++k) p[k] += rng.normal(0.0, spec.noise_std);
    p[2] = std::clamp(p[2], -spec.height_extent, spec.height_extent);
    cloud.positions.row(static_cast<Eigen::Index>(i)) = p.transpose();
    for (std::uint32_t k = 0; k < spec.feature_dim; ++k)
      cloud.features(static_cast<Eigen::Index>(i), k) = colors[c][k] + rng.normal(0.0, spec.feature_noise);
  }
  return cloud;
}

FixedSample resample_fixed(const PointCloud& cloud, std::size_t n_fixed, std::uint64_t seed) {
  if (n_fixed < 1) throw Error(ErrorKind::Config, "n_fixed must be >= 1");
  cloud.validate();
  const std::size_t n = cloud.size();

  std::vector<std::size_t> keep(n);
  std::iota(keep.begin(), keep.end(), std::size_t{0});
  if (n > n_fixed) {
    // Partial Fisher-Yates; kept rows retain their original relative order.
    Rng rng(seed);
    for (std::size_t i = 0; i < n_fixed; ++i) std::swap(keep[i], keep[i + rng.below(n - i)]);
    keep.resize(n_fixed);
    std::sort(keep.begin(), keep.end());
  }

  FixedSample out;
  const auto rows = static_cast<Eigen::Index>(n_fixed);
  out.cloud.n_classes = cloud.n_classes;
  out.cloud.id = cloud.id;
  out.cloud.positions = Matrix::Zero(rows, 3);
  out.cloud.features = Matrix::Zero(rows, cloud.features.cols());
  out.cloud.labels.assign(n_fixed, kIgnoreLabel);
  out.validity.assign(n_fixed, false);
  for (std::size_t i = 0; i < keep.size(); ++i) {
    const auto src = static_cast<Eigen::Index>(keep[i]);
    const auto dst = static_cast<Eigen::Index>(i);
    out.cloud.positions.row(dst) = cloud.positions.row(src);
    out.cloud.features.row(dst) = cloud.features.row(src);
    out.cloud.labels[i] = cloud.labels[keep[i]];
    out.validity[i] = true;
  }
  return out;
}

MiniBatch assemble_batch(const std::vector<PointCloud>& clouds, std::size_t n_fixed, std::uint64_t seed) {
  if (clouds.empty()) throw Error(ErrorKind::Data, "cannot assemble an empty batch");
  const auto dim = clouds.front().features.cols();
  const auto n_classes = clouds.front().n_classes;
  MiniBatch batch;
  batch.seed = seed;
  for (std::size_t i = 0; i < clouds.size(); ++i) {
    if (clouds[i].features.cols() != dim)
      throw Error(ErrorKind::Data, "heterogeneous feature width in batch at sample " + std::to_string(i));
    if (clouds[i].n_classes != n_classes)
      throw Error(ErrorKind::Data, "heterogeneous class count in batch at sample " + std::to_string(i));
    batch.samples.push_back(resample_fixed(clouds[i], n_fixed, derive_seed(seed, {i})));
  }
  return batch;
}

std::vector<std::size_t> class_histogram(const PointCloud& cloud) {
  std::vector<std::size_t> hist(cloud.n_classes, 0);
  for (Label l : cloud.labels)
    if (l != kIgnoreLabel && l < cloud.n_classes) ++hist[l];
  return hist;
}

}  // namespace srkd
