#pragma once

#include "srkd/core.hpp"
#include "srkd/types.hpp"

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

namespace srkd {

// Cylindrical partition of the XY-plane annulus times a height slab.
struct CylGrid {
  double radial_extent = 10.0;                        // R, meters
  double angular_extent = 2.0 * std::numbers::pi;     // A, radians
  double height_extent = 4.0;                         // H, meters
  double height_origin = 0.0;                         // h_min, meters
  double radial_cell = 2.5;                           // R_v
  double angular_cell = std::numbers::pi / 4.0;       // A_v
  double height_cell = 2.0;                           // H_v

  void validate() const;

  std::size_t radial_cells() const;
  std::size_t angular_cells() const;
  std::size_t height_cells() const;
};

struct CellIndex {
  int radial = 0;
  int angular = 0;
  int height = 0;

  friend bool operator==(const CellIndex&, const CellIndex&) = default;
};

struct SamplerConfig {
  std::size_t k = 4;          // supervoxels sampled per cloud
  std::size_t n_point = 128;  // fixed point rows per supervoxel
  std::size_t n_voxel = 16;   // fixed voxel rows per supervoxel
  std::size_t sub_div = 2;    // fine voxels per axis inside a supervoxel

  void validate() const;
};

// A coarse cell with its fixed-size point and voxel layouts. point_rows and
// voxel_groups index rows of the source FixedSample and are what both the
// student and teacher views share.
struct Supervoxel {
  CellIndex cell;
  std::vector<int> members;                   // every real point in the cell
  double outer_distance = 0.0;                // D_i, meters
  double tau = 0.0;                           // class-balance factor
  double weight = 0.0;                        // w_i
  std::vector<int> point_rows;                // length n_point, -1 = padding
  std::vector<std::vector<int>> voxel_groups;  // length n_voxel, empty = padding
  Mask point_mask;
  Mask voxel_mask;
  Matrix point_features;  // n_point x D of the sample's input features
  Matrix voxel_features;  // n_voxel x D, mean pooled

  std::size_t n_point_valid() const { return count_valid(point_mask); }
  std::size_t n_voxel_valid() const { return count_valid(voxel_mask); }
};

// (x, y, z) -> (r, a in [0, 2pi), h); the origin maps to (0, 0, z).
template <typename Derived>
MatrixX<typename Derived::Scalar> to_cylindrical(const Eigen::MatrixBase<Derived>& positions) {
  using Scalar = typename Derived::Scalar;
  if (positions.cols() != 3) throw Error(ErrorKind::Shape, "to_cylindrical: expected N x 3 positions");
  MatrixX<Scalar> out(positions.rows(), 3);
  const Scalar two_pi = Scalar(2) * std::numbers::pi_v<Scalar>;
  for (Eigen::Index i = 0; i < positions.rows(); ++i) {
    const Scalar x = positions(i, 0), y = positions(i, 1);
    Scalar a = (x == Scalar(0) && y == Scalar(0)) ? Scalar(0) : std::atan2(y, x);
    if (a < Scalar(0)) a += two_pi;
    if (a >= two_pi) a -= two_pi;
    out(i, 0) = std::hypot(x, y);
    out(i, 1) = a;
    out(i, 2) = positions(i, 2);
  }
  return out;
}

// ceil(R/R_v) * ceil(A/A_v) * ceil(H/H_v).
std::size_t voxel_count(const CylGrid& grid);

// Coarse cell of a cylindrical coordinate; out-of-range values clamp to the border cells.
CellIndex cell_of(const CylGrid& grid, double r, double a, double h);

// 1 - C_current / C_total, where C_current is the batch count of the members'
// majority class (ties go to the lower class id).
double tau_class(std::span<const Label> member_labels, const std::vector<std::size_t>& batch_histogram);

// (tau / N_v) * (D_i / R).
double supervoxel_weight(double tau, double outer_distance, const CylGrid& grid);

std::vector<std::size_t> batch_histogram(const MiniBatch& batch);

std::vector<Supervoxel> build_supervoxels(const FixedSample& sample, const CylGrid& grid, const SamplerConfig& cfg,
                                          const std::vector<std::size_t>& batch_histogram, std::uint64_t seed);

// Weighted sampling without replacement, proportional to weight. Candidates
// with zero weight are never drawn unless every weight is zero, in which case
// the draw falls back to uniform over all candidates.
std::vector<Supervoxel> sample_supervoxels(const std::vector<Supervoxel>& candidates, std::size_t k, std::uint64_t seed);

// Index-only variant used by the trainer and by the sampling statistics tests.
std::vector<std::size_t> sample_weighted_indices(std::span<const double> weights, std::size_t k, std::uint64_t seed);

}  // namespace srkd
