#include "srkd/voxelizer.hpp"

#include "srkd/rng.hpp"

#include <algorithm>
#include <map>
#include <numeric>

namespace srkd {

void CylGrid::validate() const {
  auto bad = [](const char* what) { throw Error(ErrorKind::Config, std::string("grid: ") + what); };
  if (!(radial_extent > 0.0) || !(angular_extent > 0.0) || !(height_extent > 0.0)) bad("extents must be positive");
  if (angular_extent > 2.0 * std::numbers::pi + 1e-12) bad("angular extent exceeds 2*pi");
  if (!(radial_cell > 0.0 && radial_cell <= radial_extent)) bad("radial cell must be in (0, R]");
  if (!(angular_cell > 0.0 && angular_cell <= angular_extent)) bad("angular cell must be in (0, A]");
  if (!(height_cell > 0.0 && height_cell <= height_extent)) bad("height cell must be in (0, H]");
  if (!std::isfinite(height_origin)) bad("height origin must be finite");
}

std::size_t CylGrid::radial_cells() const { return static_cast<std::size_t>(std::ceil(radial_extent / radial_cell)); }
std::size_t CylGrid::angular_cells() const { return static_cast<std::size_t>(std::ceil(angular_extent / angular_cell)); }
std::size_t CylGrid::height_cells() const { return static_cast<std::size_t>(std::ceil(height_extent / height_cell)); }

std::size_t voxel_count(const CylGrid& grid) {
  grid.validate();
  return grid.radial_cells() * grid.angular_cells() * grid.height_cells();
}

namespace {

int clamp_index(double coord, double cell, std::size_t count) {
  const double f = std::floor(coord / cell);
  if (!(f > 0.0)) return 0;
  return static_cast<int>(std::min<double>(f, static_cast<double>(count - 1)));
}

int fine_index(double coord, double origin, double cell, std::size_t sub_div) {
  const double frac = std::clamp((coord - origin) / cell, 0.0, 1.0);
  return std::min(static_cast<int>(frac * static_cast<double>(sub_div)), static_cast<int>(sub_div) - 1);
}

// Uniform subset of size n from [0, count), kept in ascending order.
std::vector<std::size_t> subset_sorted(std::size_t count, std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(count);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (count <= n) return idx;
  for (std::size_t i = 0; i < n; ++i) std::swap(idx[i], idx[i + rng.below(count - i)]);
  idx.resize(n);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

CellIndex cell_of(const CylGrid& grid, double r, double a, double h) {
  return {clamp_index(r, grid.radial_cell, grid.radial_cells()), clamp_index(a, grid.angular_cell, grid.angular_cells()),
          clamp_index(h - grid.height_origin, grid.height_cell, grid.height_cells())};
}

double tau_class(std::span<const Label> member_labels, const std::vector<std::size_t>& batch_histogram) {
  if (member_labels.empty()) throw Error(ErrorKind::Data, "tau_class: empty supervoxel");
  std::vector<std::size_t> local(batch_histogram.size(), 0);
  for (Label l : member_labels)
    if (l != kIgnoreLabel && l < local.size()) ++local[l];
  const std::size_t total = std::accumulate(batch_histogram.begin(), batch_histogram.end(), std::size_t{0});
  const auto majority = std::max_element(local.begin(), local.end());
  if (total == 0 || majority == local.end() || *majority == 0) return 0.0;
  const std::size_t current = batch_histogram[static_cast<std::size_t>(majority - local.begin())];
  return 1.0 - static_cast<double>(current) / static_cast<double>(total);
}

double supervoxel_weight(double tau, double outer_distance, const CylGrid& grid) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw Error(ErrorKind::Numeric, "supervoxel_weight: tau outside [0, 1]");
  if (!(outer_distance >= 0.0 && outer_distance <= grid.radial_extent))
    throw Error(ErrorKind::Numeric, "supervoxel_weight: D_i outside [0, R]");
  return (tau / static_cast<double>(voxel_count(grid))) * (outer_distance / grid.radial_extent);
}

std::vector<std::size_t> batch_histogram(const MiniBatch& batch) {
  std::vector<std::size_t> hist;
  for (const auto& sample : batch.samples) {
    const auto h = class_histogram(sample.cloud);
    if (hist.empty()) hist.assign(h.size(), 0);
    for (std::size_t c = 0; c < h.size() && c < hist.size(); ++c) hist[c] += h[c];
  }
  return hist;
}

std::vector<Supervoxel> build_supervoxels(const FixedSample& sample, const CylGrid& grid, const SamplerConfig& cfg,
                                          const std::vector<std::size_t>& histogram, std::uint64_t seed) {
  grid.validate();
  cfg.validate();
  const Matrix cyl = to_cylindrical(sample.cloud.positions);
  const std::size_t n_a = grid.angular_cells(), n_h = grid.height_cells();

  // Ordered by flat cell id so the output is deterministic.
  std::map<std::size_t, std::vector<int>> cells;
  for (Eigen::Index i = 0; i < cyl.rows(); ++i) {
    if (!sample.validity[static_cast<std::size_t>(i)]) continue;
    const CellIndex c = cell_of(grid, cyl(i, 0), cyl(i, 1), cyl(i, 2));
    const std::size_t flat = (static_cast<std::size_t>(c.radial) * n_a + c.angular) * n_h + c.height;
    cells[flat].push_back(static_cast<int>(i));
  }

  const Matrix& features = sample.cloud.features;
  const auto sd = cfg.sub_div;
  std::vector<Supervoxel> out;
  out.reserve(cells.size());
  for (const auto& [flat, members] : cells) {
    Supervoxel sv;
    const auto r0 = cyl(members.front(), 0), a0 = cyl(members.front(), 1), h0 = cyl(members.front(), 2);
    sv.cell = cell_of(grid, r0, a0, h0);
    sv.members = members;
    sv.outer_distance = std::min((sv.cell.radial + 1) * grid.radial_cell, grid.radial_extent);

    std::vector<Label> labels;
    labels.reserve(members.size());
    for (int m : members) labels.push_back(sample.cloud.labels[static_cast<std::size_t>(m)]);
    sv.tau = tau_class(labels, histogram);
    sv.weight = supervoxel_weight(sv.tau, sv.outer_distance, grid);

    Rng rng(derive_seed(seed, {flat}));
    const auto keep = subset_sorted(members.size(), cfg.n_point, rng);
    sv.point_rows.assign(cfg.n_point, -1);
    sv.point_mask.assign(cfg.n_point, false);
    for (std::size_t i = 0; i < keep.size(); ++i) {
      sv.point_rows[i] = members[keep[i]];
      sv.point_mask[i] = true;
    }

    // Fine voxels: sub_div^3 subdivision of the coarse cell.
    const double r_lo = sv.cell.radial * grid.radial_cell;
    const double a_lo = sv.cell.angular * grid.angular_cell;
    const double h_lo = grid.height_origin + sv.cell.height * grid.height_cell;
    std::map<int, std::vector<int>> fine;
    for (int m : members) {
      const int fr = fine_index(cyl(m, 0), r_lo, grid.radial_cell, sd);
      const int fa = fine_index(cyl(m, 1), a_lo, grid.angular_cell, sd);
      const int fh = fine_index(cyl(m, 2), h_lo, grid.height_cell, sd);
      fine[(fr * static_cast<int>(sd) + fa) * static_cast<int>(sd) + fh].push_back(m);
    }
    std::vector<std::vector<int>> groups;
    groups.reserve(fine.size());
    for (auto& [id, g] : fine) groups.push_back(std::move(g));
    const auto keep_vox = subset_sorted(groups.size(), cfg.n_voxel, rng);
    sv.voxel_groups.assign(cfg.n_voxel, {});
    sv.voxel_mask.assign(cfg.n_voxel, false);
    for (std::size_t i = 0; i < keep_vox.size(); ++i) {
      sv.voxel_groups[i] = groups[keep_vox[i]];
      sv.voxel_mask[i] = true;
    }

    sv.point_features = Matrix::Zero(static_cast<Eigen::Index>(cfg.n_point), features.cols());
    for (std::size_t i = 0; i < cfg.n_point; ++i)
      if (sv.point_rows[i] >= 0) sv.point_features.row(static_cast<Eigen::Index>(i)) = features.row(sv.point_rows[i]);
    sv.voxel_features = Matrix::Zero(static_cast<Eigen::Index>(cfg.n_voxel), features.cols());
    for (std::size_t i = 0; i < cfg.n_voxel; ++i) {
      const auto& g = sv.voxel_groups[i];
      if (g.empty()) continue;
      auto row = sv.voxel_features.row(static_cast<Eigen::Index>(i));
      for (int m : g) row += features.row(m);
      row /= static_cast<double>(g.size());
    }
    out.push_back(std::move(sv));
  }
  return out;
}

std::vector<std::size_t> sample_weighted_indices(std::span<const double> weights, std::size_t k, std::uint64_t seed) {
  if (k < 1) throw Error(ErrorKind::Config, "sample_supervoxels: K must be >= 1");
  for (double w : weights)
    if (!(w >= 0.0) || !std::isfinite(w)) throw Error(ErrorKind::Numeric, "sample_supervoxels: invalid weight");

  Rng rng(seed);
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < weights.size(); ++i)
    if (weights[i] > 0.0) pool.push_back(i);

  std::vector<std::size_t> chosen;
  if (pool.empty()) {
    pool.resize(weights.size());
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    while (!pool.empty() && chosen.size() < k) {
      const auto pick = rng.below(pool.size());
      chosen.push_back(pool[pick]);
      pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(pick));
    }
    return chosen;
  }

  while (!pool.empty() && chosen.size() < k) {
    double total = 0.0;
    for (auto i : pool) total += weights[i];
    double u = rng.uniform() * total;
    std::size_t pick = pool.size() - 1;
    for (std::size_t j = 0; j < pool.size(); ++j) {
      u -= weights[pool[j]];
      if (u < 0.0) {
        pick = j;
        break;
      }
    }
    chosen.push_back(pool[pick]);
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(pick));
  }
  return chosen;
}

std::vector<Supervoxel> sample_supervoxels(const std::vector<Supervoxel>& candidates, std::size_t k, std::uint64_t seed) {
  std::vector<double> weights;
  weights.reserve(candidates.size());
  for (const auto& sv : candidates) weights.push_back(sv.weight);
  std::vector<Supervoxel> out;
  for (auto i : sample_weighted_indices(weights, k, seed)) out.push_back(candidates[i]);
  return out;
}

void SamplerConfig::validate() const {
  if (k < 1) throw Error(ErrorKind::Config, "sampler: K must be >= 1");
  if (n_point < 2 || n_voxel < 2) throw Error(ErrorKind::Config, "sampler: n_point and n_voxel must be >= 2");
  if (sub_div < 1) throw Error(ErrorKind::Config, "sampler: sub_div must be >= 1");
}

}  // namespace srkd
