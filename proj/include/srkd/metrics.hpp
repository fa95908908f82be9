#pragma once

#include "srkd/types.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <span>
#include <vector>

namespace srkd {

// Row = ground truth, column = prediction.
using Confusion = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Per-class values are NaN for classes absent from the ground truth; those
// classes are skipped by the means.
struct Metrics {
  std::vector<double> iou;
  std::vector<double> recall;
  double miou = 0.0;
  double macc = 0.0;
  double allacc = 0.0;
  Confusion confusion;
};

void to_json(nlohmann::json& j, const Metrics& m);

Confusion make_confusion(std::size_t n_classes);

// Adds valid, labeled points to the confusion matrix.
void accumulate(Confusion& confusion, std::span<const Label> predictions, std::span<const Label> labels, const Mask& mask);

Metrics compute_metrics(const Confusion& confusion);

// Row-wise argmax.
std::vector<Label> argmax_rows(const Matrix& logits);

}  // namespace srkd
