#include "srkd/metrics.hpp"

#include <cmath>
#include <limits>

namespace srkd {

void to_json(nlohmann::json& j, const Metrics& m) {
  auto per_class = [](const std::vector<double>& v) {
    nlohmann::json arr = nlohmann::json::array();
    for (double x : v) arr.push_back(std::isnan(x) ? nlohmann::json(nullptr) : nlohmann::json(x));
    return arr;
  };
  j = nlohmann::json{{"mIoU", m.miou}, {"mAcc", m.macc}, {"allAcc", m.allacc}, {"iou", per_class(m.iou)},
                     {"recall", per_class(m.recall)}};
}

Confusion make_confusion(std::size_t n_classes) {
  const auto c = static_cast<Eigen::Index>(n_classes);
  return Confusion::Zero(c, c);
}

void accumulate(Confusion& confusion, std::span<const Label> predictions, std::span<const Label> labels, const Mask& mask) {
  if (predictions.size() != labels.size() || labels.size() != mask.size())
    throw Error(ErrorKind::Shape, "accumulate: prediction, label and mask lengths differ");
  const auto c = confusion.rows();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!mask[i] || labels[i] == kIgnoreLabel) continue;
    if (labels[i] >= c || predictions[i] >= c) throw Error(ErrorKind::Data, "accumulate: class index out of range");
    ++confusion(labels[i], predictions[i]);
  }
}

Metrics compute_metrics(const Confusion& confusion) {
  const auto c = confusion.rows();
  const double nan = std::numeric_limits<double>::quiet_NaN();
  Metrics m;
  m.confusion = confusion;
  m.iou.assign(static_cast<std::size_t>(c), nan);
  m.recall.assign(static_cast<std::size_t>(c), nan);
  const double total = static_cast<double>(confusion.sum());
  m.allacc = total > 0.0 ? static_cast<double>(confusion.trace()) / total : 0.0;

  double iou_sum = 0.0, acc_sum = 0.0;
  int present = 0;
  for (Eigen::Index k = 0; k < c; ++k) {
    const double gt = static_cast<double>(confusion.row(k).sum());
    if (gt == 0.0) continue;
    const double tp = static_cast<double>(confusion(k, k));
    const double pred = static_cast<double>(confusion.col(k).sum());
    m.iou[static_cast<std::size_t>(k)] = tp / (gt + pred - tp);
    m.recall[static_cast<std::size_t>(k)] = tp / gt;
    iou_sum += m.iou[static_cast<std::size_t>(k)];
    acc_sum += m.recall[static_cast<std::size_t>(k)];
    ++present;
  }
  if (present > 0) {
    m.miou = iou_sum / present;
    m.macc = acc_sum / present;
  }
  return m;
}

std::vector<Label> argmax_rows(const Matrix& logits) {
  std::vector<Label> out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    Eigen::Index best = 0;
    logits.row(r).maxCoeff(&best);
    out[static_cast<std::size_t>(r)] = static_cast<Label>(best);
  }
  return out;
}

}  // namespace srkd
