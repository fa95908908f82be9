#include "srkd/optim.hpp"

#include <cmath>
#include <numbers>

namespace srkd {

AdamW::AdamW(AdamWConfig cfg, std::vector<std::pair<std::string, Matrix*>> params)
    : cfg_(cfg), params_(std::move(params)) {
  if (!(cfg_.beta1 >= 0.0 && cfg_.beta1 < 1.0) || !(cfg_.beta2 >= 0.0 && cfg_.beta2 < 1.0))
    throw Error(ErrorKind::Config, "AdamW betas must be in [0, 1)");
  if (!(cfg_.eps > 0.0)) throw Error(ErrorKind::Config, "AdamW eps must be positive");
  if (!(cfg_.weight_decay >= 0.0)) throw Error(ErrorKind::Config, "weight decay must be >= 0");
  for (const auto& [name, p] : params_) {
    m_.push_back(Matrix::Zero(p->rows(), p->cols()));
    v_.push_back(Matrix::Zero(p->rows(), p->cols()));
  }
}

void AdamW::step(const std::vector<std::pair<std::string, Matrix>>& grads, double lr) {
  if (grads.size() != params_.size()) throw Error(ErrorKind::Shape, "AdamW: gradient count != parameter count");
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& [name, p] = params_[i];
    const Matrix& g = grads[i].second;
    if (grads[i].first != name || g.rows() != p->rows() || g.cols() != p->cols())
      throw Error(ErrorKind::Shape, "AdamW: gradient for '" + grads[i].first + "' does not match '" + name + "'");
    if (cfg_.weight_decay != 0.0) *p *= (1.0 - lr * cfg_.weight_decay);
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    const auto m_hat = m_[i].array() / bc1;
    const auto v_hat = v_[i].array() / bc2;
    p->array() -= lr * m_hat / (v_hat.sqrt() + cfg_.eps);
  }
}

void OneCycleSchedule::validate() const {
  if (!(max_lr > 0.0)) throw Error(ErrorKind::Config, "learning rate must be positive");
  if (!(warmup_fraction > 0.0 && warmup_fraction < 1.0))
    throw Error(ErrorKind::Config, "warmup fraction must be in (0, 1)");
  if (!(div_factor > 0.0) || !(final_div_factor > 0.0)) throw Error(ErrorKind::Config, "div factors must be positive");
  if (total_steps < 1) throw Error(ErrorKind::Config, "schedule needs at least one step");
}

double OneCycleSchedule::lr(std::size_t step) const {
  const double initial = max_lr / div_factor;
  const double floor_lr = initial / final_div_factor;
  auto anneal = [](double start, double end, double pct) {
    return end + (start - end) / 2.0 * (std::cos(std::numbers::pi * pct) + 1.0);
  };
  const double warm_end = warmup_fraction * static_cast<double>(total_steps) - 1.0;
  const double last = static_cast<double>(total_steps) - 1.0;
  const double s = static_cast<double>(std::min(step, total_steps - 1));
  if (warm_end > 0.0 && s <= warm_end) return anneal(initial, max_lr, s / warm_end);
  const double span = last - std::max(warm_end, 0.0);
  if (span <= 0.0) return max_lr;
  return anneal(max_lr, floor_lr, (s - std::max(warm_end, 0.0)) / span);
}

}  // namespace srkd
