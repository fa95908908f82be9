#pragma once

#include "srkd/types.hpp"

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

namespace srkd {

// Adaptive-moment update with decoupled weight decay:
//   p <- p * (1 - lr * wd);  p <- p - lr * m_hat / (sqrt(v_hat) + eps)
struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

class AdamW {
 public:
  AdamW(AdamWConfig cfg, std::vector<std::pair<std::string, Matrix*>> params);

  // grads must list the same names in the same order as the parameters.
  void step(const std::vector<std::pair<std::string, Matrix>>& grads, double lr);

  std::size_t steps_taken() const noexcept { return t_; }

 private:
  AdamWConfig cfg_;
  std::vector<std::pair<std::string, Matrix*>> params_;
  std::vector<Matrix> m_, v_;
  std::size_t t_ = 0;
};

// Cosine one-cycle schedule: warm up from max_lr / div_factor to max_lr over the
// first warmup_fraction of steps, then anneal to max_lr / (div_factor * final_div_factor).
struct OneCycleSchedule {
  double max_lr = 0.006;
  std::size_t total_steps = 1;
  double warmup_fraction = 0.05;
  double div_factor = 10.0;
  double final_div_factor = 1000.0;

  void validate() const;
  double lr(std::size_t step) const;
};

}  // namespace srkd
