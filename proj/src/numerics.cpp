#include "srkd/numerics.hpp"

namespace srkd {

Vector finite_diff_gradient(const std::function<double(const Vector&)>& f, const Vector& theta,
                            const std::vector<Eigen::Index>& coords, double h) {
  if (!(h > 0.0)) throw Error(ErrorKind::Numeric, "finite_diff_gradient: step must be positive");
  Vector grad(static_cast<Eigen::Index>(coords.size()));
  Vector probe = theta;
  for (std::size_t i = 0; i < coords.size(); ++i) {
    const Eigen::Index k = coords[i];
    if (k < 0 || k >= theta.size()) throw Error(ErrorKind::Shape, "finite_diff_gradient: coordinate out of range");
    const double saved = probe[k];
    probe[k] = saved + h;
    const double up = f(probe);
    probe[k] = saved - h;
    const double down = f(probe);
    probe[k] = saved;
    if (!std::isfinite(up) || !std::isfinite(down))
      throw Error(ErrorKind::Numeric, "finite_diff_gradient: non-finite evaluation at coordinate " + std::to_string(k));
    grad[static_cast<Eigen::Index>(i)] = (up - down) / (2.0 * h);
  }
  return grad;
}

Vector finite_diff_gradient(const std::function<double(const Vector&)>& f, const Vector& theta, double h) {
  std::vector<Eigen::Index> coords(static_cast<std::size_t>(theta.size()));
  for (Eigen::Index k = 0; k < theta.size(); ++k) coords[static_cast<std::size_t>(k)] = k;
  return finite_diff_gradient(f, theta, coords, h);
}

}  // namespace srkd
