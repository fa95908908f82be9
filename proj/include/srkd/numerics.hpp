#pragma once

#include "srkd/types.hpp"

#include <cmath>
#include <functional>
#include <string>

namespace srkd {

inline constexpr double kKlFloor = 1e-12;    // floor on the second KL argument
inline constexpr double kNormFloor = 1e-12;  // floor on row norms before division

namespace detail {

template <typename Derived>
void require_finite(const Eigen::MatrixBase<Derived>& m, const char* op) {
  if (!m.allFinite()) throw Error(ErrorKind::Numeric, std::string(op) + ": non-finite input");
}

template <typename Scalar>
void require_positive_temperature(Scalar t, const char* op) {
  if (!(t > Scalar(0)) || !std::isfinite(static_cast<double>(t)))
    throw Error(ErrorKind::Numeric, std::string(op) + ": temperature must be positive and finite");
}

}  // namespace detail

// out[a,k] = exp(m[a,k]/T) / sum_k' exp(m[a,k']/T), with per-row max subtraction.
template <typename Derived>
MatrixX<typename Derived::Scalar> softmax_rows(const Eigen::MatrixBase<Derived>& m,
                                               typename Derived::Scalar temperature = 1) {
  using Scalar = typename Derived::Scalar;
  detail::require_finite(m, "softmax_rows");
  detail::require_positive_temperature(temperature, "softmax_rows");
  MatrixX<Scalar> out = m / temperature;
  for (Eigen::Index a = 0; a < out.rows(); ++a) {
    auto row = out.row(a);
    const Scalar shift = row.maxCoeff();
    row = (row.array() - shift).exp().matrix();
    row /= row.sum();
  }
  return out;
}

template <typename Derived>
MatrixX<typename Derived::Scalar> log_softmax_rows(const Eigen::MatrixBase<Derived>& m,
                                                   typename Derived::Scalar temperature = 1) {
  using Scalar = typename Derived::Scalar;
  detail::require_finite(m, "log_softmax_rows");
  detail::require_positive_temperature(temperature, "log_softmax_rows");
  MatrixX<Scalar> out = m / temperature;
  for (Eigen::Index a = 0; a < out.rows(); ++a) {
    auto row = out.row(a);
    const Scalar shift = row.maxCoeff();
    const Scalar lse = shift + std::log((row.array() - shift).exp().sum());
    row.array() -= lse;
  }
  return out;
}

// Per-row KL(p[a,:] || q[a,:]) in nats; 0 * log(0 / q) = 0 and q is floored at kKlFloor.
template <typename DerivedP, typename DerivedQ>
VectorX<typename DerivedP::Scalar> kl_per_row(const Eigen::MatrixBase<DerivedP>& p, const Eigen::MatrixBase<DerivedQ>& q) {
  using Scalar = typename DerivedP::Scalar;
  if (p.rows() != q.rows() || p.cols() != q.cols())
    throw Error(ErrorKind::Shape, "kl_rows: p is " + std::to_string(p.rows()) + "x" + std::to_string(p.cols()) +
                                      ", q is " + std::to_string(q.rows()) + "x" + std::to_string(q.cols()));
  detail::require_finite(p, "kl_rows");
  detail::require_finite(q, "kl_rows");
  VectorX<Scalar> out(p.rows());
  for (Eigen::Index a = 0; a < p.rows(); ++a) {
    const Scalar ps = p.row(a).sum(), qs = q.row(a).sum();
    if (std::abs(static_cast<double>(ps) - 1.0) > 1e-9 || std::abs(static_cast<double>(qs) - 1.0) > 1e-9 ||
        p.row(a).minCoeff() < Scalar(0) || q.row(a).minCoeff() < Scalar(0))
      throw Error(ErrorKind::Numeric, "kl_rows: row " + std::to_string(a) + " is not a probability vector");
    Scalar acc(0);
    for (Eigen::Index k = 0; k < p.cols(); ++k) {
      const Scalar pk = p(a, k);
      if (pk == Scalar(0)) continue;
      acc += pk * std::log(pk / std::max(q(a, k), Scalar(kKlFloor)));
    }
    out[a] = acc;
  }
  return out;
}

// Mean over rows of the per-row KL divergence.
template <typename DerivedP, typename DerivedQ>
typename DerivedP::Scalar kl_rows(const Eigen::MatrixBase<DerivedP>& p, const Eigen::MatrixBase<DerivedQ>& q) {
  const auto per_row = kl_per_row(p, q);
  return per_row.size() == 0 ? typename DerivedP::Scalar(0) : per_row.mean();
}

// Each row divided by max(||row||_2, kNormFloor); zero rows stay zero.
template <typename Derived>
MatrixX<typename Derived::Scalar> l2_normalize_rows(const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  MatrixX<Scalar> out = m;
  for (Eigen::Index a = 0; a < out.rows(); ++a) out.row(a) /= std::max(out.row(a).norm(), Scalar(kNormFloor));
  return out;
}

// Central differences (f(x + h e_k) - f(x - h e_k)) / 2h for every coordinate k.
Vector finite_diff_gradient(const std::function<double(const Vector&)>& f, const Vector& theta, double h = 1e-5);

// Same, restricted to the listed coordinates; entry i of the result belongs to coords[i].
Vector finite_diff_gradient(const std::function<double(const Vector&)>& f, const Vector& theta,
                            const std::vector<Eigen::Index>& coords, double h = 1e-5);

// |a - b| / max(|a|, |b|, floor); the floor keeps near-zero components from
// turning roundoff into large relative errors.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

}  // namespace srkd
