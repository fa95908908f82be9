#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace srkd {

// Row-major dense storage throughout; kernels are templated on the scalar so
// the same code runs for double (training) and long double (reference checks).
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVectorX = Eigen::Matrix<Scalar, 1, Eigen::Dynamic, Eigen::RowMajor>;

using Matrix = MatrixX<double>;
using Vector = VectorX<double>;
using RowVector = RowVectorX<double>;

using Label = std::uint16_t;
inline constexpr Label kIgnoreLabel = 255;

// true = real point / row, false = padding.
using Mask = std::vector<bool>;

enum class ErrorKind {
  Config,
  Data,
  Parse,
  Numeric,
  Shape,
  Tape,
  Pairing,
  UndefinedLoss,
  Io,
  MissingTeacher,
  GradCheck,
};

const char* to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline std::size_t count_valid(const Mask& mask) {
  std::size_t n = 0;
  for (bool m : mask) n += m ? 1 : 0;
  return n;
}

}  // namespace srkd
