#include "srkd/autodiff.hpp"
#include "srkd/numerics.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <functional>

using namespace srkd;

namespace {

using Op = std::function<ad::Var(ad::Var, ad::Var)>;

// Reduces op(a, b) to a scalar with fixed random weights and compares the
// tape gradient of `a` and `b` against central differences.
void check_op(const Op& op, Matrix a0, Matrix b0, std::uint64_t seed, double tol = 1e-6) {
  Rng rng(seed);
  Matrix w;
  auto eval = [&](const Matrix& a, const Matrix& b) {
    ad::Tape tape;
    const ad::Var out = op(tape.variable(a), tape.variable(b));
    if (w.size() == 0) w = testutil::random_matrix(rng, out.rows(), out.cols());
    return ad::weighted_sum(out, w).scalar();
  };
  eval(a0, b0);

  ad::Tape tape;
  const ad::Var a = tape.variable(a0), b = tape.variable(b0);
  const ad::Var loss = ad::weighted_sum(op(a, b), w);
  tape.backward(loss);
  const Matrix ga = tape.grad(a), gb = tape.grad(b);

  auto flat_check = [&](Matrix& target, const Matrix& analytic, const char* which) {
    for (Eigen::Index k = 0; k < target.size(); ++k) {
      const double keep = target.data()[k];
      target.data()[k] = keep + 1e-6;
      const double up = eval(a0, b0);
      target.data()[k] = keep - 1e-6;
      const double down = eval(a0, b0);
      target.data()[k] = keep;
      const double fd = (up - down) / 2e-6;
      EXPECT_LE(std::abs(fd - analytic.data()[k]), tol * std::max(1.0, std::abs(fd))) << which << "[" << k << "]";
    }
  };
  flat_check(a0, ga, "a");
  flat_check(b0, gb, "b");
}

}  // namespace

TEST(Autodiff, BinaryOpGradients) {
  Rng rng(1);
  auto m = [&](Eigen::Index r, Eigen::Index c) { return testutil::random_matrix(rng, r, c); };
  check_op([](ad::Var a, ad::Var b) { return ad::matmul(a, b); }, m(3, 4), m(4, 2), 1);
  check_op([](ad::Var a, ad::Var b) { return ad::matmul_nt(a, b); }, m(3, 4), m(5, 4), 2);
  check_op([](ad::Var a, ad::Var b) { return ad::add(a, b); }, m(3, 4), m(3, 4), 3);
  check_op([](ad::Var a, ad::Var b) { return ad::sub(a, b); }, m(3, 4), m(3, 4), 4);
  check_op([](ad::Var a, ad::Var b) { return ad::mul(a, b); }, m(3, 4), m(3, 4), 5);
  check_op([](ad::Var a, ad::Var b) { return ad::add_row(a, b); }, m(3, 4), m(1, 4), 6);
  check_op([](ad::Var a, ad::Var b) { return ad::concat_cols(a, b); }, m(3, 4), m(3, 2), 7);
}

TEST(Autodiff, UnaryOpGradients) {
  Rng rng(2);
  const Matrix x = testutil::random_matrix(rng, 4, 5);
  const Matrix pos = x.array().abs() + 0.5;
  const Matrix unused = Matrix::Zero(1, 1);
  auto unary = [&](std::function<ad::Var(ad::Var)> f, const Matrix& in, std::uint64_t seed) {
    check_op([f](ad::Var a, ad::Var) { return f(a); }, in, unused, seed);
  };
  unary([](ad::Var a) { return ad::scale(a, -2.5); }, x, 10);
  unary([](ad::Var a) { return ad::tanh(a); }, x, 11);
  unary([](ad::Var a) { return ad::square(a); }, x, 12);
  unary([](ad::Var a) { return ad::log(a); }, pos, 13);
  unary([](ad::Var a) { return ad::sum(a); }, x, 14);
  unary([](ad::Var a) { return ad::mean(a); }, x, 15);
  unary([](ad::Var a) { return ad::softmax_rows(a, 0.7); }, x, 16);
  unary([](ad::Var a) { return ad::log_softmax_rows(a, 2.0); }, x, 17);
  unary([](ad::Var a) { return ad::l2_normalize_rows(a); }, x, 18);
  unary([](ad::Var a) { return ad::gather_rows(a, {3, -1, 0, 3, 1}); }, x, 19);
  unary([](ad::Var a) { return ad::group_mean(a, {{0, 2}, {}, {1, 1, 3}}); }, x, 20);
  unary([](ad::Var a) { return ad::mask_rows(a, {true, false, true, false}); }, x, 21);
  unary([](ad::Var a) { return ad::pairwise_sqdist(a); }, x, 22);
}

TEST(Autodiff, ChainAndFanOut) {
  Rng rng(3);
  const Matrix x0 = testutil::random_matrix(rng, 3, 3);
  check_op(
      [](ad::Var a, ad::Var b) {
        const ad::Var h = ad::tanh(ad::matmul(a, b));
        return ad::add(ad::mul(h, h), ad::softmax_rows(ad::matmul_nt(h, a)));
      },
      x0, testutil::random_matrix(rng, 3, 3), 30);
}

TEST(Autodiff, ForwardValues) {
  ad::Tape tape;
  Matrix a(2, 2);
  a << 1, 2, 3, 4;
  const ad::Var v = tape.constant(a);
  EXPECT_EQ(ad::sum(v).scalar(), 10.0);
  EXPECT_EQ(ad::mean(v).scalar(), 2.5);
  const Matrix d = ad::pairwise_sqdist(v).value();
  EXPECT_EQ(d(0, 1), 8.0);
  EXPECT_EQ(d(1, 1), 0.0);
  EXPECT_TRUE(ad::softmax_rows(v).value().isApprox(softmax_rows(a), 1e-15));
  EXPECT_TRUE(ad::gather_rows(v, {-1}).value().isZero(0));
}

TEST(Autodiff, UnusedParametersGetZeroGradient) {
  ad::Tape tape;
  const ad::Var p = tape.parameter("p", Matrix::Ones(2, 2));
  const ad::Var q = tape.parameter("q", Matrix::Ones(1, 3));
  tape.backward(ad::sum(ad::square(p)));
  const auto grads = tape.parameter_gradients();
  ASSERT_EQ(grads.size(), 2u);
  EXPECT_EQ(grads[0].first, "p");
  EXPECT_TRUE(grads[0].second.isApprox(Matrix::Constant(2, 2, 2.0)));
  EXPECT_EQ(grads[1].first, "q");
  EXPECT_TRUE(grads[1].second.isZero(0));
  EXPECT_EQ(grads[1].second.cols(), 3);
  EXPECT_TRUE(tape.grad(q).isZero(0));
}

TEST(Autodiff, ConstantsCarryNoGradient) {
  ad::Tape tape;
  const ad::Var c = tape.constant(Matrix::Ones(2, 2));
  EXPECT_FALSE(tape.requires_grad(ad::tanh(c)));
  const ad::Var v = tape.variable(Matrix::Ones(2, 2));
  EXPECT_TRUE(tape.requires_grad(ad::mul(c, v)));
}

TEST(Autodiff, ShapeErrors) {
  ad::Tape tape;
  const ad::Var a = tape.variable(Matrix::Ones(2, 3));
  EXPECT_EQ(testutil::error_kind_of([&] { ad::matmul(a, a); }), ErrorKind::Shape);
  EXPECT_EQ(testutil::error_kind_of([&] { ad::add(a, tape.variable(Matrix::Ones(3, 2))); }), ErrorKind::Shape);
  EXPECT_EQ(testutil::error_kind_of([&] { ad::gather_rows(a, {5}); }), ErrorKind::Shape);
  EXPECT_EQ(testutil::error_kind_of([&] { tape.backward(a); }), ErrorKind::Tape);
}

TEST(Autodiff, CrossTapeUseIsRejected) {
  ad::Tape t1, t2;
  const ad::Var a = t1.variable(Matrix::Ones(2, 2));
  const ad::Var b = t2.variable(Matrix::Ones(2, 2));
  EXPECT_THROW(ad::add(a, b), Error);
}
