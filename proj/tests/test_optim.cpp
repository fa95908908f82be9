#include "srkd/optim.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace srkd;

namespace {

using Grads = std::vector<std::pair<std::string, Matrix>>;

// Textbook Adam followed by decoupled decay, written out per element.
struct ReferenceAdamW {
  double b1, b2, eps, wd;
  std::vector<double> m, v;
  int t = 0;
  void step(std::vector<double>& p, const std::vector<double>& g, double lr) {
    if (m.empty()) m.assign(p.size(), 0.0), v.assign(p.size(), 0.0);
    ++t;
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (wd != 0) p[i] *= 1 - lr * wd;
      m[i] = b1 * m[i] + (1 - b1) * g[i];
      v[i] = b2 * v[i] + (1 - b2) * (g[i] * g[i]);
      const double mh = m[i] / (1 - std::pow(b1, t)), vh = v[i] / (1 - std::pow(b2, t));
      p[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
  }
};

}  // namespace

TEST(AdamW, ZeroLearningRateLeavesParameters) {
  Rng rng(1);
  Matrix p = testutil::random_matrix(rng, 3, 4);
  const Matrix p0 = p;
  AdamW opt({}, {{"p", &p}});
  for (int i = 0; i < 5; ++i) opt.step({{"p", testutil::random_matrix(rng, 3, 4)}}, 0.0);
  EXPECT_EQ(p, p0);
  EXPECT_EQ(opt.steps_taken(), 5u);
}

TEST(AdamW, MatchesReference) {
  Rng rng(2);
  for (double wd : {0.0, 0.05}) {
    Matrix p = testutil::random_matrix(rng, 2, 3);
    std::vector<double> ref(p.data(), p.data() + p.size());
    AdamW opt({0.9, 0.999, 1e-8, wd}, {{"p", &p}});
    ReferenceAdamW r{0.9, 0.999, 1e-8, wd, {}, {}};
    for (int s = 0; s < 20; ++s) {
      const Matrix g = testutil::random_matrix(rng, 2, 3);
      const double lr = 0.01 * (1 + s % 3);
      opt.step({{"p", g}}, lr);
      r.step(ref, std::vector<double>(g.data(), g.data() + g.size()), lr);
    }
    for (Eigen::Index i = 0; i < p.size(); ++i) EXPECT_NEAR(p.data()[i], ref[static_cast<std::size_t>(i)], 1e-14);
  }
}

TEST(AdamW, ZeroDecayIsBitwisePlainAdam) {
  Rng rng(3);
  Matrix p = testutil::random_matrix(rng, 4, 4);
  std::vector<double> ref(p.data(), p.data() + p.size());
  AdamW opt({0.9, 0.999, 1e-8, 0.0}, {{"p", &p}});
  ReferenceAdamW plain{0.9, 0.999, 1e-8, 0.0, {}, {}};
  for (int s = 0; s < 10; ++s) {
    const Matrix g = testutil::random_matrix(rng, 4, 4);
    opt.step({{"p", g}}, 0.003);
    plain.step(ref, std::vector<double>(g.data(), g.data() + g.size()), 0.003);
  }
  for (Eigen::Index i = 0; i < p.size(); ++i) EXPECT_EQ(p.data()[i], ref[static_cast<std::size_t>(i)]);
}

TEST(AdamW, DecayShrinksWithZeroGradient) {
  Matrix p = Matrix::Constant(1, 1, 2.0);
  AdamW opt({0.9, 0.999, 1e-8, 0.5}, {{"p", &p}});
  opt.step({{"p", Matrix::Zero(1, 1)}}, 0.1);
  EXPECT_NEAR(p(0, 0), 2.0 * (1 - 0.05), 1e-15);
}

TEST(AdamW, RejectsMismatchedGradients) {
  Matrix p = Matrix::Zero(2, 2);
  AdamW opt({}, {{"p", &p}});
  EXPECT_EQ(testutil::error_kind_of([&] { opt.step({{"q", Matrix::Zero(2, 2)}}, 0.1); }), ErrorKind::Shape);
  EXPECT_EQ(testutil::error_kind_of([&] { opt.step({{"p", Matrix::Zero(1, 2)}}, 0.1); }), ErrorKind::Shape);
}

TEST(OneCycle, EndpointsAndPeak) {
  OneCycleSchedule s{0.006, 100, 0.1, 10, 1000};
  EXPECT_NEAR(s.lr(0), 0.0006, 1e-15);
  EXPECT_NEAR(s.lr(s.total_steps - 1), 0.006 / 10 / 1000, 1e-15);
  double peak = 0;
  for (std::size_t i = 0; i < s.total_steps; ++i) peak = std::max(peak, s.lr(i));
  EXPECT_NEAR(peak, 0.006, 1e-6);
}

TEST(OneCycle, WarmupRisesThenAnnealDecreases) {
  OneCycleSchedule s{0.01, 200, 0.25, 25, 1e4};
  for (std::size_t i = 1; i < 200; ++i) {
    if (i < 49) EXPECT_GT(s.lr(i), s.lr(i - 1)) << i;
    if (i > 50) EXPECT_LT(s.lr(i), s.lr(i - 1)) << i;
  }
}

TEST(OneCycle, RejectsBadConfig) {
  EXPECT_EQ(testutil::error_kind_of([] { OneCycleSchedule{0.0, 10, 0.1, 10, 10}.validate(); }), ErrorKind::Config);
  EXPECT_EQ(testutil::error_kind_of([] { OneCycleSchedule{0.1, 10, 1.0, 10, 10}.validate(); }), ErrorKind::Config);
  EXPECT_EQ(testutil::error_kind_of([] { OneCycleSchedule{0.1, 0, 0.1, 10, 10}.validate(); }), ErrorKind::Config);
}
