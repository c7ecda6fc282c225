#include <cmath>
#include <limits>
#include <random>

#include <gtest/gtest.h>

#include "qtn/gradcheck.hpp"
#include "qtn/ops.hpp"
#include "test_util.hpp"

namespace qtn {
namespace {

using test::random_tensor;

// Direct seven-loop cross-correlation with zero padding.
Tensor<double> naive_conv(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>* b) {
  const Shape xs = x.shape();
  const Shape ws = w.shape();
  const long pad = static_cast<long>(ws.h / 2);
  Tensor<double> y(xs.n, ws.n, xs.h, xs.w);
  for (std::size_t n = 0; n < xs.n; ++n)
    for (std::size_t o = 0; o < ws.n; ++o)
      for (std::size_t i = 0; i < xs.h; ++i)
        for (std::size_t j = 0; j < xs.w; ++j) {
          double acc = b ? (*b)[o] : 0.0;
          for (std::size_t c = 0; c < xs.c; ++c)
            for (std::size_t ky = 0; ky < ws.h; ++ky)
              for (std::size_t kx = 0; kx < ws.w; ++kx) {
                const long yy = static_cast<long>(i + ky) - pad;
                const long xx = static_cast<long>(j + kx) - pad;
                if (yy < 0 || xx < 0 || yy >= static_cast<long>(xs.h) || xx >= static_cast<long>(xs.w)) continue;
                acc += x.at(n, c, yy, xx) * w.at(o, c, ky, kx);
              }
          y.at(n, o, i, j) = acc;
        }
  return y;
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  EXPECT_EQ(a.shape(), b.shape());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double dot(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

TEST(Conv2d, MatchesDirectLoops) {
  std::mt19937_64 rng(1);
  for (std::size_t k : {1, 3, 5}) {
    const auto x = random_tensor<double>({2, 3, 7, 6}, rng);
    const auto w = random_tensor<double>({4, 3, k, k}, rng);
    const auto b = random_tensor<double>({1, 4, 1, 1}, rng);
    EXPECT_LT(max_abs_diff(conv2d(x, w, &b), naive_conv(x, w, &b)), 1e-12) << "k=" << k;
    EXPECT_LT(max_abs_diff(conv2d<double>(x, w, nullptr), naive_conv(x, w, nullptr)), 1e-12);
  }
}

TEST(Conv2d, TiledColumnsMatchDirectLoops) {
  // 200 * 25 * 1000 column entries per output row exceed the tile budget,
  // so every row is its own tile.
  std::mt19937_64 rng(2);
  const auto x = random_tensor<double>({1, 200, 3, 1000}, rng);
  const auto w = random_tensor<double>({2, 200, 5, 5}, rng);
  EXPECT_LT(max_abs_diff(conv2d<double>(x, w, nullptr), naive_conv(x, w, nullptr)), 1e-10);
}

TEST(Conv2d, IsLinearInTheInput) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    const auto x = random_tensor<double>({2, 4, 8, 8}, rng);
    const auto y = random_tensor<double>({2, 4, 8, 8}, rng);
    const auto w = random_tensor<double>({3, 4, 5, 5}, rng);
    const double a = 1.7;
    const double b = -0.6;
    Tensor<double> mix(x.shape());
    for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = a * x[i] + b * y[i];
    const auto lhs = conv2d<double>(mix, w, nullptr);
    const auto cx = conv2d<double>(x, w, nullptr);
    const auto cy = conv2d<double>(y, w, nullptr);
    for (std::size_t i = 0; i < lhs.size(); ++i) EXPECT_NEAR(lhs[i], a * cx[i] + b * cy[i], 1e-10);
  }
}

TEST(Conv2d, RejectsBadShapes) {
  Tensor<double> x(1, 2, 4, 4);
  EXPECT_THROW(conv2d<double>(x, Tensor<double>(1, 2, 2, 2), nullptr), ShapeError);
  EXPECT_THROW(conv2d<double>(x, Tensor<double>(1, 3, 3, 3), nullptr), ShapeError);
  const auto bias = Tensor<double>::vector(2);
  EXPECT_THROW(conv2d<double>(x, Tensor<double>(1, 2, 3, 3), &bias), ShapeError);
}

TEST(Conv2d, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(4);
  for (std::size_t k : {1, 3}) {
    auto x = random_tensor<double>({2, 3, 5, 4}, rng);
    auto w = random_tensor<double>({2, 3, k, k}, rng);
    auto b = random_tensor<double>({1, 2, 1, 1}, rng);
    const auto r = random_tensor<double>({2, 2, 5, 4}, rng);
    auto loss = [&] { return dot(conv2d(x, w, &b), r); };
    const ConvGrads<double> g = conv2d_backward(x, w, true, r);
    EXPECT_LT(finite_diff_check(loss, x.span(), g.input.span(), 1e-6).max_rel_error, 1e-8);
    EXPECT_LT(finite_diff_check(loss, w.span(), g.weight.span(), 1e-6).max_rel_error, 1e-8);
    EXPECT_LT(finite_diff_check(loss, b.span(), g.bias.span(), 1e-6).max_rel_error, 1e-8);
  }
}

TEST(Conv2d, BackwardWithoutBiasOrInputGradient) {
  std::mt19937_64 rng(5);
  const auto x = random_tensor<double>({1, 2, 4, 4}, rng);
  const auto w = random_tensor<double>({3, 2, 3, 3}, rng);
  const auto g = conv2d_backward(x, w, false, Tensor<double>(1, 3, 4, 4, 1.0), false);
  EXPECT_TRUE(g.input.empty());
  EXPECT_TRUE(g.bias.empty());
  EXPECT_EQ(g.weight.shape(), w.shape());
  EXPECT_THROW(conv2d_backward(x, w, false, Tensor<double>(1, 3, 4, 5)), ShapeError);
}

// ---------------------------------------------------------------------------

TEST(BatchNorm, TrainModeNormalizesAndUpdatesRunningStats) {
  std::mt19937_64 rng(6);
  const auto x = random_tensor<double>({3, 2, 4, 5}, rng, -2.0, 5.0);
  Tensor<double> gamma = Tensor<double>::vector(2, 1.0);
  Tensor<double> beta = Tensor<double>::vector(2, 0.0);
  Tensor<double> rm = Tensor<double>::vector(2, 0.0);
  Tensor<double> rv = Tensor<double>::vector(2, 1.0);
  const auto y = batch_norm(x, gamma, beta, Mode::kTrain, rm, rv, {});
  const double m = 3.0 * 20.0;
  for (std::size_t c = 0; c < 2; ++c) {
    double mean = 0.0;
    double xmean = 0.0;
    for (std::size_t n = 0; n < 3; ++n)
      for (std::size_t i = 0; i < 20; ++i) {
        mean += y.plane(n, c)[i];
        xmean += x.plane(n, c)[i];
      }
    mean /= m;
    xmean /= m;
    double var = 0.0;
    double xss = 0.0;
    for (std::size_t n = 0; n < 3; ++n)
      for (std::size_t i = 0; i < 20; ++i) {
        var += (y.plane(n, c)[i] - mean) * (y.plane(n, c)[i] - mean);
        xss += (x.plane(n, c)[i] - xmean) * (x.plane(n, c)[i] - xmean);
      }
    var /= m;
    EXPECT_NEAR(mean, 0.0, 1e-12);
    const double xvar = xss / m;
    EXPECT_NEAR(var, xvar / (xvar + 1e-5), 1e-12);
    EXPECT_NEAR(rm[c], 0.1 * xmean, 1e-12);
    EXPECT_NEAR(rv[c], 0.9 + 0.1 * xss / (m - 1.0), 1e-12);
  }
}

TEST(BatchNorm, InferModeUsesRunningStats) {
  Tensor<double> x(1, 1, 1, 3);
  x[0] = 1.0;
  x[1] = 2.0;
  x[2] = 3.0;
  auto gamma = Tensor<double>::vector(1, 2.0);
  auto beta = Tensor<double>::vector(1, 0.5);
  auto rm = Tensor<double>::vector(1, 2.0);
  auto rv = Tensor<double>::vector(1, 4.0);
  const auto y = batch_norm(x, gamma, beta, Mode::kInfer, rm, rv, {});
  const double s = std::sqrt(4.0 + 1e-5);
  EXPECT_NEAR(y[0], 2.0 * (-1.0) / s + 0.5, 1e-15);
  EXPECT_NEAR(y[2], 2.0 * (1.0) / s + 0.5, 1e-15);
  EXPECT_EQ(rm[0], 2.0);
  EXPECT_EQ(rv[0], 4.0);
}

TEST(BatchNorm, IdentityOnStandardizedChannel) {
  Tensor<double> x(1, 1, 1, 4);
  const double v[] = {-1.0, 1.0, -1.0, 1.0};  // mean 0, biased variance 1
  for (int i = 0; i < 4; ++i) x[i] = v[i];
  auto gamma = Tensor<double>::vector(1, 1.0);
  auto beta = Tensor<double>::vector(1, 0.0);
  auto rm = Tensor<double>::vector(1, 0.0);
  auto rv = Tensor<double>::vector(1, 1.0);
  const auto y = batch_norm(x, gamma, beta, Mode::kTrain, rm, rv, {});
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(y[i], v[i] / std::sqrt(1.0 + 1e-5), 1e-15);
}

TEST(BatchNorm, EmptyRunningStats) {
  std::mt19937_64 rng(7);
  const auto x = random_tensor<double>({2, 2, 3, 3}, rng);
  auto gamma = Tensor<double>::vector(2, 1.0);
  auto beta = Tensor<double>::vector(2, 0.0);
  Tensor<double> rm;
  Tensor<double> rv;
  EXPECT_THROW(batch_norm(x, gamma, beta, Mode::kInfer, rm, rv, {}), ConfigError);
  batch_norm(x, gamma, beta, Mode::kTrain, rm, rv, {});
  ASSERT_EQ(rm.size(), 2u);
  ASSERT_EQ(rv.size(), 2u);
  EXPECT_NO_THROW(batch_norm(x, gamma, beta, Mode::kInfer, rm, rv, {}));
}

TEST(BatchNorm, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(8);
  for (Mode mode : {Mode::kTrain, Mode::kInfer}) {
    auto x = random_tensor<double>({2, 3, 3, 4}, rng);
    auto gamma = random_tensor<double>({1, 3, 1, 1}, rng, 0.5, 1.5);
    auto beta = random_tensor<double>({1, 3, 1, 1}, rng);
    const auto r = random_tensor<double>({2, 3, 3, 4}, rng);
    const auto rm0 = random_tensor<double>({1, 3, 1, 1}, rng);
    const auto rv0 = random_tensor<double>({1, 3, 1, 1}, rng, 0.5, 2.0);
    auto loss = [&] {
      auto rm = rm0;
      auto rv = rv0;
      return dot(batch_norm(x, gamma, beta, mode, rm, rv, {}), r);
    };
    auto rm = rm0;
    auto rv = rv0;
    BatchNormCache<double> cache;
    batch_norm(x, gamma, beta, mode, rm, rv, {}, &cache);
    const auto g = batch_norm_backward(cache, gamma, r);
    EXPECT_LT(finite_diff_check(loss, x.span(), g.input.span(), 1e-6).max_rel_error, 1e-7);
    EXPECT_LT(finite_diff_check(loss, gamma.span(), g.gamma.span(), 1e-6).max_rel_error, 1e-7);
    EXPECT_LT(finite_diff_check(loss, beta.span(), g.beta.span(), 1e-6).max_rel_error, 1e-7);
  }
}

// ---------------------------------------------------------------------------

TEST(Relu, ForwardAndSubgradient) {
  Tensor<double> x(1, 1, 1, 3);
  x[0] = -1.0;
  x[1] = 0.0;
  x[2] = 2.0;
  const auto y = relu(x);
  EXPECT_EQ(y[0], 0.0);
  EXPECT_EQ(y[1], 0.0);
  EXPECT_EQ(y[2], 2.0);
  const auto g = relu_backward(y, Tensor<double>(1, 1, 1, 3, 1.0));
  EXPECT_EQ(g[0], 0.0);
  EXPECT_EQ(g[1], 0.0);
  EXPECT_EQ(g[2], 1.0);

  std::mt19937_64 rng(9);
  const auto pos = random_tensor<double>({2, 2, 3, 3}, rng, 0.0, 1.0);
  EXPECT_EQ(relu(pos), pos);
}

// ---------------------------------------------------------------------------

Tensor<double> from_rows(std::size_t h, std::size_t w, std::initializer_list<double> v) {
  return Tensor<double>(Shape{1, 1, h, w}, std::vector<double>(v));
}

TEST(MaxPool, WindowMaxAndIndex) {
  auto [p, idx] = max_pool_2x2(from_rows(2, 2, {1, 2, 3, 4}));
  EXPECT_EQ(p[0], 4.0);
  EXPECT_EQ(idx.index[0], 3u);  // (1, 1)
}

TEST(MaxPool, TiesGoToLowestFlatIndex) {
  auto [p, idx] = max_pool_2x2(from_rows(2, 2, {7, 7, 7, 7}));
  EXPECT_EQ(p[0], 7.0);
  EXPECT_EQ(idx.index[0], 0u);
  auto [p2, idx2] = max_pool_2x2(from_rows(2, 2, {1, 5, 5, 2}));
  EXPECT_EQ(idx2.index[0], 1u);
}

TEST(MaxPool, RampOracle) {
  std::vector<double> ramp(16);
  for (int i = 0; i < 16; ++i) ramp[i] = i;
  auto [p, idx] = max_pool_2x2(Tensor<double>(Shape{1, 1, 4, 4}, ramp));
  EXPECT_EQ(p.shape(), (Shape{1, 1, 2, 2}));
  EXPECT_EQ(p[0], 5.0);
  EXPECT_EQ(p[1], 7.0);
  EXPECT_EQ(p[2], 13.0);
  EXPECT_EQ(p[3], 15.0);
  EXPECT_TRUE(idx.within_windows());
}

TEST(MaxPool, OddExtentsRejected) {
  EXPECT_THROW(max_pool_2x2(Tensor<double>(1, 1, 3, 4)), ShapeError);
  EXPECT_THROW(max_pool_2x2(Tensor<double>(1, 1, 4, 5)), ShapeError);
}

TEST(MaxPool, BackwardRoutesToArgmax) {
  auto [p, idx] = max_pool_2x2(from_rows(2, 4, {1, 2, 9, 0, 3, 4, 1, 1}));
  Tensor<double> g(p.shape());
  g[0] = 10.0;
  g[1] = 20.0;
  const auto dx = max_pool_2x2_backward(g, idx);
  const double want[] = {0, 0, 20, 0, 0, 10, 0, 0};
  for (int i = 0; i < 8; ++i) EXPECT_EQ(dx[i], want[i]);
}

TEST(MaxUnpool, ScattersToRecordedPositions) {
  auto [p, idx] = max_pool_2x2(from_rows(2, 2, {1, 2, 3, 4}));
  const auto u = max_unpool_2x2(p, idx);
  EXPECT_EQ(u, from_rows(2, 2, {0, 0, 0, 4}));

  const auto zeros = max_unpool_2x2(Tensor<double>(p.shape()), idx);
  EXPECT_EQ(zeros, Tensor<double>(Shape{1, 1, 2, 2}));

  EXPECT_THROW(max_unpool_2x2(Tensor<double>(1, 1, 2, 2), idx), ShapeError);
}

TEST(MaxUnpool, RoundTripKeepsWindowMaxima) {
  std::mt19937_64 rng(10);
  const auto x = random_tensor<double>({2, 3, 6, 8}, rng);
  auto [p, idx] = max_pool_2x2(x);
  const auto u = max_unpool_2x2(p, idx);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < 6; y += 2)
        for (std::size_t xx = 0; xx < 8; xx += 2) {
          double best = -1e300;
          std::size_t where = 0;
          for (std::size_t dy = 0; dy < 2; ++dy)
            for (std::size_t dx = 0; dx < 2; ++dx) {
              const double v = x.at(n, c, y + dy, xx + dx);
              if (v > best) {
                best = v;
                where = (y + dy) * 8 + xx + dx;
              }
            }
          for (std::size_t dy = 0; dy < 2; ++dy)
            for (std::size_t dx = 0; dx < 2; ++dx) {
              const std::size_t flat = (y + dy) * 8 + xx + dx;
              EXPECT_EQ(u.plane(n, c)[flat], flat == where ? best : 0.0);
            }
        }
}

TEST(MaxUnpool, SecondPoolReturnsPooledTensorForNonNegativeInput) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> coin(0, 3);
  for (int trial = 0; trial < 200; ++trial) {
    auto x = random_tensor<float>({2, 3, 8, 6}, rng, 0.0, 1.0);
    for (auto& v : x.storage())
      if (coin(rng) == 0) v = 0.0f;
    auto [p, idx] = max_pool_2x2(x);
    auto [p2, idx2] = max_pool_2x2(max_unpool_2x2(p, idx));
    EXPECT_EQ(p2, p);
  }
}

TEST(MaxUnpool, NegativeWindowMaximumIsNotRecovered) {
  // Unpooling fills the window with zeros, so a negative maximum loses to them.
  auto [p, idx] = max_pool_2x2(from_rows(2, 2, {-3, -1, -2, -4}));
  auto [p2, idx2] = max_pool_2x2(max_unpool_2x2(p, idx));
  EXPECT_EQ(p[0], -1.0);
  EXPECT_EQ(p2[0], 0.0);
}

TEST(MaxUnpool, BackwardGathersFromRecordedPositions) {
  auto [p, idx] = max_pool_2x2(from_rows(2, 2, {1, 2, 3, 4}));
  const auto g = max_unpool_2x2_backward(from_rows(2, 2, {5, 6, 7, 8}), idx);
  EXPECT_EQ(g[0], 8.0);
}

// ---------------------------------------------------------------------------

TEST(Concat, ChannelOrderAndSplit) {
  std::mt19937_64 rng(12);
  const auto a = random_tensor<double>({2, 3, 4, 4}, rng);
  const auto b = random_tensor<double>({2, 5, 4, 4}, rng);
  const auto c = concat_channels(a, b);
  EXPECT_EQ(c.shape(), (Shape{2, 8, 4, 4}));
  EXPECT_EQ(c.at(1, 0, 2, 3), a.at(1, 0, 2, 3));
  EXPECT_EQ(c.at(1, 3, 2, 3), b.at(1, 0, 2, 3));
  auto [a2, b2] = split_channels(c, 3);
  EXPECT_EQ(a2, a);
  EXPECT_EQ(b2, b);
  EXPECT_EQ(concat_channels(Tensor<double>(1, 64, 8, 8), Tensor<double>(1, 64, 8, 8)).shape(),
            (Shape{1, 128, 8, 8}));
  EXPECT_THROW(concat_channels(a, Tensor<double>(2, 1, 4, 5)), ShapeError);
  EXPECT_THROW(concat_channels(a, Tensor<double>(1, 1, 4, 4)), ShapeError);
}

// ---------------------------------------------------------------------------

TEST(Softmax, Examples) {
  const auto eq = softmax_channels(Tensor<double>(1, 4, 1, 1, 0.3));
  for (int c = 0; c < 4; ++c) EXPECT_DOUBLE_EQ(eq[c], 0.25);

  Tensor<double> z(1, 2, 1, 1);
  z[1] = std::log(2.0);
  const auto p = softmax_channels(z);
  EXPECT_NEAR(p[0], 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(p[1], 2.0 / 3.0, 1e-15);
}

TEST(Softmax, ShiftInvariantPositiveAndNormalized) {
  std::mt19937_64 rng(13);
  auto z = random_tensor<double>({2, 4, 3, 3}, rng, -30.0, 30.0);
  auto shifted = z;
  for (auto& v : shifted.storage()) v += 123.0;
  const auto p = softmax_channels(z);
  const auto q = softmax_channels(shifted);
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(p[i], q[i], 1e-12);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t i = 0; i < 9; ++i) {
      double s = 0.0;
      for (std::size_t c = 0; c < 4; ++c) {
        EXPECT_GT(p.plane(n, c)[i], 0.0);
        s += p.plane(n, c)[i];
      }
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  const auto big = softmax_channels(Tensor<float>(1, 4, 1, 1, 1e4f));
  EXPECT_TRUE(big.all_finite());
}

TEST(Softmax, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(14);
  auto z = random_tensor<double>({2, 4, 2, 3}, rng, -2.0, 2.0);
  const auto r = random_tensor<double>({2, 4, 2, 3}, rng);
  auto loss = [&] { return dot(softmax_channels(z), r); };
  const auto g = softmax_channels_backward(softmax_channels(z), r);
  EXPECT_LT(finite_diff_check(loss, z.span(), g.span(), 1e-6).max_rel_error, 1e-8);
}

// ---------------------------------------------------------------------------

TEST(FiniteDiff, QuadraticIsExact) {
  const std::vector<double> analytic{6.0};
  const auto r = finite_diff_check([](std::span<const double> x) { return x[0] * x[0]; }, {3.0}, analytic, 1e-5);
  EXPECT_LT(r.max_rel_error, 1e-8);
  EXPECT_EQ(r.checked, 1u);
}

TEST(FiniteDiff, ConstantFunction) {
  const std::vector<double> analytic{0.0, 0.0};
  const auto r = finite_diff_check([](std::span<const double>) { return 4.0; }, {1.0, 2.0}, analytic, 1e-5);
  EXPECT_EQ(r.max_rel_error, 0.0);
}

TEST(FiniteDiff, ReportsWorstCoordinateAndValidates) {
  const std::vector<double> analytic{2.0, 0.0};
  auto f = [](std::span<const double> x) { return x[0] * x[0] + 3.0 * x[1]; };
  const auto r = finite_diff_check(f, {1.0, 1.0}, analytic, 1e-5);
  EXPECT_EQ(r.worst_index, 1u);
  EXPECT_NEAR(r.max_rel_error, 1.0, 1e-6);  // |0 - 3| / 3

  EXPECT_THROW(finite_diff_check(f, {1.0, 1.0}, analytic, 0.0), std::invalid_argument);
  EXPECT_THROW(finite_diff_check(f, {1.0}, analytic, 1e-5), std::invalid_argument);
  const std::vector<double> bad{std::numeric_limits<double>::quiet_NaN(), 0.0};
  EXPECT_THROW(finite_diff_check(f, {1.0, 1.0}, bad, 1e-5), std::invalid_argument);
}

TEST(FiniteDiff, CheckedSubsetAndRestoresPoint) {
  std::vector<double> point{1.0, 2.0, 3.0};
  const std::vector<double> analytic{2.0, 4.0, 6.0};
  auto f = [&] { return point[0] * point[0] + point[1] * point[1] + point[2] * point[2]; };
  const std::vector<std::size_t> coords{2};
  const auto r = finite_diff_check(f, point, analytic, 1e-5, coords);
  EXPECT_EQ(r.checked, 1u);
  EXPECT_EQ(point, (std::vector<double>{1.0, 2.0, 3.0}));
}

}  // namespace
}  // namespace qtn
