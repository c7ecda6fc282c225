#include <cmath>
#include <limits>
#include <random>

#include <gtest/gtest.h>

#include "loss_oracle.hpp"
#include "qtn/gradcheck.hpp"
#include "qtn/loss.hpp"
#include "qtn/ops.hpp"
#include "test_util.hpp"

namespace qtn {
namespace {

struct Instance {
  Tensor<double> probs;
  LabelMap labels;
};

Instance random_instance(std::mt19937_64& rng, std::size_t classes = 4) {
  std::uniform_int_distribution<std::size_t> dim(1, 4);
  std::size_t n, h, w;
  do {
    n = dim(rng) > 2 ? 2 : 1;
    h = dim(rng);
    w = dim(rng);
  } while (n * h * w > 16);
  std::normal_distribution<double> z(0.0, 2.0);
  Tensor<double> logits(n, classes, h, w);
  for (auto& v : logits.storage()) v = z(rng);
  std::vector<std::uint8_t> lab(n * h * w);
  for (auto& v : lab) v = static_cast<std::uint8_t>(rng() % classes);
  return {softmax_channels(logits), LabelMap(n, h, w, lab)};
}

test::OracleResult oracle_for(const Instance& in, const LossConfig& cfg) {
  const Shape s = in.probs.shape();
  std::vector<std::vector<double>> prob(s.c, std::vector<double>(in.labels.size()));
  for (std::size_t b = 0; b < s.n; ++b)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t i = 0; i < s.plane(); ++i) prob[c][b * s.plane() + i] = in.probs.plane(b, c)[i];
  std::vector<int> label(in.labels.values.begin(), in.labels.values.end());
  return test::oracle_loss(prob, label, cfg.threshold, cfg.log_floor,
                           cfg.l2_denominator == L2Denominator::kClassSets);
}

TEST(LossBinary, WorkedTwoPixelExample) {
  const std::vector<double> p{0.9, 0.6};
  const std::vector<std::uint8_t> y{1, 0};
  const auto part = partition_binary(p, y, 0.5);
  EXPECT_EQ(part.plus, (std::vector<std::size_t>{0}));
  EXPECT_EQ(part.minus, (std::vector<std::size_t>{1}));
  EXPECT_EQ(part.false_pos, (std::vector<std::size_t>{1}));
  EXPECT_TRUE(part.false_neg.empty());
  const auto g = compute_gammas_binary(part, p);
  ASSERT_TRUE(g.gamma1.has_value());
  EXPECT_NEAR(*g.gamma1, 0.6, 1e-15);
  EXPECT_FALSE(g.gamma2.has_value());
  const auto l = class_loss_binary(p, part, g, LossConfig{});
  EXPECT_NEAR(l.l1 + l.l2, -std::log(0.9) - std::log(0.4) - 0.6 * std::log(0.4), 1e-12);
  EXPECT_FALSE(l.degenerate);
}

TEST(LossBinary, TwoClassSoftmaxDoublesTheBinaryLoss) {
  // Class 1 is the "positive" class; class 0 mirrors it.
  Tensor<double> probs(1, 2, 1, 2);
  probs.at(0, 1, 0, 0) = 0.9;
  probs.at(0, 0, 0, 0) = 0.1;
  probs.at(0, 1, 0, 1) = 0.6;
  probs.at(0, 0, 0, 1) = 0.4;
  const LabelMap labels(1, 1, 2, {1, 0});
  const auto t = loss_forward(probs, labels, LossConfig{});
  EXPECT_NEAR(t.total, 2.0 * (-std::log(0.9) - std::log(0.4) - 0.6 * std::log(0.4)), 1e-12);
}

TEST(LossBinary, ThresholdBoundaryAndEmptySets) {
  // P == t for a positive counts as a false negative; P == t for a negative is not a false positive.
  const std::vector<double> p{0.5, 0.5};
  const std::vector<std::uint8_t> y{1, 0};
  const auto part = partition_binary(p, y, 0.5);
  EXPECT_EQ(part.false_neg.size(), 1u);
  EXPECT_TRUE(part.false_pos.empty());
  const auto g = compute_gammas_binary(part, p);
  EXPECT_EQ(*g.gamma2, 0.5);

  // All pixels positive: Y- is empty, its term is dropped and flagged.
  const std::vector<double> q{0.7, 0.8};
  const std::vector<std::uint8_t> all{1, 1};
  const auto pa = partition_binary(q, all, 0.5);
  const auto l = class_loss_binary(q, pa, compute_gammas_binary(pa, q), LossConfig{});
  EXPECT_TRUE(l.degenerate);
  EXPECT_NEAR(l.l1, -(std::log(0.7) + std::log(0.8)) / 2.0, 1e-15);
  EXPECT_EQ(l.l2, 0.0);

  EXPECT_THROW(partition_binary(q, std::vector<std::uint8_t>{1}, 0.5), ShapeError);
}

TEST(LossBinary, LogFloorKeepsLossFinite) {
  const std::vector<double> p{0.0, 1.0};
  const std::vector<std::uint8_t> y{1, 0};
  const auto part = partition_binary(p, y, 0.5);
  const auto l = class_loss_binary(p, part, compute_gammas_binary(part, p), LossConfig{});
  EXPECT_TRUE(std::isfinite(l.l1 + l.l2));
  EXPECT_NEAR(l.l1, -2.0 * std::log(1e-12), 1e-9);
}

TEST(Loss, MatchesScalarOracle) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 300; ++trial) {
    LossConfig cfg;
    if (trial % 3 == 1) cfg.threshold = 0.3;
    if (trial % 4 == 3) cfg.l2_denominator = L2Denominator::kFalseSets;
    const auto in = random_instance(rng);
    const auto got = loss_forward(in.probs, in.labels, cfg);
    const auto want = oracle_for(in, cfg);
    ASSERT_NEAR(got.total, want.total, 1e-12) << "trial " << trial;
    for (std::size_t c = 0; c < 4; ++c) {
      EXPECT_NEAR(got.classes[c].l1, want.classes[c].l1, 1e-12);
      EXPECT_NEAR(got.classes[c].l2, want.classes[c].l2, 1e-12);
      EXPECT_EQ(got.classes[c].gamma1.has_value(), want.classes[c].g1.has_value());
      EXPECT_EQ(got.classes[c].gamma2.has_value(), want.classes[c].g2.has_value());
      if (want.classes[c].g1) EXPECT_NEAR(*got.classes[c].gamma1, *want.classes[c].g1, 1e-15);
      if (want.classes[c].g2) EXPECT_NEAR(*got.classes[c].gamma2, *want.classes[c].g2, 1e-15);
    }
  }
}

TEST(Loss, GammasStayWithinBounds) {
  std::mt19937_64 rng(22);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t n = 1 + rng() % 12;
    std::vector<double> p(n);
    std::vector<std::uint8_t> y(n);
    const bool halves = trial % 5 == 0;
    for (std::size_t j = 0; j < n; ++j) {
      p[j] = halves || rng() % 4 == 0 ? 0.5 : u(rng);
      y[j] = static_cast<std::uint8_t>(rng() % 2);
    }
    const double t = trial % 2 ? 0.5 : 0.05 + 0.9 * u(rng);
    const auto part = partition_binary(p, y, t);
    const auto g = compute_gammas_binary(part, p);
    auto all_half = [&](const std::vector<std::size_t>& s) {
      return std::all_of(s.begin(), s.end(), [&](std::size_t j) { return p[j] == 0.5; });
    };
    if (g.gamma1) {
      EXPECT_GE(*g.gamma1, 0.5);
      EXPECT_LE(*g.gamma1, 1.0);
      EXPECT_EQ(*g.gamma1 == 0.5, all_half(part.false_pos));
    }
    if (g.gamma2) {
      EXPECT_GE(*g.gamma2, 0.5);
      EXPECT_LE(*g.gamma2, 1.0);
      EXPECT_EQ(*g.gamma2 == 0.5, all_half(part.false_neg));
    }
  }
}

TEST(Loss, FrozenStateReproducesForward) {
  std::mt19937_64 rng(23);
  const auto in = random_instance(rng);
  LossState st;
  const auto a = loss_forward(in.probs, in.labels, LossConfig{}, &st);
  const auto b = loss_evaluate(in.probs, in.labels, LossConfig{}, st);
  EXPECT_EQ(a.total, b.total);
  ASSERT_EQ(st.partitions.size(), 4u);
  ASSERT_EQ(st.weights.size(), 4u);
}

TEST(Loss, GradientWithFrozenSetsMatchesFiniteDifferences) {
  std::mt19937_64 rng(24);
  for (int trial = 0; trial < 20; ++trial) {
    const auto in = random_instance(rng);
    LossConfig cfg;
    if (trial % 2) cfg.l2_denominator = L2Denominator::kFalseSets;
    LossState st;
    loss_forward(in.probs, in.labels, cfg, &st);

    auto probs = in.probs;
    const auto gp = loss_grad_probs(probs, in.labels, cfg, st);
    auto fp = [&] { return loss_evaluate(probs, in.labels, cfg, st).total; };
    EXPECT_LT(finite_diff_check(fp, probs.span(), gp.span(), 1e-7).max_rel_error, 1e-6);

    // Through the softmax: perturb logits, keep sets and weights fixed.
    Tensor<double> logits(in.probs.shape());
    for (std::size_t i = 0; i < logits.size(); ++i) logits[i] = std::log(in.probs[i]);
    const auto gl = loss_grad_logits(in.probs, in.labels, cfg, st);
    auto fl = [&] { return loss_evaluate(softmax_channels(logits), in.labels, cfg, st).total; };
    EXPECT_LT(finite_diff_check(fl, logits.span(), gl.span(), 1e-7).max_rel_error, 1e-6);
  }
}

TEST(Loss, GradientIsZeroWhereTheFloorClamps) {
  Tensor<double> probs(1, 2, 1, 1);
  probs[0] = 1.0;  // label 1 has P_1 = 0 < floor
  probs[1] = 0.0;
  const LabelMap labels(1, 1, 1, {1});
  LossState st;
  loss_forward(probs, labels, LossConfig{}, &st);
  const auto g = loss_grad_probs(probs, labels, LossConfig{}, st);
  EXPECT_EQ(g[0], 0.0);
  EXPECT_EQ(g[1], 0.0);
}

TEST(Loss, RejectsInvalidInput) {
  LossConfig bad;
  bad.threshold = 1.0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = LossConfig{};
  bad.log_floor = 0.0;
  EXPECT_THROW(bad.validate(), ConfigError);

  Tensor<double> probs(1, 4, 2, 2, 0.25);
  EXPECT_THROW(loss_forward(probs, LabelMap(1, 2, 3, std::vector<std::uint8_t>(6)), LossConfig{}), ShapeError);
  EXPECT_THROW(loss_forward(probs, LabelMap(1, 2, 2, {0, 1, 2, 4}), LossConfig{}), ShapeError);
  EXPECT_THROW(LabelMap(1, 2, 2, {0, 1}), ShapeError);

  LossState st;
  loss_forward(probs, LabelMap(1, 2, 2, {0, 1, 2, 3}), LossConfig{}, &st);
  probs[0] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(loss_grad_probs(probs, LabelMap(1, 2, 2, {0, 1, 2, 3}), LossConfig{}, st), DivergenceError);
  probs[0] = 0.25;
  st.partitions.pop_back();
  EXPECT_THROW(loss_evaluate(probs, LabelMap(1, 2, 2, {0, 1, 2, 3}), LossConfig{}, st), ShapeError);
}

TEST(Loss, FloatAndDoubleAgree) {
  std::mt19937_64 rng(25);
  const auto in = random_instance(rng);
  const auto f = loss_forward(in.probs.cast<float>(), in.labels, LossConfig{});
  const auto d = loss_forward(in.probs, in.labels, LossConfig{});
  EXPECT_NEAR(f.total, d.total, 1e-4 * std::max(1.0, d.total));
}

}  // namespace
}  // namespace qtn
