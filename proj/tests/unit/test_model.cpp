#include <cmath>
#include <random>
#include <stdexcept>

#include <gtest/gtest.h>

#include "qtn/gradcheck.hpp"
#include "qtn/loss.hpp"
#include "qtn/model.hpp"
#include "test_util.hpp"

namespace qtn {
namespace {

using test::random_tensor;

// Closed-form count of trainable scalars.
std::size_t count_oracle(std::size_t in, std::size_t base, std::size_t k, std::size_t classes) {
  auto dense = [&](std::size_t i, std::size_t o) {
    return 2 * i + (i * o * k * k + o) + 2 * (i + o) + ((i + o) * o * k * k + o) + ((i + 2 * o) * o + o);
  };
  std::size_t n = dense(in, base) + 3 * dense(base, base);
  n += base * base * k * k + 2 * base;
  n += 4 * dense(2 * base, base);
  n += base * classes + classes;
  return n;
}

ModelConfig tiny(std::size_t base = 4, std::size_t k = 3, std::size_t hw = 16) {
  ModelConfig c;
  c.base_channels = base;
  c.dense_kernel = k;
  c.input_h = hw;
  c.input_w = hw;
  return c;
}

TEST(ModelConfig, DefaultsAndValidation) {
  ModelConfig c;
  EXPECT_EQ(c.in_channels, 1u);
  EXPECT_EQ(c.num_classes, 4u);
  EXPECT_EQ(c.base_channels, 64u);
  EXPECT_EQ(c.dense_kernel, 5u);
  EXPECT_EQ(c.spatial_divisor(), 16u);
  EXPECT_NO_THROW(c.validate());

  auto bad = c;
  bad.depth = 3;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = c;
  bad.dense_kernel = 4;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = c;
  bad.num_classes = 1;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = c;
  bad.input_h = 100;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(ModelConfig, ValidationListsEveryProblem) {
  ModelConfig c;
  c.base_channels = 0;
  c.dense_kernel = 2;
  try {
    c.validate();
    FAIL();
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("base_channels"), std::string::npos);
    EXPECT_NE(msg.find("dense_kernel"), std::string::npos);
  }
}

TEST(Model, BlockSpecs) {
  ModelConfig c;
  const auto e1 = encoder_spec(c, 1);
  EXPECT_EQ(e1.in_channels, 1u);
  EXPECT_EQ(e1.out_channels, 64u);
  EXPECT_EQ(e1.concat1_channels(), 65u);
  EXPECT_EQ(e1.concat2_channels(), 129u);
  EXPECT_EQ(encoder_spec(c, 3).in_channels, 64u);
  const auto d = decoder_spec(c, 2);
  EXPECT_EQ(d.in_channels, 128u);
  EXPECT_EQ(d.concat2_channels(), 256u);
  EXPECT_EQ(block_names(c), (std::vector<std::string>{"enc1", "enc2", "enc3", "enc4", "bottleneck", "dec4", "dec3",
                                                      "dec2", "dec1", "classifier"}));
}

TEST(Model, ParameterCountMatchesClosedForm) {
  ModelConfig c;
  EXPECT_EQ(parameter_count(c), count_oracle(1, 64, 5, 4));
  EXPECT_EQ(parameter_count(c), 3294024u);
  const auto t = tiny(6, 3);
  EXPECT_EQ(parameter_count(t), count_oracle(1, 6, 3, 4));

  const auto p = build_model<float>(c, 0);
  std::size_t n = 0;
  for (const auto& e : p.tensors.entries())
    if (e.trainable) n += e.value.size();
  EXPECT_EQ(n, parameter_count(c));
}

TEST(Model, InitializationScheme) {
  ModelConfig c;
  const auto p = build_model<double>(c, 3);
  for (const auto& e : p.tensors.entries()) {
    const std::string& name = e.name;
    const auto ends = [&](const std::string& s) {
      return name.size() >= s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0;
    };
    if (ends("running_mean") || (name.find(".bn") != std::string::npos && ends(".bias")) ||
        (name.find(".conv") != std::string::npos && ends(".bias"))) {
      for (double v : e.value.storage()) ASSERT_EQ(v, 0.0) << name;
    } else if (ends("running_var") || (name.find(".bn") != std::string::npos && ends(".weight"))) {
      for (double v : e.value.storage()) ASSERT_EQ(v, 1.0) << name;
    }
    EXPECT_EQ(e.trainable, !ends("running_mean") && !ends("running_var")) << name;
  }
  EXPECT_EQ(p.tensors.find("bottleneck.conv.bias"), nullptr);

  // dec1.conv2: fan_in = (128 + 64) * 25 = 4800, 307200 samples.
  const auto& w = p.tensors.at("dec1.conv2.weight");
  double s = 0.0;
  double ss = 0.0;
  for (double v : w.storage()) {
    s += v;
    ss += v * v;
  }
  const double n = static_cast<double>(w.size());
  const double sd = std::sqrt(ss / n - (s / n) * (s / n));
  EXPECT_NEAR(sd, std::sqrt(2.0 / 4800.0), 0.01 * std::sqrt(2.0 / 4800.0));
  EXPECT_NEAR(s / n, 0.0, 5.0 * sd / std::sqrt(n));
}

TEST(Model, BuildIsDeterministicInSeed) {
  const auto c = tiny();
  const auto a = build_model<double>(c, 11);
  const auto b = build_model<double>(c, 11);
  const auto d = build_model<double>(c, 12);
  ASSERT_EQ(a.tensors.size(), b.tensors.size());
  bool differs = false;
  for (std::size_t i = 0; i < a.tensors.size(); ++i) {
    EXPECT_EQ(a.tensors.entries()[i].name, b.tensors.entries()[i].name);
    EXPECT_EQ(a.tensors.entries()[i].value, b.tensors.entries()[i].value);
    differs |= !(a.tensors.entries()[i].value == d.tensors.entries()[i].value);
  }
  EXPECT_TRUE(differs);
}

TEST(TensorSet, LookupAndDuplicates) {
  TensorSet<double> s;
  s.add("a", Tensor<double>::vector(2));
  EXPECT_THROW(s.add("a", Tensor<double>::vector(1)), ConfigError);
  EXPECT_THROW(s.at("missing"), ConfigError);
  EXPECT_EQ(s.find("missing"), nullptr);
  s.add("b", Tensor<double>::vector(3, 1.0), false);
  EXPECT_EQ(s.trainable_count(), 2u);
  const auto z = s.zeros_like_trainable();
  ASSERT_EQ(z.size(), 1u);
  EXPECT_EQ(z.entries()[0].name, "a");
  s.at("b")[0] = std::nan("");
  EXPECT_FALSE(s.all_finite());
}

TEST(Network, OutputShapeAndSimplex) {
  for (auto [h, w] : {std::pair<std::size_t, std::size_t>{16, 16}, {32, 16}, {16, 48}}) {
    auto p = build_model<double>(tiny(), 1);
    Network<double> net(p);
    std::mt19937_64 rng(2);
    const auto x = random_tensor<double>({2, 1, h, w}, rng, 0.0, 1.0);
    const auto y = net.forward(x, Mode::kTrain);
    EXPECT_EQ(y.shape(), (Shape{2, 4, h, w}));
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t i = 0; i < h * w; ++i) {
        double s = 0.0;
        for (std::size_t c = 0; c < 4; ++c) s += y.plane(n, c)[i];
        EXPECT_NEAR(s, 1.0, 1e-12);
      }
  }
}

TEST(Network, RejectsBadInputBeforeComputing) {
  auto p = build_model<float>(tiny(), 1);
  Network<float> net(p);
  EXPECT_THROW(net.forward(Tensor<float>(1, 2, 16, 16), Mode::kInfer), ShapeError);
  EXPECT_THROW(net.forward(Tensor<float>(1, 1, 24, 16), Mode::kInfer), ShapeError);
  EXPECT_THROW(net.forward(Tensor<float>(1, 1, 16, 8), Mode::kInfer), ShapeError);
}

TEST(Network, BackwardConsumesTheRecordedForward) {
  auto p = build_model<double>(tiny(), 1);
  Network<double> net(p);
  EXPECT_THROW(net.backward(Tensor<double>(1, 4, 16, 16)), std::logic_error);
  const auto y = net.forward(Tensor<double>(1, 1, 16, 16, 0.5), Mode::kTrain);
  EXPECT_NO_THROW(net.backward(Tensor<double>(y.shape(), 0.1)));
  EXPECT_THROW(net.backward(Tensor<double>(y.shape(), 0.1)), std::logic_error);
  net.forward(Tensor<double>(1, 1, 16, 16, 0.5), Mode::kTrain, false);
  EXPECT_THROW(net.backward(Tensor<double>(y.shape(), 0.1)), std::logic_error);
}

TEST(Network, InferModeLeavesRunningStatsAlone) {
  auto p = build_model<double>(tiny(), 1);
  const auto before = p.tensors.at("enc2.bn1.running_mean");
  Network<double> net(p);
  std::mt19937_64 rng(3);
  const auto x = random_tensor<double>({1, 1, 16, 16}, rng);
  net.forward(x, Mode::kInfer, false);
  EXPECT_EQ(p.tensors.at("enc2.bn1.running_mean"), before);
  net.forward(x, Mode::kTrain, false);
  EXPECT_FALSE(p.tensors.at("enc2.bn1.running_mean") == before);
}

TEST(Network, GradientMatchesFiniteDifferencesOnTinyModel) {
  auto p = build_model<double>(tiny(3, 3), 5);
  std::mt19937_64 rng(6);
  test::randomize_affine(p, rng);
  Network<double> net(p);
  const auto x = random_tensor<double>({2, 1, 16, 16}, rng, 0.0, 1.0);
  std::vector<std::uint8_t> lab(2 * 256);
  for (auto& v : lab) v = static_cast<std::uint8_t>(rng() % 4);
  const LabelMap labels(2, 16, 16, lab);
  const LossConfig cfg;

  LossState state;
  const auto probs = net.forward(x, Mode::kTrain);
  loss_forward(probs, labels, cfg, &state);
  const TensorSet<double> grads = net.backward(loss_grad_logits(probs, labels, cfg, state));

  auto f = [&] { return loss_evaluate(net.forward(x, Mode::kTrain, false), labels, cfg, state).total; };
  double worst = 0.0;
  for (const auto& g : grads.entries()) {
    std::vector<std::size_t> coords;
    for (std::size_t i = 0; i < g.value.size(); i += std::max<std::size_t>(1, g.value.size() / 4)) coords.push_back(i);
    const auto r = finite_diff_check(f, p.tensors.at(g.name).span(), g.value.span(), 1e-6, coords);
    EXPECT_LT(r.max_rel_error, 1e-5) << g.name;
    worst = std::max(worst, r.max_rel_error);
  }
  EXPECT_LT(worst, 1e-5);
}

TEST(Parameters, CastRoundTrip) {
  const auto p = build_model<double>(tiny(), 9);
  const auto f = p.cast<float>();
  EXPECT_EQ(f.config, p.config);
  EXPECT_EQ(f.seed, p.seed);
  ASSERT_EQ(f.tensors.size(), p.tensors.size());
  const auto& a = p.tensors.at("enc1.conv1.weight");
  const auto& b = f.tensors.at("enc1.conv1.weight");
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(b[i], static_cast<float>(a[i]));
}

}  // namespace
}  // namespace qtn
