#include "qtn/model.hpp"

#include <cmath>
#include <random>
#include <sstream>

namespace qtn {

void ModelConfig::validate() const {
  std::vector<std::string> problems;
  if (in_channels < 1) problems.push_back("in_channels must be >= 1");
  if (num_classes < 2) problems.push_back("num_classes must be >= 2");
  if (base_channels < 1) problems.push_back("base_channels must be >= 1");
  if (depth != 4) problems.push_back("depth is fixed at 4 (got " + std::to_string(depth) + ")");
  if (dense_kernel % 2 == 0) problems.push_back("dense_kernel must be odd");
  const std::size_t div = std::size_t{1} << std::min<std::size_t>(depth, 30);
  if (input_h == 0 || input_w == 0 || input_h % div != 0 || input_w % div != 0) {
    problems.push_back("input_size " + std::to_string(input_h) + "x" + std::to_string(input_w) +
                       " must be divisible by " + std::to_string(div));
  }
  if (problems.empty()) return;
  std::ostringstream msg;
  msg << "invalid model config:";
  for (const auto& p : problems) msg << " " << p << ";";
  throw ConfigError(msg.str());
}

// ---------------------------------------------------------------------------

template <typename T>
void TensorSet<T>::add(std::string name, Tensor<T> value, bool trainable) {
  if (find(name) != nullptr) throw ConfigError("duplicate tensor name " + name);
  entries_.push_back({std::move(name), std::move(value), trainable});
}

template <typename T>
Tensor<T>* TensorSet<T>::find(std::string_view name) {
  for (auto& e : entries_) {
    if (e.name == name) return &e.value;
  }
  return nullptr;
}

template <typename T>
const Tensor<T>* TensorSet<T>::find(std::string_view name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return &e.value;
  }
  return nullptr;
}

template <typename T>
Tensor<T>& TensorSet<T>::at(std::string_view name) {
  if (Tensor<T>* t = find(name)) return *t;
  throw ConfigError("no tensor named " + std::string(name));
}

template <typename T>
const Tensor<T>& TensorSet<T>::at(std::string_view name) const {
  if (const Tensor<T>* t = find(name)) return *t;
  throw ConfigError("no tensor named " + std::string(name));
}

template <typename T>
TensorSet<T> TensorSet<T>::zeros_like_trainable() const {
  TensorSet out;
  for (const auto& e : entries_) {
    if (e.trainable) out.entries_.push_back({e.name, Tensor<T>(e.value.shape()), true});
  }
  return out;
}

template <typename T>
std::size_t TensorSet<T>::trainable_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) {
    if (e.trainable) n += e.value.size();
  }
  return n;
}

template <typename T>
bool TensorSet<T>::all_finite() const {
  for (const auto& e : entries_) {
    if (!e.value.all_finite()) return false;
  }
  return true;
}

template <typename T>
template <typename U>
Parameters<U> Parameters<T>::cast() const {
  Parameters<U> out;
  out.config = config;
  out.seed = seed;
  for (const auto& e : tensors.entries()) out.tensors.add(e.name, e.value.template cast<U>(), e.trainable);
  return out;
}

// ---------------------------------------------------------------------------

std::vector<std::string> block_names(const ModelConfig& config) {
  std::vector<std::string> names;
  for (std::size_t l = 1; l <= config.depth; ++l) names.push_back("enc" + std::to_string(l));
  names.emplace_back("bottleneck");
  for (std::size_t l = config.depth; l >= 1; --l) names.push_back("dec" + std::to_string(l));
  names.emplace_back("classifier");
  return names;
}

DenseBlockSpec encoder_spec(const ModelConfig& config, std::size_t level) {
  return {level == 1 ? config.in_channels : config.base_channels, config.base_channels, config.dense_kernel};
}

DenseBlockSpec decoder_spec(const ModelConfig& config, std::size_t /*level*/) {
  // unpooled (base) + skip (base)
  return {2 * config.base_channels, config.base_channels, config.dense_kernel};
}

namespace {

enum class Init { kHeNormal, kZero, kOne };

struct ParamSpec {
  std::string name;
  Shape shape;
  Init init;
  bool trainable;
};

void add_norm(std::vector<ParamSpec>& out, const std::string& prefix, std::size_t c) {
  out.push_back({prefix + ".weight", {1, c, 1, 1}, Init::kOne, true});
  out.push_back({prefix + ".bias", {1, c, 1, 1}, Init::kZero, true});
  out.push_back({prefix + ".running_mean", {1, c, 1, 1}, Init::kZero, false});
  out.push_back({prefix + ".running_var", {1, c, 1, 1}, Init::kOne, false});
}

void add_conv(std::vector<ParamSpec>& out, const std::string& prefix, std::size_t co, std::size_t ci,
              std::size_t k, bool bias) {
  out.push_back({prefix + ".weight", {co, ci, k, k}, Init::kHeNormal, true});
  if (bias) out.push_back({prefix + ".bias", {1, co, 1, 1}, Init::kZero, true});
}

void add_dense(std::vector<ParamSpec>& out, const std::string& prefix, const DenseBlockSpec& s) {
  add_norm(out, prefix + ".bn1", s.in_channels);
  add_conv(out, prefix + ".conv1", s.out_channels, s.in_channels, s.kernel, true);
  add_norm(out, prefix + ".bn2", s.concat1_channels());
  add_conv(out, prefix + ".conv2", s.out_channels, s.concat1_channels(), s.kernel, true);
  add_conv(out, prefix + ".conv3", s.out_channels, s.concat2_channels(), 1, true);
}

std::vector<ParamSpec> parameter_layout(const ModelConfig& config) {
  std::vector<ParamSpec> out;
  for (std::size_t l = 1; l <= config.depth; ++l) {
    add_dense(out, "enc" + std::to_string(l), encoder_spec(config, l));
  }
  // The bottleneck convolution feeds a batch norm directly, which cancels any
  // bias in train mode, so it carries none.
  add_conv(out, "bottleneck.conv", config.base_channels, config.base_channels, config.dense_kernel, false);
  add_norm(out, "bottleneck.bn", config.base_channels);
  for (std::size_t l = config.depth; l >= 1; --l) {
    add_dense(out, "dec" + std::to_string(l), decoder_spec(config, l));
  }
  add_conv(out, "classifier.conv", config.num_classes, config.base_channels, 1, true);
  return out;
}

}  // namespace

std::size_t parameter_count(const ModelConfig& config) {
  config.validate();
  std::size_t n = 0;
  for (const auto& p : parameter_layout(config)) {
    if (p.trainable) n += p.shape.numel();
  }
  return n;
}

template <typename T>
Parameters<T> build_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Parameters<T> params;
  params.config = config;
  params.seed = seed;
  std::mt19937_64 rng(seed);
  for (const auto& spec : parameter_layout(config)) {
    Tensor<T> t(spec.shape);
    switch (spec.init) {
      case Init::kZero:
        break;
      case Init::kOne:
        t.fill(T(1));
        break;
      case Init::kHeNormal: {
        const double fan_in = static_cast<double>(spec.shape.c * spec.shape.h * spec.shape.w);
        std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / fan_in));
        for (auto& v : t.storage()) v = static_cast<T>(normal(rng));
        break;
      }
    }
    params.tensors.add(spec.name, std::move(t), spec.trainable);
  }
  return params;
}

// ---------------------------------------------------------------------------

template <typename T>
Network<T>::Network(Parameters<T>& params, BatchNormOptions bn) : params_(params), bn_(bn) {
  params_.config.validate();
}

template <typename T>
Tensor<T> Network<T>::dense_forward(const std::string& prefix, const Tensor<T>& x, Mode mode,
                                    DenseCache* cache) {
  auto& p = params_.tensors;
  BatchNormCache<T> bn1;
  BatchNormCache<T> bn2;
  const bool rec = cache != nullptr;

  Tensor<T> r1 = relu(batch_norm(x, p.at(prefix + ".bn1.weight"), p.at(prefix + ".bn1.bias"), mode,
                                 p.at(prefix + ".bn1.running_mean"), p.at(prefix + ".bn1.running_var"), bn_,
                                 rec ? &bn1 : nullptr));
  Tensor<T> o1 = conv2d(r1, p.at(prefix + ".conv1.weight"), &p.at(prefix + ".conv1.bias"));
  Tensor<T> cat1 = concat_channels(x, o1);
  o1 = Tensor<T>();
  Tensor<T> r2 = relu(batch_norm(cat1, p.at(prefix + ".bn2.weight"), p.at(prefix + ".bn2.bias"), mode,
                                 p.at(prefix + ".bn2.running_mean"), p.at(prefix + ".bn2.running_var"), bn_,
                                 rec ? &bn2 : nullptr));
  Tensor<T> o2 = conv2d(r2, p.at(prefix + ".conv2.weight"), &p.at(prefix + ".conv2.bias"));
  Tensor<T> cat2 = concat_channels(cat1, o2);
  Tensor<T> out = conv2d(cat2, p.at(prefix + ".conv3.weight"), &p.at(prefix + ".conv3.bias"));
  if (rec) {
    cache->bn1 = std::move(bn1);
    cache->r1 = std::move(r1);
    cache->bn2 = std::move(bn2);
    cache->r2 = std::move(r2);
    cache->cat2 = std::move(cat2);
  }
  return out;
}

template <typename T>
Tensor<T> Network<T>::dense_backward(const std::string& prefix, const DenseCache& cache,
                                     const Tensor<T>& grad_out, TensorSet<T>& grads) {
  const auto& p = params_.tensors;
  const std::size_t out_c = params_.config.base_channels;

  auto g3 = conv2d_backward(cache.cat2, p.at(prefix + ".conv3.weight"), true, grad_out);
  grads.at(prefix + ".conv3.weight") = std::move(g3.weight);
  grads.at(prefix + ".conv3.bias") = std::move(g3.bias);
  auto [dcat1, do2] = split_channels(g3.input, cache.cat2.c() - out_c);
  g3.input = Tensor<T>();

  auto g2 = conv2d_backward(cache.r2, p.at(prefix + ".conv2.weight"), true, do2);
  grads.at(prefix + ".conv2.weight") = std::move(g2.weight);
  grads.at(prefix + ".conv2.bias") = std::move(g2.bias);
  auto n2 = batch_norm_backward(cache.bn2, p.at(prefix + ".bn2.weight"), relu_backward(cache.r2, g2.input));
  grads.at(prefix + ".bn2.weight") = std::move(n2.gamma);
  grads.at(prefix + ".bn2.bias") = std::move(n2.beta);
  for (std::size_t i = 0; i < dcat1.size(); ++i) dcat1[i] += n2.input[i];

  auto [dx, do1] = split_channels(dcat1, dcat1.c() - out_c);
  auto g1 = conv2d_backward(cache.r1, p.at(prefix + ".conv1.weight"), true, do1);
  grads.at(prefix + ".conv1.weight") = std::move(g1.weight);
  grads.at(prefix + ".conv1.bias") = std::move(g1.bias);
  auto n1 = batch_norm_backward(cache.bn1, p.at(prefix + ".bn1.weight"), relu_backward(cache.r1, g1.input));
  grads.at(prefix + ".bn1.weight") = std::move(n1.gamma);
  grads.at(prefix + ".bn1.bias") = std::move(n1.beta);
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += n1.input[i];
  return dx;
}

template <typename T>
Tensor<T> Network<T>::forward(const Tensor<T>& input, Mode mode, bool record) {
  const ModelConfig& cfg = params_.config;
  const Shape& s = input.shape();
  const std::size_t div = cfg.spatial_divisor();
  if (s.c != cfg.in_channels) {
    throw ShapeError("forward: input " + to_string(s) + " must have " + std::to_string(cfg.in_channels) +
                     " channels");
  }
  if (s.n == 0 || s.h == 0 || s.w == 0 || s.h % div != 0 || s.w % div != 0) {
    throw ShapeError("forward: spatial size " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                     " must be non-empty and divisible by " + std::to_string(div));
  }

  recorded_ = false;
  levels_.assign(cfg.depth, Level{});
  std::vector<Tensor<T>> skips(cfg.depth);
  auto& p = params_.tensors;

  Tensor<T> x = input;
  for (std::size_t l = 1; l <= cfg.depth; ++l) {
    Level& lv = levels_[l - 1];
    skips[l - 1] = dense_forward("enc" + std::to_string(l), x, mode, record ? &lv.enc : nullptr);
    auto pooled = max_pool_2x2(skips[l - 1]);
    x = std::move(pooled.first);
    lv.pool = std::move(pooled.second);
  }

  Tensor<T> b = conv2d(x, p.at("bottleneck.conv.weight"), static_cast<const Tensor<T>*>(nullptr));
  b = batch_norm(b, p.at("bottleneck.bn.weight"), p.at("bottleneck.bn.bias"), mode,
                 p.at("bottleneck.bn.running_mean"), p.at("bottleneck.bn.running_var"), bn_,
                 record ? &bottleneck_bn_ : nullptr);
  if (record) bottleneck_in_ = std::move(x);

  Tensor<T> d = std::move(b);
  for (std::size_t l = cfg.depth; l >= 1; --l) {
    Level& lv = levels_[l - 1];
    Tensor<T> joined = concat_channels(max_unpool_2x2(d, lv.pool), skips[l - 1]);
    skips[l - 1] = Tensor<T>();
    d = dense_forward("dec" + std::to_string(l), joined, mode, record ? &lv.dec : nullptr);
  }

  logits_ = conv2d(d, p.at("classifier.conv.weight"), &p.at("classifier.conv.bias"));
  if (record) classifier_in_ = std::move(d);
  probs_ = softmax_channels(logits_);
  recorded_ = record;
  return probs_;
}

template <typename T>
TensorSet<T> Network<T>::backward_from_probs(const Tensor<T>& grad_probs) {
  if (!recorded_) throw std::logic_error("Network::backward requires a recorded forward pass");
  return backward(softmax_channels_backward(probs_, grad_probs));
}

template <typename T>
TensorSet<T> Network<T>::backward(const Tensor<T>& grad_logits) {
  if (!recorded_) throw std::logic_error("Network::backward requires a recorded forward pass");
  recorded_ = false;
  const ModelConfig& cfg = params_.config;
  const auto& p = params_.tensors;
  TensorSet<T> grads = p.zeros_like_trainable();

  auto gc = conv2d_backward(classifier_in_, p.at("classifier.conv.weight"), true, grad_logits);
  grads.at("classifier.conv.weight") = std::move(gc.weight);
  grads.at("classifier.conv.bias") = std::move(gc.bias);
  Tensor<T> d = std::move(gc.input);

  std::vector<Tensor<T>> skip_grads(cfg.depth);
  for (std::size_t l = 1; l <= cfg.depth; ++l) {
    Level& lv = levels_[l - 1];
    Tensor<T> dj = dense_backward("dec" + std::to_string(l), lv.dec, d, grads);
    lv.dec = DenseCache{};
    auto [dup, dskip] = split_channels(dj, cfg.base_channels);
    skip_grads[l - 1] = std::move(dskip);
    d = max_unpool_2x2_backward(dup, lv.pool);
  }

  auto nb = batch_norm_backward(bottleneck_bn_, p.at("bottleneck.bn.weight"), d);
  grads.at("bottleneck.bn.weight") = std::move(nb.gamma);
  grads.at("bottleneck.bn.bias") = std::move(nb.beta);
  auto gb = conv2d_backward(bottleneck_in_, p.at("bottleneck.conv.weight"), false, nb.input);
  grads.at("bottleneck.conv.weight") = std::move(gb.weight);
  d = std::move(gb.input);

  for (std::size_t l = cfg.depth; l >= 1; --l) {
    Level& lv = levels_[l - 1];
    Tensor<T> dout = max_pool_2x2_backward(d, lv.pool);
    const Tensor<T>& ds = skip_grads[l - 1];
    for (std::size_t i = 0; i < dout.size(); ++i) dout[i] += ds[i];
    d = dense_backward("enc" + std::to_string(l), lv.enc, dout, grads);
    lv.enc = DenseCache{};
  }
  input_grad_ = std::move(d);
  for (const auto& e : grads.entries()) {
    if (!e.value.all_finite()) throw DivergenceError("non-finite gradient in " + e.name);
  }
  return grads;
}

template class TensorSet<float>;
template class TensorSet<double>;
template Parameters<float> Parameters<float>::cast<float>() const;
template Parameters<double> Parameters<float>::cast<double>() const;
template Parameters<float> Parameters<double>::cast<float>() const;
template Parameters<double> Parameters<double>::cast<double>() const;
template Parameters<float> build_model<float>(const ModelConfig&, std::uint64_t);
template Parameters<double> build_model<double>(const ModelConfig&, std::uint64_t);
template class Network<float>;
template class Network<double>;

}  // namespace qtn
