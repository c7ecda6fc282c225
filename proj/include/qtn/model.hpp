#ifndef QTN_MODEL_HPP
#define QTN_MODEL_HPP

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "qtn/ops.hpp"
#include "qtn/tensor.hpp"

namespace qtn {

struct ModelConfig {
  std::size_t in_channels = 1;
  std::size_t num_classes = 4;
  std::size_t base_channels = 64;
  std::size_t depth = 4;
  std::size_t dense_kernel = 5;
  std::size_t input_h = 256;
  std::size_t input_w = 256;

  /// Throws ConfigError listing every violated constraint.
  void validate() const;

  std::size_t spatial_divisor() const { return std::size_t{1} << depth; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Channel widths inside one dense block:
///   x(in) -> norm, relu, k x k conv -> o1(out)
///   cat1 = [x, o1]           (in + out)
///   cat1 -> norm, relu, k x k conv -> o2(out)
///   cat2 = [x, o1, o2]       (in + 2 out)
///   cat2 -> 1 x 1 conv -> out
struct DenseBlockSpec {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 5;

  std::size_t concat1_channels() const { return in_channels + out_channels; }
  std::size_t concat2_channels() const { return in_channels + 2 * out_channels; }
};

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> value;
  bool trainable = true;
};

/// Ordered collection of named tensors. Lookup is linear; sets hold < 100 entries.
template <typename T>
class TensorSet {
 public:
  void add(std::string name, Tensor<T> value, bool trainable = true);

  Tensor<T>* find(std::string_view name);
  const Tensor<T>* find(std::string_view name) const;
  Tensor<T>& at(std::string_view name);
  const Tensor<T>& at(std::string_view name) const;

  std::vector<NamedTensor<T>>& entries() { return entries_; }
  const std::vector<NamedTensor<T>>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  /// Zero tensors with the shapes of the trainable entries.
  TensorSet zeros_like_trainable() const;

  std::size_t trainable_count() const;

  bool all_finite() const;

 private:
  std::vector<NamedTensor<T>> entries_;
};

/// Network weights plus normalization running statistics (non-trainable).
template <typename T>
struct Parameters {
  ModelConfig config;
  std::uint64_t seed = 0;
  TensorSet<T> tensors;

  template <typename U>
  Parameters<U> cast() const;
};

/// Canonical block names in construction order: enc1..enc4, bottleneck,
/// dec4..dec1, classifier.
std::vector<std::string> block_names(const ModelConfig& config);

DenseBlockSpec encoder_spec(const ModelConfig& config, std::size_t level);  // level 1..depth
DenseBlockSpec decoder_spec(const ModelConfig& config, std::size_t level);

/// He-scaled normal weights (sigma = sqrt(2 / fan_in)), zero biases, unit
/// norm scale, zero norm shift, running mean 0 / variance 1.
template <typename T>
Parameters<T> build_model(const ModelConfig& config, std::uint64_t seed);

/// Number of trainable scalars for `config`.
std::size_t parameter_count(const ModelConfig& config);

/// Encoder/decoder forward and exact backward over a borrowed Parameters.
/// Train-mode forward updates running statistics inside the parameters.
template <typename T>
class Network {
 public:
  explicit Network(Parameters<T>& params, BatchNormOptions bn = {});

  /// Returns per-pixel class probabilities (n, num_classes, h, w). When
  /// `record` is set the activations needed by backward are kept.
  Tensor<T> forward(const Tensor<T>& input, Mode mode, bool record = true);

  const Tensor<T>& logits() const { return logits_; }

  /// Gradients for every trainable parameter, given dL/dlogits. Consumes the
  /// recorded forward; calling twice without a new forward throws.
  TensorSet<T> backward(const Tensor<T>& grad_logits);

  /// Same, starting from dL/dprobabilities (applies the softmax backward).
  TensorSet<T> backward_from_probs(const Tensor<T>& grad_probs);

  /// dL/dinput of the most recent backward.
  const Tensor<T>& input_gradient() const { return input_grad_; }

 private:
  struct DenseCache {
    BatchNormCache<T> bn1;
    Tensor<T> r1;
    BatchNormCache<T> bn2;
    Tensor<T> r2;
    Tensor<T> cat2;
  };
  struct Level {
    DenseCache enc;
    PoolIndices pool;
    DenseCache dec;
  };

  Tensor<T> dense_forward(const std::string& prefix, const Tensor<T>& x, Mode mode, DenseCache* cache);
  Tensor<T> dense_backward(const std::string& prefix, const DenseCache& cache, const Tensor<T>& grad_out,
                           TensorSet<T>& grads);

  Parameters<T>& params_;
  BatchNormOptions bn_;
  std::vector<Level> levels_;
  Tensor<T> bottleneck_in_;
  BatchNormCache<T> bottleneck_bn_;
  Tensor<T> classifier_in_;
  Tensor<T> logits_;
  Tensor<T> probs_;
  Tensor<T> input_grad_;
  bool recorded_ = false;
};

}  // namespace qtn

#endif  // QTN_MODEL_HPP
