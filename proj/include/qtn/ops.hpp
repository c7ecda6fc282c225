#ifndef QTN_OPS_HPP
#define QTN_OPS_HPP

// Differentiable kernels used by the network. Every forward has a matching
// backward that takes whatever the forward left behind (input, indices, or
// a cache struct) and returns exact gradients.

#include <cstdint>
#include <utility>
#include <vector>

#include "qtn/tensor.hpp"

namespace qtn {

enum class Mode { kTrain, kInfer };

// ---------------------------------------------------------------------------
// conv2d: stride 1, zero "same" padding (k - 1) / 2, k odd.

template <typename T>
struct ConvGrads {
  Tensor<T> input;   // empty when not requested
  Tensor<T> weight;  // (co, ci, k, k)
  Tensor<T> bias;    // (1, co, 1, 1); empty for bias-free convolutions
};

/// Cross-correlation of `input` (n, ci, h, w) with `weight` (co, ci, k, k).
/// `bias` may be null or a (1, co, 1, 1) tensor.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>* bias);

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& weight, bool has_bias,
                             const Tensor<T>& grad_out, bool need_input_grad = true);

// ---------------------------------------------------------------------------
// Batch normalization over (n, h, w) per channel.

struct BatchNormOptions {
  double eps = 1e-5;
  double momentum = 0.1;
};

template <typename T>
struct BatchNormCache {
  Mode mode = Mode::kTrain;
  Tensor<T> xhat;
  std::vector<double> inv_std;
};

template <typename T>
struct BatchNormGrads {
  Tensor<T> input;
  Tensor<T> gamma;
  Tensor<T> beta;
};

/// Train mode normalizes with batch statistics and folds them into the
/// running tensors (unbiased variance); an empty running tensor is seeded
/// with the batch statistics. Infer mode requires populated running stats.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta, Mode mode,
                     Tensor<T>& running_mean, Tensor<T>& running_var, const BatchNormOptions& opts,
                     BatchNormCache<T>* cache = nullptr);

template <typename T>
BatchNormGrads<T> batch_norm_backward(const BatchNormCache<T>& cache, const Tensor<T>& gamma,
                                      const Tensor<T>& grad_out);

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> relu(const Tensor<T>& input);

/// Gradient passes where the forward output is positive (subgradient 0 at 0).
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& output, const Tensor<T>& grad_out);

// ---------------------------------------------------------------------------
// 2x2 max pooling with recorded argmax, and the matching unpooling.

/// Argmax positions of a 2x2 pool. Each entry is the flat (y * w + x) offset
/// into the input plane of the element that won its window.
struct PoolIndices {
  Shape pooled;      // shape of the pooled tensor
  Shape source;      // shape of the pre-pool tensor
  std::vector<std::uint32_t> index;

  bool within_windows() const;
};

template <typename T>
std::pair<Tensor<T>, PoolIndices> max_pool_2x2(const Tensor<T>& input);

template <typename T>
Tensor<T> max_pool_2x2_backward(const Tensor<T>& grad_out, const PoolIndices& indices);

template <typename T>
Tensor<T> max_unpool_2x2(const Tensor<T>& input, const PoolIndices& indices);

template <typename T>
Tensor<T> max_unpool_2x2_backward(const Tensor<T>& grad_out, const PoolIndices& indices);

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);

/// Splits (n, ca + cb, h, w) back into its first `ca` channels and the rest.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& t, std::size_t ca);

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> softmax_channels(const Tensor<T>& logits);

template <typename T>
Tensor<T> softmax_channels_backward(const Tensor<T>& probs, const Tensor<T>& grad_probs);

}  // namespace qtn

#endif  // QTN_OPS_HPP
