#ifndef QTN_LOSS_HPP
#define QTN_LOSS_HPP

// Adaptive false-positive / false-negative weighted cross entropy.
//
// For each class c, one-vs-rest on the softmax output P_c:
//   Y+  = pixels labelled c            Y-  = all other pixels
//   Yf+ = {j in Y- : P_c(j) >  t}      Yf- = {j in Y+ : P_c(j) <= t}
//   L1_c = -1/|Y+| sum_{Y+} log P_c  - 1/|Y-| sum_{Y-} log(1 - P_c)
//   L2_c = -g1/|Y+| sum_{Yf+} log(1 - P_c) - g2/|Y-| sum_{Yf-} log P_c
//   g1 = 0.5 + mean_{Yf+} |(1 - P_c) - 0.5|
//   g2 = 0.5 + mean_{Yf-} |P_c - 0.5|
//   L = sum_c (L1_c + L2_c)
// The sets and g1/g2 are recomputed from every forward and held constant
// when differentiating. Probabilities are clamped below by log_floor before
// taking logs.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "qtn/tensor.hpp"

namespace qtn {

enum class L2Denominator {
  kClassSets,    // |Y+| for the false-positive sum, |Y-| for the false-negative sum
  kFalseSets,  // |Yf+| and |Yf-|
};

struct LossConfig {
  double threshold = 0.5;
  double log_floor = 1e-12;
  L2Denominator l2_denominator = L2Denominator::kClassSets;

  void validate() const;
};

/// Per-pixel class ids, shape (n, h, w).
struct LabelMap {
  std::size_t n = 0;
  std::size_t h = 0;
  std::size_t w = 0;
  std::vector<std::uint8_t> values;

  LabelMap() = default;
  LabelMap(std::size_t n_, std::size_t h_, std::size_t w_, std::vector<std::uint8_t> v);

  std::size_t size() const { return values.size(); }
};

/// Flat pixel indices (sample * h * w + y * w + x) of each set for one class.
struct ClassPartition {
  std::vector<std::size_t> plus;
  std::vector<std::size_t> minus;
  std::vector<std::size_t> false_pos;
  std::vector<std::size_t> false_neg;
};

/// gamma1 / gamma2 are absent when their false set is empty.
struct ClassWeights {
  std::optional<double> gamma1;
  std::optional<double> gamma2;
};

struct ClassLoss {
  double l1 = 0.0;
  double l2 = 0.0;
  std::optional<double> gamma1;
  std::optional<double> gamma2;
  std::size_t n_plus = 0;
  std::size_t n_minus = 0;
  std::size_t n_false_pos = 0;
  std::size_t n_false_neg = 0;
  bool degenerate = false;  // a normalizing set was empty and its term dropped
};

struct LossTerms {
  std::vector<ClassLoss> classes;
  double l1 = 0.0;
  double l2 = 0.0;
  double total = 0.0;
  bool degenerate = false;
};

/// Set memberships and gamma weights frozen from one forward evaluation.
struct LossState {
  std::vector<ClassPartition> partitions;
  std::vector<ClassWeights> weights;
};

// ---------------------------------------------------------------------------
// Single-class (binary) form. `prob_pos[j]` is P(y_j = 1), `positive[j]` the
// ground truth. The multi-class loss applies this per class.

ClassPartition partition_binary(std::span<const double> prob_pos, std::span<const std::uint8_t> positive,
                                double threshold);
ClassWeights compute_gammas_binary(const ClassPartition& part, std::span<const double> prob_pos);
ClassLoss class_loss_binary(std::span<const double> prob_pos, const ClassPartition& part,
                            const ClassWeights& weights, const LossConfig& cfg);

// ---------------------------------------------------------------------------
// Multi-class form on (n, C, h, w) probability maps.

template <typename T>
std::vector<ClassPartition> partition_sets(const Tensor<T>& probs, const LabelMap& labels,
                                           const LossConfig& cfg);

template <typename T>
std::vector<ClassWeights> compute_gammas(const std::vector<ClassPartition>& partitions,
                                         const Tensor<T>& probs);

/// Computes sets, gammas and the loss. `state` (optional) receives the
/// frozen sets and gammas for the matching gradient call.
template <typename T>
LossTerms loss_forward(const Tensor<T>& probs, const LabelMap& labels, const LossConfig& cfg,
                       LossState* state = nullptr);

/// Loss with externally frozen sets and gammas.
template <typename T>
LossTerms loss_evaluate(const Tensor<T>& probs, const LabelMap& labels, const LossConfig& cfg,
                        const LossState& state);

/// dL/dP with sets and gammas held fixed.
template <typename T>
Tensor<T> loss_grad_probs(const Tensor<T>& probs, const LabelMap& labels, const LossConfig& cfg,
                          const LossState& state);

/// dL/dlogits: loss_grad_probs chained through the channel softmax.
template <typename T>
Tensor<T> loss_grad_logits(const Tensor<T>& probs, const LabelMap& labels, const LossConfig& cfg,
                           const LossState& state);

}  // namespace qtn

#endif  // QTN_LOSS_HPP
