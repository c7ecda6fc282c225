#include "qtn/loss.hpp"

#include <cmath>

#include "qtn/ops.hpp"

namespace qtn {

void LossConfig::validate() const {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw ConfigError("loss threshold must lie in (0, 1), got " + std::to_string(threshold));
  }
  if (!(log_floor > 0.0)) throw ConfigError("loss log_floor must be positive");
}

LabelMap::LabelMap(std::size_t n_, std::size_t h_, std::size_t w_, std::vector<std::uint8_t> v)
    : n(n_), h(h_), w(w_), values(std::move(v)) {
  if (values.size() != n * h * w) {
    throw ShapeError("label map holds " + std::to_string(values.size()) + " values for shape (" +
                     std::to_string(n) + "," + std::to_string(h) + "," + std::to_string(w) + ")");
  }
}

namespace {

// Accessors map a flat pixel id to P_c(j) and to "label == c".
template <typename Prob, typename IsPos>
ClassPartition partition_core(std::size_t count, Prob prob, IsPos is_pos, double threshold) {
  ClassPartition part;
  for (std::size_t j = 0; j < count; ++j) {
    const double p = prob(j);
    if (is_pos(j)) {
      part.plus.push_back(j);
      if (p <= threshold) part.false_neg.push_back(j);
    } else {
      part.minus.push_back(j);
      if (p > threshold) part.false_pos.push_back(j);
    }
  }
  return part;
}

template <typename Prob>
ClassWeights gammas_core(const ClassPartition& part, Prob prob) {
  ClassWeights w;
  if (!part.false_pos.empty()) {
    double acc = 0.0;
    for (std::size_t j : part.false_pos) acc += std::abs((1.0 - prob(j)) - 0.5);
    w.gamma1 = 0.5 + acc / static_cast<double>(part.false_pos.size());
  }
  if (!part.false_neg.empty()) {
    double acc = 0.0;
    for (std::size_t j : part.false_neg) acc += std::abs(prob(j) - 0.5);
    w.gamma2 = 0.5 + acc / static_cast<double>(part.false_neg.size());
  }
  return w;
}

struct Denominators {
  double fp;
  double fn;
};

Denominators l2_denominators(const ClassPartition& part, const LossConfig& cfg) {
  if (cfg.l2_denominator == L2Denominator::kClassSets) {
    return {static_cast<double>(part.plus.size()), static_cast<double>(part.minus.size())};
  }
  return {static_cast<double>(part.false_pos.size()), static_cast<double>(part.false_neg.size())};
}

template <typename Prob>
ClassLoss class_loss_core(Prob prob, const ClassPartition& part, const ClassWeights& weights,
                          const LossConfig& cfg) {
  const double floor = cfg.log_floor;
  auto log_p = [&](std::size_t j) { return std::log(std::max(prob(j), floor)); };
  auto log_q = [&](std::size_t j) { return std::log(std::max(1.0 - prob(j), floor)); };

  ClassLoss out;
  out.gamma1 = weights.gamma1;
  out.gamma2 = weights.gamma2;
  out.n_plus = part.plus.size();
  out.n_minus = part.minus.size();
  out.n_false_pos = part.false_pos.size();
  out.n_false_neg = part.false_neg.size();

  if (!part.plus.empty()) {
    double s = 0.0;
    for (std::size_t j : part.plus) s += log_p(j);
    out.l1 -= s / static_cast<double>(part.plus.size());
  } else {
    out.degenerate = true;
  }
  if (!part.minus.empty()) {
    double s = 0.0;
    for (std::size_t j : part.minus) s += log_q(j);
    out.l1 -= s / static_cast<double>(part.minus.size());
  } else {
    out.degenerate = true;
  }

  const Denominators den = l2_denominators(part, cfg);
  if (weights.gamma1 && !part.false_pos.empty()) {
    if (den.fp > 0.0) {
      double s = 0.0;
      for (std::size_t j : part.false_pos) s += log_q(j);
      out.l2 -= *weights.gamma1 * s / den.fp;
    } else {
      out.degenerate = true;
    }
  }
  if (weights.gamma2 && !part.false_neg.empty()) {
    if (den.fn > 0.0) {
      double s = 0.0;
      for (std::size_t j : part.false_neg) s += log_p(j);
      out.l2 -= *weights.gamma2 * s / den.fn;
    } else {
      out.degenerate = true;
    }
  }
  return out;
}

// Adds dL_c/dP_c(j) into grad(j).
template <typename Prob, typename Grad>
void class_grad_core(Prob prob, Grad grad, const ClassPartition& part, const ClassWeights& weights,
                     const LossConfig& cfg) {
  const double floor = cfg.log_floor;
  auto dlog_p = [&](std::size_t j) {
    const double p = prob(j);
    return p > floor ? 1.0 / p : 0.0;
  };
  // d/dP log(1 - P) = -1 / (1 - P)
  auto dlog_q = [&](std::size_t j) {
    const double q = 1.0 - prob(j);
    return q > floor ? -1.0 / q : 0.0;
  };

  if (!part.plus.empty()) {
    const double scale = 1.0 / static_cast<double>(part.plus.size());
    for (std::size_t j : part.plus) grad(j, -scale * dlog_p(j));
  }
  if (!part.minus.empty()) {
    const double scale = 1.0 / static_cast<double>(part.minus.size());
    for (std::size_t j : part.minus) grad(j, -scale * dlog_q(j));
  }
  const Denominators den = l2_denominators(part, cfg);
  if (weights.gamma1 && den.fp > 0.0) {
    const double scale = *weights.gamma1 / den.fp;
    for (std::size_t j : part.false_pos) grad(j, -scale * dlog_q(j));
  }
  if (weights.gamma2 && den.fn > 0.0) {
    const double scale = *weights.gamma2 / den.fn;
    for (std::size_t j : part.false_neg) grad(j, -scale * dlog_p(j));
  }
}

template <typename T>
void check_inputs(const Tensor<T>& probs, const LabelMap& labels) {
  const Shape& s = probs.shape();
  if (s.n != labels.n || s.h != labels.h || s.w != labels.w) {
    throw ShapeError("loss: probabilities " + to_string(s) + " do not match labels (" +
                     std::to_string(labels.n) + "," + std::to_string(labels.h) + "," +
                     std::to_string(labels.w) + ")");
  }
  for (std::uint8_t v : labels.values) {
    if (v >= s.c) {
      throw ShapeError("loss: label " + std::to_string(v) + " out of range for " + std::to_string(s.c) +
                       " classes");
    }
  }
  if (!probs.all_finite()) throw DivergenceError("loss: non-finite probabilities");
}

// P_c(j) for flat pixel j of an (n, C, h, w) tensor.
template <typename T>
struct ClassView {
  const Tensor<T>& probs;
  std::size_t c;
  double operator()(std::size_t j) const {
    const std::size_t hw = probs.shape().plane();
    const std::size_t b = j / hw;
    return static_cast<double>(probs[(b * probs.shape().c + c) * hw + (j - b * hw)]);
  }
};

template <typename T>
void check_state(const Tensor<T>& probs, const LossState& state) {
  if (state.partitions.size() != probs.c() || state.weights.size() != probs.c()) {
    throw ShapeError("loss: frozen state covers " + std::to_string(state.partitions.size()) +
                     " classes, probabilities have " + std::to_string(probs.c()));
  }
}

}  // namespace

// ---------------------------------------------------------------------------

ClassPartition partition_binary(std::span<const double> prob_pos, std::span<const std::uint8_t> positive,
                                double threshold) {
  if (prob_pos.size() != positive.size()) {
    throw ShapeError("partition_binary: " + std::to_string(prob_pos.size()) + " probabilities for " +
                     std::to_string(positive.size()) + " labels");
  }
  return partition_core(
      prob_pos.size(), [&](std::size_t j) { return prob_pos[j]; },
      [&](std::size_t j) { return positive[j] != 0; }, threshold);
}

ClassWeights compute_gammas_binary(const ClassPartition& part, std::span<const double> prob_pos) {
  return gammas_core(part, [&](std::size_t j) { return prob_pos[j]; });
}

ClassLoss class_loss_binary(std::span<const double> prob_pos, const ClassPartition& part,
                            const ClassWeights& weights, const LossConfig& cfg) {
  cfg.validate();
  return class_loss_core([&](std::size_t j) { return prob_pos[j]; }, part, weights, cfg);
}

template <typename T>
std::vector<ClassPartition> partition_sets(const Tensor<T>& probs, const LabelMap& labels,
                                           const LossConfig& cfg) {
  cfg.validate();
  check_inputs(probs, labels);
  std::vector<ClassPartition> parts;
  parts.reserve(probs.c());
  for (std::size_t c = 0; c < probs.c(); ++c) {
    parts.push_back(partition_core(
        labels.size(), ClassView<T>{probs, c}, [&](std::size_t j) { return labels.values[j] == c; },
        cfg.threshold));
  }
  return parts;
}

template <typename T>
std::vector<ClassWeights> compute_gammas(const std::vector<ClassPartition>& partitions,
                                         const Tensor<T>& probs) {
  if (partitions.size() != probs.c()) {
    throw ShapeError("compute_gammas: " + std::to_string(partitions.size()) + " partitions for " +
                     std::to_string(probs.c()) + " classes");
  }
  std::vector<ClassWeights> out;
  for (std::size_t c = 0; c < probs.c(); ++c) out.push_back(gammas_core(partitions[c], ClassView<T>{probs, c}));
  return out;
}

template <typename T>
LossTerms loss_evaluate(const Tensor<T>& probs, const LabelMap& labels, const LossConfig& cfg,
                        const LossState& state) {
  cfg.validate();
  check_inputs(probs, labels);
  check_state(probs, state);
  LossTerms terms;
  for (std::size_t c = 0; c < probs.c(); ++c) {
    ClassLoss cl = class_loss_core(ClassView<T>{probs, c}, state.partitions[c], state.weights[c], cfg);
    terms.l1 += cl.l1;
    terms.l2 += cl.l2;
    terms.degenerate = terms.degenerate || cl.degenerate;
    terms.classes.push_back(cl);
  }
  terms.total = terms.l1 + terms.l2;
  return terms;
}

template <typename T>
LossTerms loss_forward(const Tensor<T>& probs, const LabelMap& labels, const LossConfig& cfg,
                       LossState* state) {
  LossState local;
  local.partitions = partition_sets(probs, labels, cfg);
  local.weights = compute_gammas(local.partitions, probs);
  LossTerms terms = loss_evaluate(probs, labels, cfg, local);
  if (state != nullptr) *state = std::move(local);
  return terms;
}

template <typename T>
Tensor<T> loss_grad_probs(const Tensor<T>& probs, const LabelMap& labels, const LossConfig& cfg,
                          const LossState& state) {
  cfg.validate();
  check_inputs(probs, labels);
  check_state(probs, state);
  const Shape& s = probs.shape();
  const std::size_t hw = s.plane();
  std::vector<double> acc(probs.size(), 0.0);
  for (std::size_t c = 0; c < s.c; ++c) {
    auto add = [&](std::size_t j, double g) {
      const std::size_t b = j / hw;
      acc[(b * s.c + c) * hw + (j - b * hw)] += g;
    };
    class_grad_core(ClassView<T>{probs, c}, add, state.partitions[c], state.weights[c], cfg);
  }
  Tensor<T> grad(s);
  for (std::size_t i = 0; i < acc.size(); ++i) {
    if (!std::isfinite(acc[i])) throw DivergenceError("loss: non-finite gradient w.r.t. probabilities");
    grad[i] = static_cast<T>(acc[i]);
  }
  return grad;
}

template <typename T>
Tensor<T> loss_grad_logits(const Tensor<T>& probs, const LabelMap& labels, const LossConfig& cfg,
                           const LossState& state) {
  return softmax_channels_backward(probs, loss_grad_probs(probs, labels, cfg, state));
}

#define QTN_INSTANTIATE_LOSS(T)                                                                          \
  template std::vector<ClassPartition> partition_sets(const Tensor<T>&, const LabelMap&, const LossConfig&); \
  template std::vector<ClassWeights> compute_gammas(const std::vector<ClassPartition>&, const Tensor<T>&);  \
  template LossTerms loss_forward(const Tensor<T>&, const LabelMap&, const LossConfig&, LossState*);        \
  template LossTerms loss_evaluate(const Tensor<T>&, const LabelMap&, const LossConfig&, const LossState&); \
  template Tensor<T> loss_grad_probs(const Tensor<T>&, const LabelMap&, const LossConfig&, const LossState&); \
  template Tensor<T> loss_grad_logits(const Tensor<T>&, const LabelMap&, const LossConfig&, const LossState&);

QTN_INSTANTIATE_LOSS(float)
QTN_INSTANTIATE_LOSS(double)

#undef QTN_INSTANTIATE_LOSS

}  // namespace qtn
