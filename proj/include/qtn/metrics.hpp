#ifndef QTN_METRICS_HPP
#define QTN_METRICS_HPP

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "qtn/data.hpp"
#include "qtn/model.hpp"

namespace qtn {

/// 2|A n B| / (|A| + |B|) for A = {pred == c}, B = {truth == c}; absent when
/// B is empty.
std::optional<double> dice_per_class(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth,
                                     std::uint8_t c);
std::optional<double> dice_per_class(const Mask2D& pred, const Mask2D& truth, std::uint8_t c);

/// Rows are ground truth, columns predictions.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t num_classes = kNumClasses)
      : num_classes_(num_classes), counts_(num_classes * num_classes, 0) {}

  void add(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth);
  void merge(const ConfusionMatrix& other);

  std::size_t num_classes() const { return num_classes_; }
  std::uint64_t at(std::size_t truth, std::size_t pred) const { return counts_[truth * num_classes_ + pred]; }
  std::uint64_t total() const;
  std::uint64_t trace() const;
  double accuracy() const;
  /// Row-normalized percentages; rows without pixels are absent.
  std::vector<std::optional<std::vector<double>>> row_percent() const;

 private:
  std::size_t num_classes_;
  std::vector<std::uint64_t> counts_;
};

ConfusionMatrix confusion_matrix(const std::vector<Mask2D>& preds, const std::vector<Mask2D>& truths,
                                 std::size_t num_classes = kNumClasses);

struct DiceStats {
  std::vector<double> values;
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
};

DiceStats summarize(std::vector<double> values);

struct DiceReport {
  std::vector<DiceStats> per_class;  // index = class id
  DiceStats foreground;               // pooled over classes 1..C-1
};

struct RocCurve {
  std::vector<std::pair<double, double>> points;  // (fpr, tpr) from (0,0) to (1,1)
  double auc = 0.0;
  std::size_t positives = 0;
  std::size_t negatives = 0;
};

/// Threshold sweep over the sorted distinct scores; trapezoid AUC. When there
/// are more than `max_samples` pixels a seeded uniform subsample is used.
/// Throws DataError when only one class is present (naming `class_id`).
RocCurve roc_auc(std::span<const double> scores, std::span<const std::uint8_t> positive,
                 std::size_t max_samples = 1'000'000, std::uint64_t seed = 0, int class_id = -1);

/// Streaming uniform subsample (reservoir, skip-ahead variant) of
/// (score, is_positive) pairs.
class RocReservoir {
 public:
  RocReservoir(std::size_t capacity, std::uint64_t seed);
  void add(double score, bool positive);
  std::size_t seen() const { return seen_; }
  RocCurve finish(int class_id) const;

 private:
  void schedule();

  std::size_t capacity_;
  std::mt19937_64 rng_;
  std::vector<double> scores_;
  std::vector<std::uint8_t> labels_;
  std::uint64_t seen_ = 0;
  std::uint64_t next_ = 0;
  double w_ = 1.0;
};

struct EvalOptions {
  std::size_t roc_max_samples = 1'000'000;
  std::uint64_t seed = 0;
  bool compute_roc = true;
};

struct ClassRoc {
  std::optional<RocCurve> curve;
  std::string error;  // set when the curve could not be computed
};

struct EvalReport {
  std::string split;
  std::size_t slices = 0;
  DiceReport dice;
  ConfusionMatrix confusion;
  std::vector<ClassRoc> roc;
  double accuracy = 0.0;  // pixel accuracy
  double ms_per_slice = 0.0;
  std::string fingerprint;
};

/// Folds per-slice predictions into an EvalReport.
class EvalAccumulator {
 public:
  EvalAccumulator(std::size_t num_classes, const EvalOptions& opts);

  /// `probs` is (C, h, w) for one slice, or empty to skip ROC accumulation.
  void add_slice(const Mask2D& pred, const Mask2D& truth, std::span<const double> probs, double forward_ms);

  EvalReport finish() const;

 private:
  std::size_t num_classes_;
  EvalOptions opts_;
  ConfusionMatrix confusion_;
  std::vector<std::vector<double>> dice_;
  std::vector<RocReservoir> roc_;
  double total_ms_ = 0.0;
  std::size_t slices_ = 0;
};

/// Per-pixel argmax of an (n, C, h, w) probability tensor for sample `index`.
template <typename T>
Mask2D argmax_mask(const Tensor<T>& probs, std::size_t index = 0);

/// Infer-mode forward per slice of `split`, argmax masks, every metric.
template <typename T>
EvalReport evaluate(Parameters<T>& params, const Manifest& manifest, Split split, const EvalOptions& opts);

/// CRC-32 (hex) over the split's manifest rows and referenced file sizes.
std::string dataset_fingerprint(const Manifest& manifest, Split split);

nlohmann::json to_json(const EvalReport& report);

/// Writes report.json, confusion.csv and roc_class<c>.csv files into `dir`.
void write_eval_outputs(const EvalReport& report, const fs::path& dir);

}  // namespace qtn

#endif  // QTN_METRICS_HPP
