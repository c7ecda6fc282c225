#ifndef QTN_TRAINER_HPP
#define QTN_TRAINER_HPP

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qtn/data.hpp"
#include "qtn/loss.hpp"
#include "qtn/model.hpp"

namespace qtn {

enum class Precision { kF32, kF64 };
std::string_view to_string(Precision p);
Precision parse_precision(std::string_view s);

template <typename T>
struct AdamState {
  TensorSet<T> m;
  TensorSet<T> v;
  std::uint64_t t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
AdamState<T> make_adam_state(const Parameters<T>& params);

/// Bias-corrected Adam update of every trainable tensor named in `grads`.
/// Refuses (DivergenceError, nothing modified) when any gradient is
/// non-finite; throws ShapeError when names or shapes disagree.
template <typename T>
void adam_step(Parameters<T>& params, const TensorSet<T>& grads, AdamState<T>& state, double lr);

struct TrainConfig {
  ModelConfig model;
  LossConfig loss;
  double learning_rate = 1e-4;
  std::size_t max_epochs = 200;
  std::size_t batch_size = 8;
  std::uint64_t shuffle_seed = 0;
  std::uint64_t init_seed = 0;
  Precision precision = Precision::kF32;
  double clip_grad_norm = 0.0;  // <= 0 disables clipping

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_acc = 0.0;
  double val_dice = 0.0;
  double seconds = 0.0;
  std::uint64_t steps = 0;  // Adam step count after the epoch
};

inline constexpr std::string_view kCurveHeader = "epoch,train_loss,train_acc,val_acc,val_dice,seconds";
std::string curve_row(const EpochRecord& r);

/// Loads and resizes every row of `split` to the model input size.
std::vector<SliceSample> load_split(const Manifest& manifest, Split split, const ModelConfig& model);

/// One pass over `dataset` in a seeded shuffled order (seed, epoch). Fills
/// the train fields of the record; validation fields stay zero.
template <typename T>
EpochRecord train_epoch(Parameters<T>& params, AdamState<T>& state, const std::vector<SliceSample>& dataset,
                        const TrainConfig& cfg, std::size_t epoch);

/// Mean batch loss of `dataset` for a train-mode forward on a copy of
/// `params` (running statistics of the original are left alone).
template <typename T>
double dataset_loss(const Parameters<T>& params, const std::vector<SliceSample>& dataset, const TrainConfig& cfg);

struct ValidationResult {
  double accuracy = 0.0;
  double mean_foreground_dice = 0.0;
};

/// Infer-mode pixel accuracy and mean foreground Dice.
template <typename T>
ValidationResult validate(Parameters<T>& params, const std::vector<SliceSample>& dataset);

struct FitOptions {
  bool resume = false;
  std::function<void(const EpochRecord&)> on_epoch;
  std::function<void(const std::string&)> log;
};

struct FitResult {
  std::vector<EpochRecord> records;  // epochs run by this call
  std::size_t first_epoch = 1;
  double best_val_dice = 0.0;
  std::size_t best_epoch = 0;
  std::filesystem::path last;
  std::filesystem::path best;
  std::filesystem::path curve;
};

/// Trains on the manifest's train split, validating on val (or train when
/// val is empty). Writes curve.csv after every epoch, last.qtnw every epoch
/// and best.qtnw on a new highest validation Dice.
template <typename T>
FitResult fit(const TrainConfig& cfg, const Manifest& manifest, const std::filesystem::path& out_dir,
              const FitOptions& opts = {});

}  // namespace qtn

#endif  // QTN_TRAINER_HPP
