#include "qtn/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "qtn/checkpoint.hpp"
#include "qtn/metrics.hpp"

namespace qtn {

using nlohmann::json;

std::string_view to_string(Precision p) { return p == Precision::kF64 ? "f64" : "f32"; }

Precision parse_precision(std::string_view s) {
  if (s == "f32") return Precision::kF32;
  if (s == "f64") return Precision::kF64;
  throw ConfigError("precision must be f32 or f64, got '" + std::string(s) + "'");
}

template <typename T>
AdamState<T> make_adam_state(const Parameters<T>& params) {
  AdamState<T> s;
  s.m = params.tensors.zeros_like_trainable();
  s.v = params.tensors.zeros_like_trainable();
  return s;
}

template <typename T>
void adam_step(Parameters<T>& params, const TensorSet<T>& grads, AdamState<T>& state, double lr) {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("adam: learning rate must be finite and >= 0");
  // Validate everything before touching any state.
  std::vector<Tensor<T>*> targets;
  targets.reserve(grads.size());
  for (const auto& g : grads.entries()) {
    Tensor<T>* p = params.tensors.find(g.name);
    Tensor<T>* m = state.m.find(g.name);
    Tensor<T>* v = state.v.find(g.name);
    if (p == nullptr || m == nullptr || v == nullptr) throw ShapeError("adam: unknown parameter '" + g.name + "'");
    if (p->shape() != g.value.shape() || m->shape() != g.value.shape() || v->shape() != g.value.shape()) {
      throw ShapeError("adam: gradient shape " + to_string(g.value.shape()) + " does not match parameter '" +
                       g.name + "' " + to_string(p->shape()));
    }
    if (!g.value.all_finite()) throw DivergenceError("adam: non-finite gradient for '" + g.name + "'; step refused");
    targets.push_back(p);
  }

  ++state.t;
  const double b1 = state.beta1;
  const double b2 = state.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  for (std::size_t k = 0; k < targets.size(); ++k) {
    const auto& g = grads.entries()[k];
    Tensor<T>& p = *targets[k];
    Tensor<T>& m = state.m.at(g.name);
    Tensor<T>& v = state.v.at(g.name);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = static_cast<double>(g.value[i]);
      const double mi = b1 * static_cast<double>(m[i]) + (1.0 - b1) * gi;
      const double vi = b2 * static_cast<double>(v[i]) + (1.0 - b2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      if (lr != 0.0) {
        const double update = lr * (mi / c1) / (std::sqrt(vi / c2) + state.eps);
        p[i] = static_cast<T>(static_cast<double>(p[i]) - update);
      }
    }
  }
}

void TrainConfig::validate() const {
  model.validate();
  loss.validate();
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning_rate must be > 0, got " + std::to_string(learning_rate));
  }
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
}

std::string curve_row(const EpochRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g,%.17g,%.3f", r.epoch, r.train_loss, r.train_acc, r.val_acc,
                r.val_dice, r.seconds);
  return buf;
}

std::vector<SliceSample> load_split(const Manifest& manifest, Split split, const ModelConfig& model) {
  std::vector<SliceSample> out;
  for (const auto& row : manifest.rows_in(split)) out.push_back(load_sample(manifest, row, model.input_h, model.input_w));
  return out;
}

namespace {

template <typename T>
std::size_t correct_pixels(const Tensor<T>& probs, const LabelMap& labels) {
  std::size_t correct = 0;
  for (std::size_t n = 0; n < probs.n(); ++n) {
    const Mask2D pred = argmax_mask(probs, n);
    const std::uint8_t* truth = labels.values.data() + n * pred.labels.size();
    for (std::size_t i = 0; i < pred.labels.size(); ++i) correct += pred.labels[i] == truth[i];
  }
  return correct;
}

template <typename T>
void clip_gradients(TensorSet<T>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads.entries()) {
    for (T x : g.value.storage()) sq += static_cast<double>(x) * static_cast<double>(x);
  }
  const double norm = std::sqrt(sq);
  if (norm <= max_norm || norm == 0.0) return;
  const T scale = static_cast<T>(max_norm / norm);
  for (auto& g : grads.entries()) {
    for (T& x : g.value.storage()) x *= scale;
  }
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch)};
  std::mt19937_64 rng(seq);
  // Fisher-Yates with an explicit draw so the order does not depend on the
  // standard library's shuffle.
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

template <typename T>
std::vector<SliceSample> gather(const std::vector<SliceSample>& dataset, const std::vector<std::size_t>& order,
                                std::size_t begin, std::size_t end) {
  std::vector<SliceSample> batch;
  batch.reserve(end - begin);
  for (std::size_t i = begin; i < end; ++i) batch.push_back(dataset[order[i]]);
  return batch;
}

}  // namespace

template <typename T>
EpochRecord train_epoch(Parameters<T>& params, AdamState<T>& state, const std::vector<SliceSample>& dataset,
                        const TrainConfig& cfg, std::size_t epoch) {
  cfg.validate();
  if (dataset.empty()) throw DataError("train_epoch: the training set is empty");
  const auto order = epoch_order(dataset.size(), cfg.shuffle_seed, epoch);
  Network<T> net(params);
  EpochRecord rec;
  rec.epoch = epoch;
  double loss_sum = 0.0;
  std::size_t correct = 0;
  std::size_t pixels = 0;
  for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
    const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
    auto [x, labels] = make_batch<T>(gather<T>(dataset, order, begin, end));
    const Tensor<T> probs = net.forward(x, Mode::kTrain);
    LossState ls;
    const LossTerms terms = loss_forward(probs, labels, cfg.loss, &ls);
    if (!std::isfinite(terms.total)) {
      throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) + ", batch starting at " +
                            std::to_string(begin));
    }
    TensorSet<T> grads = net.backward(loss_grad_logits(probs, labels, cfg.loss, ls));
    if (cfg.clip_grad_norm > 0.0) clip_gradients(grads, cfg.clip_grad_norm);
    adam_step(params, grads, state, cfg.learning_rate);
    loss_sum += terms.total * static_cast<double>(end - begin);
    correct += correct_pixels(probs, labels);
    pixels += labels.size();
  }
  rec.train_loss = loss_sum / static_cast<double>(dataset.size());
  rec.train_acc = static_cast<double>(correct) / static_cast<double>(pixels);
  rec.steps = state.t;
  return rec;
}

template <typename T>
double dataset_loss(const Parameters<T>& params, const std::vector<SliceSample>& dataset, const TrainConfig& cfg) {
  if (dataset.empty()) throw DataError("dataset_loss: empty dataset");
  Parameters<T> copy = params;
  Network<T> net(copy);
  double sum = 0.0;
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
    const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
    auto [x, labels] = make_batch<T>(gather<T>(dataset, order, begin, end));
    const Tensor<T> probs = net.forward(x, Mode::kTrain, false);
    sum += loss_forward(probs, labels, cfg.loss).total * static_cast<double>(end - begin);
  }
  return sum / static_cast<double>(dataset.size());
}

template <typename T>
ValidationResult validate(Parameters<T>& params, const std::vector<SliceSample>& dataset) {
  if (dataset.empty()) throw DataError("validate: empty dataset");
  EvalOptions opts;
  opts.compute_roc = false;
  EvalAccumulator acc(params.config.num_classes, opts);
  Network<T> net(params);
  for (const auto& s : dataset) {
    auto [x, labels] = make_batch<T>({s});
    const Tensor<T> probs = net.forward(x, Mode::kInfer, false);
    acc.add_slice(argmax_mask(probs), s.mask, {}, 0.0);
  }
  const EvalReport r = acc.finish();
  return {r.accuracy, r.dice.foreground.mean};
}

// ---------------------------------------------------------------------------

namespace {

json train_record(const TrainConfig& cfg, const EpochRecord& rec, std::uint64_t steps, double best, std::size_t best_epoch) {
  return json{
      {"epoch", rec.epoch},
      {"adam_step", steps},
      {"val_dice", rec.val_dice},
      {"val_acc", rec.val_acc},
      {"best_val_dice", best},
      {"best_epoch", best_epoch},
      {"learning_rate", cfg.learning_rate},
      {"batch_size", cfg.batch_size},
      {"max_epochs", cfg.max_epochs},
      {"shuffle_seed", cfg.shuffle_seed},
      {"init_seed", cfg.init_seed},
      {"clip_grad_norm", cfg.clip_grad_norm},
      {"loss",
       {{"threshold", cfg.loss.threshold},
        {"log_floor", cfg.loss.log_floor},
        {"l2_denominator", cfg.loss.l2_denominator == L2Denominator::kClassSets ? "class_sets" : "false_sets"}}},
  };
}

template <typename T>
TensorSet<T> adam_extra(const AdamState<T>& s) {
  TensorSet<T> extra;
  for (const auto& e : s.m.entries()) extra.add("adam.m/" + e.name, e.value, false);
  for (const auto& e : s.v.entries()) extra.add("adam.v/" + e.name, e.value, false);
  return extra;
}

void write_text_file(const std::filesystem::path& path, const std::string& text, bool append) {
  std::ofstream f(path, std::ios::binary | (append ? std::ios::app : std::ios::trunc));
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << text;
  f.flush();
  if (!f) throw IoError("write failed for " + path.string());
}

/// Keeps the header and rows with epoch <= last_epoch.
void truncate_curve(const std::filesystem::path& path, std::size_t last_epoch) {
  std::string kept = std::string(kCurveHeader) + "\n";
  std::ifstream in(path, std::ios::binary);
  if (in) {
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::size_t epoch = 0;
      try {
        epoch = std::stoul(line.substr(0, line.find(',')));
      } catch (const std::exception&) {
        break;
      }
      if (epoch > last_epoch) break;
      kept += line + "\n";
    }
  }
  write_text_file(path, kept, false);
}

}  // namespace

template <typename T>
FitResult fit(const TrainConfig& cfg, const Manifest& manifest, const std::filesystem::path& out_dir,
              const FitOptions& opts) {
  cfg.validate();
  auto log = [&](const std::string& msg) {
    if (opts.log) opts.log(msg);
  };
  try {
    std::filesystem::create_directories(out_dir);
  } catch (const std::filesystem::filesystem_error& e) {
    throw IoError("cannot create " + out_dir.string() + ": " + e.what());
  }

  FitResult result;
  result.last = out_dir / "last.qtnw";
  result.best = out_dir / "best.qtnw";
  result.curve = out_dir / "curve.csv";

  Parameters<T> params;
  AdamState<T> adam;
  std::size_t done = 0;
  bool have_best = false;

  if (opts.resume && std::filesystem::exists(result.last)) {
    Checkpoint<T> ck = load_weights<T>(result.last);
    if (ck.params.config != cfg.model) throw ConfigError("resume: model config differs from " + result.last.string());
    params = std::move(ck.params);
    adam = make_adam_state(params);
    for (auto& e : adam.m.entries()) {
      const Tensor<T>* t = ck.extra.find("adam.m/" + e.name);
      if (t == nullptr) throw FormatError(FormatError::Kind::kMalformed, "resume: missing Adam moments for " + e.name);
      e.value = *t;
    }
    for (auto& e : adam.v.entries()) {
      const Tensor<T>* t = ck.extra.find("adam.v/" + e.name);
      if (t == nullptr) throw FormatError(FormatError::Kind::kMalformed, "resume: missing Adam moments for " + e.name);
      e.value = *t;
    }
    const json& tr = ck.record.at("train");
    done = tr.at("epoch").get<std::size_t>();
    adam.t = tr.at("adam_step").get<std::uint64_t>();
    result.best_val_dice = tr.at("best_val_dice").get<double>();
    result.best_epoch = tr.at("best_epoch").get<std::size_t>();
    have_best = std::filesystem::exists(result.best);
    truncate_curve(result.curve, done);
    log("resuming after epoch " + std::to_string(done) + " from " + result.last.string());
  } else {
    params = build_model<T>(cfg.model, cfg.init_seed);
    adam = make_adam_state(params);
    write_text_file(result.curve, std::string(kCurveHeader) + "\n", false);
  }
  result.first_epoch = done + 1;

  const std::vector<SliceSample> train = load_split(manifest, Split::kTrain, cfg.model);
  if (train.empty()) throw DataError("fit: manifest has no train rows");
  std::vector<SliceSample> val = load_split(manifest, Split::kVal, cfg.model);
  const bool val_is_train = val.empty();
  if (val_is_train) log("warning: manifest has no val rows; validating on the train split");
  const std::vector<SliceSample>& val_set = val_is_train ? train : val;

  for (std::size_t epoch = done + 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    EpochRecord rec;
    try {
      rec = train_epoch(params, adam, train, cfg, epoch);
    } catch (const DivergenceError& e) {
      const std::string ref = epoch > 1 ? result.last.string() + " (epoch " + std::to_string(epoch - 1) + ")"
                                        : std::string("none");
      throw DivergenceError(std::string(e.what()) + "; last good checkpoint: " + ref);
    }
    const ValidationResult v = validate(params, val_set);
    rec.val_acc = v.accuracy;
    rec.val_dice = v.mean_foreground_dice;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    write_text_file(result.curve, curve_row(rec) + "\n", true);
    const bool improved = !have_best || rec.val_dice > result.best_val_dice;
    if (improved) {
      result.best_val_dice = rec.val_dice;
      result.best_epoch = epoch;
    }
    const TensorSet<T> extra = adam_extra(adam);
    const json record = train_record(cfg, rec, adam.t, result.best_val_dice, result.best_epoch);
    save_weights(params, result.last, record, &extra);
    if (improved) {
      save_weights(params, result.best, record, &extra);
      have_best = true;
    }
    result.records.push_back(rec);
    if (opts.on_epoch) opts.on_epoch(rec);
  }
  return result;
}

template AdamState<float> make_adam_state<float>(const Parameters<float>&);
template AdamState<double> make_adam_state<double>(const Parameters<double>&);
template void adam_step<float>(Parameters<float>&, const TensorSet<float>&, AdamState<float>&, double);
template void adam_step<double>(Parameters<double>&, const TensorSet<double>&, AdamState<double>&, double);
template EpochRecord train_epoch<float>(Parameters<float>&, AdamState<float>&, const std::vector<SliceSample>&,
                                        const TrainConfig&, std::size_t);
template EpochRecord train_epoch<double>(Parameters<double>&, AdamState<double>&, const std::vector<SliceSample>&,
                                         const TrainConfig&, std::size_t);
template double dataset_loss<float>(const Parameters<float>&, const std::vector<SliceSample>&, const TrainConfig&);
template double dataset_loss<double>(const Parameters<double>&, const std::vector<SliceSample>&, const TrainConfig&);
template ValidationResult validate<float>(Parameters<float>&, const std::vector<SliceSample>&);
template ValidationResult validate<double>(Parameters<double>&, const std::vector<SliceSample>&);
template FitResult fit<float>(const TrainConfig&, const Manifest&, const std::filesystem::path&, const FitOptions&);
template FitResult fit<double>(const TrainConfig&, const Manifest&, const std::filesystem::path&, const FitOptions&);

}  // namespace qtn
