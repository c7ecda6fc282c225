#include "qtn/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "binary_io.hpp"

namespace qtn {

using nlohmann::json;

std::optional<double> dice_per_class(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth,
                                     std::uint8_t c) {
  if (pred.size() != truth.size()) {
    throw ShapeError("dice: masks hold " + std::to_string(pred.size()) + " and " + std::to_string(truth.size()) +
                     " pixels");
  }
  std::size_t a = 0;
  std::size_t b = 0;
  std::size_t both = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool pa = pred[i] == c;
    const bool tb = truth[i] == c;
    a += pa;
    b += tb;
    both += pa && tb;
  }
  if (b == 0) return std::nullopt;
  return 2.0 * static_cast<double>(both) / static_cast<double>(a + b);
}

std::optional<double> dice_per_class(const Mask2D& pred, const Mask2D& truth, std::uint8_t c) {
  if (pred.h != truth.h || pred.w != truth.w) {
    throw ShapeError("dice: mask dims " + std::to_string(pred.h) + "x" + std::to_string(pred.w) + " vs " +
                     std::to_string(truth.h) + "x" + std::to_string(truth.w));
  }
  return dice_per_class(pred.labels, truth.labels, c);
}

// ---------------------------------------------------------------------------

void ConfusionMatrix::add(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth) {
  if (pred.size() != truth.size()) throw ShapeError("confusion_matrix: mask sizes differ");
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] >= num_classes_ || truth[i] >= num_classes_) {
      throw ShapeError("confusion_matrix: class id out of range at pixel " + std::to_string(i));
    }
    ++counts_[truth[i] * num_classes_ + pred[i]];
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.num_classes_ != num_classes_) throw ShapeError("confusion_matrix: class counts differ");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::uint64_t ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});
}

std::uint64_t ConfusionMatrix::trace() const {
  std::uint64_t t = 0;
  for (std::size_t c = 0; c < num_classes_; ++c) t += at(c, c);
  return t;
}

double ConfusionMatrix::accuracy() const {
  const std::uint64_t n = total();
  return n == 0 ? 0.0 : static_cast<double>(trace()) / static_cast<double>(n);
}

std::vector<std::optional<std::vector<double>>> ConfusionMatrix::row_percent() const {
  std::vector<std::optional<std::vector<double>>> rows(num_classes_);
  for (std::size_t t = 0; t < num_classes_; ++t) {
    std::uint64_t sum = 0;
    for (std::size_t p = 0; p < num_classes_; ++p) sum += at(t, p);
    if (sum == 0) continue;
    std::vector<double> r(num_classes_);
    for (std::size_t p = 0; p < num_classes_; ++p) {
      r[p] = 100.0 * static_cast<double>(at(t, p)) / static_cast<double>(sum);
    }
    rows[t] = std::move(r);
  }
  return rows;
}

ConfusionMatrix confusion_matrix(const std::vector<Mask2D>& preds, const std::vector<Mask2D>& truths,
                                 std::size_t num_classes) {
  if (preds.size() != truths.size()) throw ShapeError("confusion_matrix: unpaired masks");
  ConfusionMatrix cm(num_classes);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i].h != truths[i].h || preds[i].w != truths[i].w) {
      throw ShapeError("confusion_matrix: mask pair " + std::to_string(i) + " differs in size");
    }
    cm.add(preds[i].labels, truths[i].labels);
  }
  return cm;
}

DiceStats summarize(std::vector<double> values) {
  DiceStats s;
  s.values = std::move(values);
  if (s.values.empty()) return s;
  double sum = 0.0;
  for (double v : s.values) sum += v;
  s.mean = sum / static_cast<double>(s.values.size());
  double sq = 0.0;
  for (double v : s.values) sq += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(sq / static_cast<double>(s.values.size()));
  return s;
}

// ---------------------------------------------------------------------------

namespace {

double open_unit(std::mt19937_64& rng) {
  // (0, 1): 53 random bits offset by half an ulp step.
  return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

RocCurve sweep(std::vector<std::pair<double, std::uint8_t>> samples, int class_id) {
  RocCurve roc;
  for (const auto& s : samples) (s.second ? roc.positives : roc.negatives)++;
  const std::string who = class_id >= 0 ? "class " + std::to_string(class_id) : std::string("input");
  if (roc.positives == 0 || roc.negatives == 0) {
    throw DataError("roc_auc: " + who + " has " + std::to_string(roc.positives) + " positive and " +
                    std::to_string(roc.negatives) + " negative pixels; both are required");
  }
  std::sort(samples.begin(), samples.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  const double np = static_cast<double>(roc.positives);
  const double nn = static_cast<double>(roc.negatives);
  std::size_t tp = 0;
  std::size_t fp = 0;
  roc.points.emplace_back(0.0, 0.0);
  for (std::size_t i = 0; i < samples.size();) {
    const double score = samples[i].first;
    while (i < samples.size() && samples[i].first == score) {
      (samples[i].second ? tp : fp)++;
      ++i;
    }
    roc.points.emplace_back(static_cast<double>(fp) / nn, static_cast<double>(tp) / np);
  }
  double auc = 0.0;
  for (std::size_t i = 1; i < roc.points.size(); ++i) {
    const auto& [x0, y0] = roc.points[i - 1];
    const auto& [x1, y1] = roc.points[i];
    auc += (x1 - x0) * (y0 + y1) / 2.0;
  }
  roc.auc = auc;
  return roc;
}

}  // namespace

RocReservoir::RocReservoir(std::size_t capacity, std::uint64_t seed) : capacity_(capacity), rng_(seed) {}

void RocReservoir::schedule() {
  next_ += static_cast<std::uint64_t>(std::floor(std::log(open_unit(rng_)) / std::log1p(-w_))) + 1;
}

void RocReservoir::add(double score, bool positive) {
  if (capacity_ == 0 || scores_.size() < capacity_) {
    scores_.push_back(score);
    labels_.push_back(positive);
    ++seen_;
    if (capacity_ != 0 && scores_.size() == capacity_) {
      w_ = std::exp(std::log(open_unit(rng_)) / static_cast<double>(capacity_));
      next_ = seen_ - 1;
      schedule();
    }
    return;
  }
  if (seen_ == next_) {
    const std::size_t slot = static_cast<std::size_t>(rng_() % capacity_);
    scores_[slot] = score;
    labels_[slot] = positive;
    w_ *= std::exp(std::log(open_unit(rng_)) / static_cast<double>(capacity_));
    schedule();
  }
  ++seen_;
}

RocCurve RocReservoir::finish(int class_id) const {
  std::vector<std::pair<double, std::uint8_t>> samples(scores_.size());
  for (std::size_t i = 0; i < scores_.size(); ++i) samples[i] = {scores_[i], labels_[i]};
  return sweep(std::move(samples), class_id);
}

RocCurve roc_auc(std::span<const double> scores, std::span<const std::uint8_t> positive, std::size_t max_samples,
                 std::uint64_t seed, int class_id) {
  if (scores.size() != positive.size()) throw ShapeError("roc_auc: scores and labels differ in length");
  if (max_samples == 0 || scores.size() <= max_samples) {
    std::vector<std::pair<double, std::uint8_t>> samples(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) samples[i] = {scores[i], positive[i] != 0};
    return sweep(std::move(samples), class_id);
  }
  RocReservoir r(max_samples, seed);
  for (std::size_t i = 0; i < scores.size(); ++i) r.add(scores[i], positive[i] != 0);
  return r.finish(class_id);
}

// ---------------------------------------------------------------------------

EvalAccumulator::EvalAccumulator(std::size_t num_classes, const EvalOptions& opts)
    : num_classes_(num_classes), opts_(opts), confusion_(num_classes), dice_(num_classes) {
  for (std::size_t c = 0; c < num_classes; ++c) roc_.emplace_back(opts.roc_max_samples, opts.seed + c);
}

void EvalAccumulator::add_slice(const Mask2D& pred, const Mask2D& truth, std::span<const double> probs,
                                double forward_ms) {
  if (pred.h != truth.h || pred.w != truth.w) throw ShapeError("evaluate: prediction and truth differ in size");
  confusion_.add(pred.labels, truth.labels);
  for (std::size_t c = 0; c < num_classes_; ++c) {
    if (auto d = dice_per_class(pred, truth, static_cast<std::uint8_t>(c))) dice_[c].push_back(*d);
  }
  if (opts_.compute_roc && !probs.empty()) {
    const std::size_t hw = truth.h * truth.w;
    if (probs.size() != num_classes_ * hw) throw ShapeError("evaluate: probability planes do not match mask");
    for (std::size_t c = 0; c < num_classes_; ++c) {
      for (std::size_t i = 0; i < hw; ++i) roc_[c].add(probs[c * hw + i], truth.labels[i] == c);
    }
  }
  total_ms_ += forward_ms;
  ++slices_;
}

EvalReport EvalAccumulator::finish() const {
  EvalReport r;
  r.slices = slices_;
  r.confusion = confusion_;
  r.accuracy = confusion_.accuracy();
  r.ms_per_slice = slices_ == 0 ? 0.0 : total_ms_ / static_cast<double>(slices_);
  std::vector<double> fg;
  for (std::size_t c = 0; c < num_classes_; ++c) {
    r.dice.per_class.push_back(summarize(dice_[c]));
    if (c > 0) fg.insert(fg.end(), dice_[c].begin(), dice_[c].end());
  }
  r.dice.foreground = summarize(std::move(fg));
  for (std::size_t c = 0; c < num_classes_; ++c) {
    ClassRoc cr;
    if (!opts_.compute_roc) {
      cr.error = "not computed";
    } else {
      try {
        cr.curve = roc_[c].finish(static_cast<int>(c));
      } catch (const DataError& e) {
        cr.error = e.what();
      }
    }
    r.roc.push_back(std::move(cr));
  }
  return r;
}

template <typename T>
Mask2D argmax_mask(const Tensor<T>& probs, std::size_t index) {
  const Shape& s = probs.shape();
  Mask2D m{s.h, s.w, std::vector<std::uint8_t>(s.plane())};
  const T* base = probs.plane(index, 0);
  for (std::size_t i = 0; i < s.plane(); ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < s.c; ++c) {
      if (base[c * s.plane() + i] > base[best * s.plane() + i]) best = c;
    }
    m.labels[i] = static_cast<std::uint8_t>(best);
  }
  return m;
}

template <typename T>
EvalReport evaluate(Parameters<T>& params, const Manifest& manifest, Split split, const EvalOptions& opts) {
  const auto rows = manifest.rows_in(split);
  if (rows.empty()) throw DataError("evaluate: split '" + std::string(to_string(split)) + "' has no slices");
  const ModelConfig& cfg = params.config;
  EvalAccumulator acc(cfg.num_classes, opts);
  Network<T> net(params);
  std::vector<double> planes;
  for (const auto& row : rows) {
    SliceSample s = load_sample(manifest, row, cfg.input_h, cfg.input_w);
    auto [x, labels] = make_batch<T>({s});
    const auto t0 = std::chrono::steady_clock::now();
    Tensor<T> probs = net.forward(x, Mode::kInfer, false);
    const auto t1 = std::chrono::steady_clock::now();
    const double ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    Mask2D pred = argmax_mask(probs);
    planes.assign(probs.data(), probs.data() + probs.size());
    acc.add_slice(pred, s.mask, opts.compute_roc ? std::span<const double>(planes) : std::span<const double>{}, ms);
  }
  EvalReport report = acc.finish();
  report.split = std::string(to_string(split));
  report.fingerprint = dataset_fingerprint(manifest, split);
  return report;
}

std::string dataset_fingerprint(const Manifest& manifest, Split split) {
  std::string text;
  for (const auto& r : manifest.rows) {
    if (r.split != split) continue;
    std::error_code ec;
    const auto si = fs::file_size(manifest.resolve(r.image), ec);
    const auto sm = fs::file_size(manifest.resolve(r.mask), ec);
    text += r.image.generic_string() + "," + r.mask.generic_string() + "," + r.patient_id + "," +
            std::to_string(si) + "," + std::to_string(sm) + "\n";
  }
  char buf[32];
  std::snprintf(buf, sizeof(buf), "crc32:%08x",
                detail::crc32_of(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size())));
  return buf;
}

// ---------------------------------------------------------------------------

namespace {

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json stats_json(const DiceStats& s) {
  json j{{"count", s.values.size()}, {"values", s.values}};
  j["mean"] = s.values.empty() ? json(nullptr) : json(s.mean);
  j["std"] = s.values.empty() ? json(nullptr) : json(s.std);
  return j;
}

}  // namespace

json to_json(const EvalReport& r) {
  const std::size_t nc = r.confusion.num_classes();
  json dice_classes = json::array();
  for (std::size_t c = 0; c < r.dice.per_class.size(); ++c) {
    json j = stats_json(r.dice.per_class[c]);
    j["class"] = c;
    j["name"] = class_name(c);
    dice_classes.push_back(std::move(j));
  }

  json labels = json::array();
  json counts = json::array();
  json percents = json::array();
  const auto rows = r.confusion.row_percent();
  for (std::size_t t = 0; t < nc; ++t) {
    labels.push_back(class_name(t));
    json row = json::array();
    for (std::size_t p = 0; p < nc; ++p) row.push_back(r.confusion.at(t, p));
    counts.push_back(std::move(row));
    percents.push_back(rows[t] ? json(*rows[t]) : json(nullptr));
  }

  json roc_classes = json::array();
  for (std::size_t c = 0; c < r.roc.size(); ++c) {
    const auto& cr = r.roc[c];
    json j{{"class", c}, {"name", class_name(c)}};
    if (cr.curve) {
      j["auc"] = cr.curve->auc;
      j["positives"] = cr.curve->positives;
      j["negatives"] = cr.curve->negatives;
      j["points"] = cr.curve->points.size();
      j["csv"] = "roc_class" + std::to_string(c) + ".csv";
    } else {
      j["auc"] = nullptr;
      j["error"] = cr.error;
    }
    roc_classes.push_back(std::move(j));
  }

  return json{
      {"split", r.split},
      {"slices", r.slices},
      {"dice", {{"classes", dice_classes}, {"foreground", stats_json(r.dice.foreground)}}},
      {"confusion", {{"labels", labels}, {"counts", counts}, {"row_percent", percents}, {"total", r.confusion.total()}}},
      {"roc", {{"classes", roc_classes}}},
      {"accuracy", number_or_null(r.accuracy)},
      {"accuracy_kind", "pixel"},
      {"ms_per_slice", number_or_null(r.ms_per_slice)},
      {"fingerprint", r.fingerprint},
  };
}

void write_eval_outputs(const EvalReport& report, const fs::path& dir) {
  try {
    fs::create_directories(dir);
  } catch (const fs::filesystem_error& e) {
    throw IoError("cannot create " + dir.string() + ": " + e.what());
  }
  auto write_text = [](const fs::path& path, const std::string& text) {
    detail::write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  };
  write_text(dir / "report.json", to_json(report).dump(2) + "\n");

  const std::size_t nc = report.confusion.num_classes();
  std::string pct = "truth";
  std::string cnt = "truth";
  for (std::size_t c = 0; c < nc; ++c) {
    pct += "," + std::string(class_name(c));
    cnt += "," + std::string(class_name(c));
  }
  pct += "\n";
  cnt += "\n";
  const auto rows = report.confusion.row_percent();
  char buf[64];
  for (std::size_t t = 0; t < nc; ++t) {
    pct += class_name(t);
    cnt += class_name(t);
    for (std::size_t p = 0; p < nc; ++p) {
      if (rows[t]) {
        std::snprintf(buf, sizeof(buf), ",%.2f", (*rows[t])[p]);
        pct += buf;
      } else {
        pct += ",";
      }
      cnt += "," + std::to_string(report.confusion.at(t, p));
    }
    pct += "\n";
    cnt += "\n";
  }
  write_text(dir / "confusion.csv", pct);
  write_text(dir / "confusion_counts.csv", cnt);

  for (std::size_t c = 0; c < report.roc.size(); ++c) {
    if (!report.roc[c].curve) continue;
    std::string csv = "fpr,tpr\n";
    for (const auto& [x, y] : report.roc[c].curve->points) {
      std::snprintf(buf, sizeof(buf), "%.17g,%.17g\n", x, y);
      csv += buf;
    }
    write_text(dir / ("roc_class" + std::to_string(c) + ".csv"), csv);
  }
}

template Mask2D argmax_mask<float>(const Tensor<float>&, std::size_t);
template Mask2D argmax_mask<double>(const Tensor<double>&, std::size_t);
template EvalReport evaluate<float>(Parameters<float>&, const Manifest&, Split, const EvalOptions&);
template EvalReport evaluate<double>(Parameters<double>&, const Manifest&, Split, const EvalOptions&);

}  // namespace qtn
