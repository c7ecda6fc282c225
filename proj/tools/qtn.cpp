// qtn: train, eval, predict and synth subcommands.
#include <algorithm>
#include <array>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "qtn/checkpoint.hpp"
#include "qtn/data.hpp"
#include "qtn/metrics.hpp"
#include "qtn/model.hpp"
#include "qtn/trainer.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

enum Status : int { kOk = 0, kUsage = 1, kDataError = 2, kRuntimeError = 3 };

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& seed) {
  if (seed) return *seed;
  std::random_device rd;
  const std::uint64_t s = (static_cast<std::uint64_t>(rd()) << 32) | rd();
  std::cerr << "seed: " << s << " (randomly chosen; pass --seed " << s << " to repeat)\n";
  return s;
}

void require_file(const fs::path& p, const std::string& what) {
  if (!fs::is_regular_file(p)) throw qtn::DataError(what + " not found: " + p.string());
}

qtn::Precision precision_for(const std::string& flag, const fs::path& weights) {
  if (!flag.empty()) return qtn::parse_precision(flag);
  return qtn::read_checkpoint_header(weights).dtype == qtn::Dtype::kF64 ? qtn::Precision::kF64
                                                                        : qtn::Precision::kF32;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string manifest;
  std::string out;
  std::size_t epochs = 200;
  double lr = 1e-4;
  std::size_t batch_size = 8;
  std::optional<std::uint64_t> seed;
  std::string precision = "f32";
  bool resume = false;
  std::size_t base_channels = 64;
  std::size_t input_size = 256;
  std::size_t dense_kernel = 5;
  double clip_grad_norm = 0.0;
  double threshold = 0.5;
  std::string l2_denominator = "class_sets";
};

template <typename T>
int run_train(const qtn::TrainConfig& cfg, const TrainArgs& a) {
  require_file(a.manifest, "manifest");
  const qtn::Manifest manifest = qtn::load_manifest(a.manifest);
  qtn::FitOptions opts;
  opts.resume = a.resume;
  opts.log = [](const std::string& m) { std::cerr << m << "\n"; };
  opts.on_epoch = [&](const qtn::EpochRecord& r) {
    std::fprintf(stderr, "epoch %zu/%zu loss %.5f train_acc %.4f val_acc %.4f val_dice %.4f (%.1fs)\n", r.epoch,
                 cfg.max_epochs, r.train_loss, r.train_acc, r.val_acc, r.val_dice, r.seconds);
  };
  const qtn::FitResult res = qtn::fit<T>(cfg, manifest, a.out, opts);
  std::cout << "best val dice " << res.best_val_dice << " at epoch " << res.best_epoch << "\n"
            << "wrote " << res.last.string() << ", " << res.best.string() << ", " << res.curve.string() << "\n";
  return kOk;
}

int cmd_train(const TrainArgs& a) {
  qtn::TrainConfig cfg;
  cfg.model.base_channels = a.base_channels;
  cfg.model.dense_kernel = a.dense_kernel;
  cfg.model.input_h = a.input_size;
  cfg.model.input_w = a.input_size;
  cfg.learning_rate = a.lr;
  cfg.max_epochs = a.epochs;
  cfg.batch_size = a.batch_size;
  const std::uint64_t seed = resolve_seed(a.seed);
  cfg.shuffle_seed = seed;
  cfg.init_seed = seed;
  cfg.precision = qtn::parse_precision(a.precision);
  cfg.clip_grad_norm = a.clip_grad_norm;
  cfg.loss.threshold = a.threshold;
  if (a.l2_denominator == "class_sets") {
    cfg.loss.l2_denominator = qtn::L2Denominator::kClassSets;
  } else if (a.l2_denominator == "false_sets") {
    cfg.loss.l2_denominator = qtn::L2Denominator::kFalseSets;
  } else {
    throw qtn::ConfigError("l2-denominator must be class_sets or false_sets");
  }
  cfg.validate();
  return cfg.precision == qtn::Precision::kF64 ? run_train<double>(cfg, a) : run_train<float>(cfg, a);
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string weights;
  std::string manifest;
  std::string split = "test";
  std::string out;
  std::string precision;
  std::size_t roc_max_samples = 1'000'000;
  std::optional<std::uint64_t> seed;
};

template <typename T>
int run_eval(const EvalArgs& a, std::uint64_t seed) {
  qtn::Checkpoint<T> ck = qtn::load_weights<T>(a.weights);
  const qtn::Manifest manifest = qtn::load_manifest(a.manifest);
  qtn::EvalOptions opts;
  opts.roc_max_samples = a.roc_max_samples;
  opts.seed = seed;
  const qtn::EvalReport r = qtn::evaluate(ck.params, manifest, qtn::parse_split(a.split), opts);
  qtn::write_eval_outputs(r, a.out);
  std::printf("split %s: %zu slices, pixel accuracy %.4f, foreground dice %.4f +/- %.4f, %.2f ms/slice\n",
              r.split.c_str(), r.slices, r.accuracy, r.dice.foreground.mean, r.dice.foreground.std,
              r.ms_per_slice);
  for (std::size_t c = 0; c < r.roc.size(); ++c) {
    const auto& d = r.dice.per_class[c];
    std::printf("  class %zu %-10s dice %s", c, std::string(qtn::class_name(c)).c_str(),
                d.values.empty() ? "n/a" : (std::to_string(d.mean) + " +/- " + std::to_string(d.std)).c_str());
    if (r.roc[c].curve) {
      std::printf("  auc %.4f\n", r.roc[c].curve->auc);
    } else {
      std::printf("  auc n/a (%s)\n", r.roc[c].error.c_str());
    }
  }
  std::printf("wrote %s\n", (fs::path(a.out) / "report.json").string().c_str());
  return kOk;
}

int cmd_eval(const EvalArgs& a) {
  require_file(a.weights, "weights");
  require_file(a.manifest, "manifest");
  const std::uint64_t seed = resolve_seed(a.seed);
  return precision_for(a.precision, a.weights) == qtn::Precision::kF64 ? run_eval<double>(a, seed)
                                                                        : run_eval<float>(a, seed);
}

// ---------------------------------------------------------------------------

struct PredictArgs {
  std::string weights;
  std::string input;
  std::string out;
  std::string truth;
  std::string precision;
  bool overlay = false;
  bool resize = false;
};

std::vector<fs::path> list_slices(const fs::path& p) {
  std::vector<fs::path> files;
  if (fs::is_directory(p)) {
    for (const auto& e : fs::directory_iterator(p)) {
      if (e.is_regular_file() && e.path().extension() == ".qtns") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw qtn::DataError("no .qtns files in " + p.string());
  } else {
    require_file(p, "input");
    files.push_back(p);
  }
  return files;
}

bool is_boundary(const qtn::Mask2D& m, std::size_t y, std::size_t x) {
  const std::uint8_t v = m.labels[y * m.w + x];
  if (v == 0) return false;
  if (y == 0 || x == 0 || y + 1 == m.h || x + 1 == m.w) return true;
  return m.labels[(y - 1) * m.w + x] != v || m.labels[(y + 1) * m.w + x] != v || m.labels[y * m.w + x - 1] != v ||
         m.labels[y * m.w + x + 1] != v;
}

// Grayscale slice with class boundaries: ground truth green, predicted
// boundaries blue where the class is right and red where it is wrong.
void write_overlay(const fs::path& path, const qtn::Image2D& img, const qtn::Mask2D& pred, const qtn::Mask2D* truth) {
  std::string data = "P6\n" + std::to_string(img.w) + " " + std::to_string(img.h) + "\n255\n";
  const std::size_t header = data.size();
  data.resize(header + img.h * img.w * 3);
  for (std::size_t y = 0; y < img.h; ++y) {
    for (std::size_t x = 0; x < img.w; ++x) {
      const std::size_t i = y * img.w + x;
      const auto g = static_cast<unsigned char>(std::clamp(img.pixels[i], 0.0f, 1.0f) * 255.0f + 0.5f);
      std::array<unsigned char, 3> rgb{g, g, g};
      if (truth != nullptr && is_boundary(*truth, y, x)) rgb = {0, 255, 0};
      if (is_boundary(pred, y, x)) {
        const bool right = truth == nullptr || truth->labels[i] == pred.labels[i];
        rgb = right ? std::array<unsigned char, 3>{0, 0, 255} : std::array<unsigned char, 3>{255, 0, 0};
      }
      std::copy(rgb.begin(), rgb.end(), data.begin() + static_cast<std::ptrdiff_t>(header + 3 * i));
    }
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw qtn::IoError("cannot write " + path.string());
  f << data;
  if (!f) throw qtn::IoError("write failed for " + path.string());
}

template <typename T>
int run_predict(const PredictArgs& a) {
  qtn::Checkpoint<T> ck = qtn::load_weights<T>(a.weights);
  const qtn::ModelConfig& mc = ck.params.config;
  const auto inputs = list_slices(a.input);
  fs::path truth_dir;
  fs::path truth_file;
  if (!a.truth.empty()) {
    if (fs::is_directory(a.truth)) {
      truth_dir = a.truth;
    } else {
      require_file(a.truth, "truth mask");
      if (inputs.size() != 1) throw qtn::DataError("--truth FILE needs a single input file");
      truth_file = a.truth;
    }
  }
  try {
    fs::create_directories(a.out);
  } catch (const fs::filesystem_error& e) {
    throw qtn::IoError("cannot create " + a.out + ": " + e.what());
  }

  qtn::Network<T> net(ck.params);
  double total_ms = 0.0;
  const std::size_t div = mc.spatial_divisor();
  for (const auto& in : inputs) {
    qtn::SliceSample s;
    s.image = qtn::read_qtns_image(in);
    qtn::normalize_minmax(s.image);
    const std::size_t h0 = s.image.h;
    const std::size_t w0 = s.image.w;
    s.mask = qtn::Mask2D{h0, w0, std::vector<std::uint8_t>(h0 * w0, 0)};
    qtn::SliceSample run = s;
    if (h0 % div != 0 || w0 % div != 0) {
      if (!a.resize) {
        throw qtn::DataError(in.string() + ": size " + std::to_string(h0) + "x" + std::to_string(w0) +
                             " is not a multiple of " + std::to_string(div) + " (use --resize)");
      }
      run = qtn::resize_sample(s, mc.input_h, mc.input_w);
    }
    auto [x, labels] = qtn::make_batch<T>({run});
    const auto t0 = std::chrono::steady_clock::now();
    const qtn::Tensor<T> probs = net.forward(x, qtn::Mode::kInfer, false);
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    total_ms += ms;
    qtn::Mask2D pred = qtn::argmax_mask(probs);
    if (pred.h != h0 || pred.w != w0) pred = qtn::resize_nearest(pred, h0, w0);

    const fs::path out_mask = fs::path(a.out) / in.filename();
    qtn::write_qtns_mask(out_mask, pred);

    std::optional<qtn::Mask2D> truth;
    if (!truth_file.empty()) truth = qtn::read_qtns_mask(truth_file, mc.num_classes);
    if (!truth_dir.empty() && fs::exists(truth_dir / in.filename())) {
      truth = qtn::read_qtns_mask(truth_dir / in.filename(), mc.num_classes);
    }
    if (truth && (truth->h != h0 || truth->w != w0)) throw qtn::DataError("truth mask size differs for " + in.string());

    std::printf("%s %.2f ms", in.filename().string().c_str(), ms);
    if (truth) {
      std::vector<double> fg;
      for (std::size_t c = 1; c < mc.num_classes; ++c) {
        if (auto d = qtn::dice_per_class(pred, *truth, static_cast<std::uint8_t>(c))) fg.push_back(*d);
      }
      if (!fg.empty()) std::printf(" dice %.4f", qtn::summarize(fg).mean);
    }
    std::printf("\n");
    if (a.overlay) {
      fs::path ppm = out_mask;
      ppm.replace_extension(".ppm");
      write_overlay(ppm, s.image, pred, truth ? &*truth : nullptr);
    }
  }
  std::printf("%zu slices, mean %.2f ms/slice\n", inputs.size(), total_ms / static_cast<double>(inputs.size()));
  return kOk;
}

int cmd_predict(const PredictArgs& a) {
  require_file(a.weights, "weights");
  return precision_for(a.precision, a.weights) == qtn::Precision::kF64 ? run_predict<double>(a)
                                                                        : run_predict<float>(a);
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string out;
  std::size_t n = 0;
  std::optional<std::uint64_t> seed;
  std::size_t size = 256;
  std::size_t slices_per_patient = 1;
  std::vector<double> ratios{0.8, 0.1, 0.1};
};

int cmd_synth(const SynthArgs& a) {
  if (a.n == 0) throw UsageError("--n must be at least 1");
  if (a.ratios.size() != 3) throw UsageError("--ratios takes three values: train,val,test");
  qtn::SynthConfig sc;
  sc.count = a.n;
  sc.size = a.size;
  sc.seed = resolve_seed(a.seed);
  sc.slices_per_patient = a.slices_per_patient;
  sc.validate();
  const std::array<double, 3> ratios{a.ratios[0], a.ratios[1], a.ratios[2]};
  // Check the split is possible before writing anything.
  qtn::validate_split_ratios(ratios);
  qtn::Manifest probe;
  for (std::size_t i = 0; i < sc.count; i += sc.slices_per_patient) {
    probe.rows.push_back(qtn::ManifestRow{.patient_id = std::to_string(i)});
  }
  qtn::split_by_patient(probe, ratios, sc.seed);

  qtn::SynthResult res = qtn::synth_generate(sc, a.out);
  const qtn::Manifest split = qtn::split_by_patient(res.manifest, ratios, sc.seed);
  qtn::write_manifest(split, fs::path(a.out) / "manifest.csv");

  const json info{{"count", sc.count},
                  {"size", sc.size},
                  {"seed", sc.seed},
                  {"slices_per_patient", sc.slices_per_patient},
                  {"ratios", a.ratios},
                  {"slices", {{"train", split.count(qtn::Split::kTrain)},
                              {"val", split.count(qtn::Split::kVal)},
                              {"test", split.count(qtn::Split::kTest)}}}};
  const fs::path info_path = fs::path(a.out) / "synth.json";
  std::ofstream f(info_path, std::ios::binary);
  if (!f) throw qtn::IoError("cannot write " + info_path.string());
  f << info.dump(2) << "\n";
  std::printf("wrote %zu slices to %s (train %zu, val %zu, test %zu)\n", sc.count, a.out.c_str(),
              split.count(qtn::Split::kTrain), split.count(qtn::Split::kVal), split.count(qtn::Split::kTest));
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"QuickTumorNet brain tumor segmentation"};
  app.require_subcommand(1);
  app.set_config("--config", "", "Read key=value options from a file");

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train on a manifest's train split");
  train->add_option("--manifest", ta.manifest, "Manifest CSV")->required();
  train->add_option("--out", ta.out, "Output directory")->required();
  train->add_option("--epochs,--max-epochs", ta.epochs, "Maximum epochs")->capture_default_str();
  train->add_option("--lr,--learning-rate", ta.lr, "Adam learning rate")->capture_default_str();
  train->add_option("--batch-size", ta.batch_size, "Slices per batch")->capture_default_str();
  train->add_option("--seed", ta.seed, "Seed for initialization and shuffling");
  train->add_option("--precision", ta.precision, "f32 or f64")->check(CLI::IsMember({"f32", "f64"}))
      ->capture_default_str();
  train->add_flag("--resume", ta.resume, "Continue from OUT/last.qtnw");
  train->add_option("--base-channels", ta.base_channels, "Feature maps per block")->capture_default_str();
  train->add_option("--input-size", ta.input_size, "Model input height and width")->capture_default_str();
  train->add_option("--dense-kernel", ta.dense_kernel, "Dense block kernel size")->capture_default_str();
  train->add_option("--clip-grad-norm", ta.clip_grad_norm, "Global gradient norm cap (0 = off)")
      ->capture_default_str();
  train->add_option("--threshold", ta.threshold, "Loss false-set threshold")->capture_default_str();
  train->add_option("--l2-denominator", ta.l2_denominator, "class_sets or false_sets")
      ->check(CLI::IsMember({"class_sets", "false_sets"}))
      ->capture_default_str();

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a manifest split");
  eval->add_option("--weights", ea.weights, "Checkpoint (.qtnw)")->required();
  eval->add_option("--manifest", ea.manifest, "Manifest CSV")->required();
  eval->add_option("--split", ea.split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}))
      ->capture_default_str();
  eval->add_option("--out", ea.out, "Report directory")->required();
  eval->add_option("--precision", ea.precision, "f32 or f64 (default: checkpoint dtype)")
      ->check(CLI::IsMember({"f32", "f64"}));
  eval->add_option("--roc-max-samples", ea.roc_max_samples, "Per-class ROC pixel cap")->capture_default_str();
  eval->add_option("--seed", ea.seed, "Seed for ROC subsampling");

  PredictArgs pa;
  auto* predict = app.add_subcommand("predict", "Segment QTNS image files");
  predict->add_option("--weights", pa.weights, "Checkpoint (.qtnw)")->required();
  predict->add_option("--input", pa.input, "QTNS image file or directory")->required();
  predict->add_option("--out", pa.out, "Output directory for masks")->required();
  predict->add_option("--truth", pa.truth, "Ground truth mask file or directory (for overlay and Dice)");
  predict->add_option("--precision", pa.precision, "f32 or f64 (default: checkpoint dtype)")
      ->check(CLI::IsMember({"f32", "f64"}));
  predict->add_flag("--overlay", pa.overlay, "Also write a PPM overlay per slice");
  predict->add_flag("--resize", pa.resize, "Resize inputs whose size the model cannot take");

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  synth->add_option("--out", sa.out, "Output directory")->required();
  synth->add_option("--n", sa.n, "Number of slices")->required();
  synth->add_option("--seed", sa.seed, "Generator and split seed");
  synth->add_option("--size", sa.size, "Slice height and width")->capture_default_str();
  synth->add_option("--slices-per-patient", sa.slices_per_patient, "Slices sharing a patient id")
      ->capture_default_str();
  synth->add_option("--ratios", sa.ratios, "train,val,test patient fractions")->delimiter(',')->expected(3)
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*train) return cmd_train(ta);
    if (*eval) return cmd_eval(ea);
    if (*predict) return cmd_predict(pa);
    if (*synth) return cmd_synth(sa);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n" << app.help();
    return kUsage;
  } catch (const qtn::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const qtn::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const qtn::FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kDataError;
  } catch (const qtn::ShapeError& e) {
    std::cerr << "shape error: " << e.what() << "\n";
    return kDataError;
  } catch (const qtn::DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << "\n";
    return kRuntimeError;
  } catch (const qtn::IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kRuntimeError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return kUsage;
}
