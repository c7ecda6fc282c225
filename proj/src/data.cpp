#include "qtn/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "binary_io.hpp"

namespace qtn {

namespace {

constexpr char kSliceMagic[4] = {'Q', 'T', 'N', 'S'};
constexpr std::uint8_t kKindImage = 1;
constexpr std::uint8_t kKindMask = 2;
constexpr std::uint8_t kDtypeF32 = 1;
constexpr std::uint8_t kDtypeU8 = 2;

struct SliceHeader {
  std::uint8_t kind;
  std::uint8_t dtype;
  std::size_t h;
  std::size_t w;
};

void check_dims(std::size_t h, std::size_t w, const std::string& what) {
  if (h == 0 || w == 0 || h > kMaxSliceDim || w > kMaxSliceDim) {
    throw FormatError(FormatError::Kind::kMalformed, what + ": slice dims " + std::to_string(h) + "x" +
                                                         std::to_string(w) + " outside 1.." +
                                                         std::to_string(kMaxSliceDim));
  }
}

void write_slice(const fs::path& path, std::uint8_t kind, std::uint8_t dtype, std::size_t h, std::size_t w,
                 const void* data, std::size_t bytes) {
  check_dims(h, w, path.string());
  detail::ByteWriter out;
  out.bytes(kSliceMagic, 4);
  out.u32(kSliceVersion);
  out.u8(kind);
  out.u8(dtype);
  out.u32(static_cast<std::uint32_t>(h));
  out.u32(static_cast<std::uint32_t>(w));
  if (dtype == kDtypeF32) {
    out.array<float>(std::span<const float>(static_cast<const float*>(data), bytes / 4));
  } else {
    out.bytes(data, bytes);
  }
  out.finish_with_crc();
  detail::write_file_atomic(path, out.buffer());
}

SliceHeader read_slice_header(detail::ByteReader& in, const std::string& what) {
  in.need(4);
  if (in.string(4) != std::string(kSliceMagic, 4)) {
    throw FormatError(FormatError::Kind::kBadMagic, what + ": not a QTNS slice (bad magic)");
  }
  const std::uint32_t version = in.u32();
  if (version != kSliceVersion) {
    throw FormatError(FormatError::Kind::kUnsupportedVersion,
                      what + ": slice format version " + std::to_string(version) +
                          " is not supported (this build reads version " + std::to_string(kSliceVersion) + ")");
  }
  SliceHeader h{};
  h.kind = in.u8();
  h.dtype = in.u8();
  if (h.kind != kKindImage && h.kind != kKindMask) {
    throw FormatError(FormatError::Kind::kBadKind, what + ": unknown slice kind " + std::to_string(h.kind));
  }
  if (h.dtype != kDtypeF32 && h.dtype != kDtypeU8) {
    throw FormatError(FormatError::Kind::kBadDtype, what + ": unknown dtype code " + std::to_string(h.dtype));
  }
  h.h = in.u32();
  h.w = in.u32();
  check_dims(h.h, h.w, what);
  const std::size_t width = h.dtype == kDtypeF32 ? 4 : 1;
  if (in.remaining() < h.h * h.w * width + 4) {
    throw FormatError(FormatError::Kind::kTruncated,
                      what + ": truncated (declares " + std::to_string(h.h) + "x" + std::to_string(h.w) +
                          " but holds " + std::to_string(in.remaining()) + " bytes after the header)");
  }
  if (in.remaining() > h.h * h.w * width + 4) {
    throw FormatError(FormatError::Kind::kMalformed, what + ": unexpected trailing bytes");
  }
  return h;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur.push_back('"');
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cur.push_back(ch);
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out.push_back('"');
    out.push_back(ch);
  }
  out.push_back('"');
  return out;
}

std::vector<std::uint8_t> classes_present(const Mask2D& mask) {
  std::array<bool, 256> seen{};
  for (std::uint8_t v : mask.labels) seen[v] = true;
  std::vector<std::uint8_t> out;
  for (std::size_t c = 1; c < seen.size(); ++c) {
    if (seen[c]) out.push_back(static_cast<std::uint8_t>(c));
  }
  return out;
}

void check_target(std::size_t th, std::size_t tw) {
  if (th == 0 || tw == 0 || th % 16 != 0 || tw % 16 != 0) {
    throw ConfigError("resize target " + std::to_string(th) + "x" + std::to_string(tw) +
                      " must be a positive multiple of 16");
  }
}

}  // namespace

// ---------------------------------------------------------------------------

std::string_view class_name(std::size_t id) {
  static constexpr std::array<std::string_view, kNumClasses> kNames = {"normal", "meningioma", "glioma",
                                                                      "pituitary"};
  return id < kNames.size() ? kNames[id] : std::string_view("unknown");
}

std::string_view to_string(Plane p) {
  switch (p) {
    case Plane::kAxial:
      return "axial";
    case Plane::kSagittal:
      return "sagittal";
    case Plane::kCoronal:
      return "coronal";
    case Plane::kUnknown:
      break;
  }
  return "";
}

Plane parse_plane(std::string_view s) {
  if (s.empty()) return Plane::kUnknown;
  if (s == "axial") return Plane::kAxial;
  if (s == "sagittal") return Plane::kSagittal;
  if (s == "coronal") return Plane::kCoronal;
  throw DataError("unknown plane tag '" + std::string(s) + "'");
}

std::string_view to_string(Split s) {
  switch (s) {
    case Split::kTrain:
      return "train";
    case Split::kVal:
      return "val";
    case Split::kTest:
      return "test";
    case Split::kNone:
      break;
  }
  return "";
}

Split parse_split(std::string_view s) {
  if (s.empty()) return Split::kNone;
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw DataError("unknown split tag '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------

void write_qtns_image(const fs::path& path, const Image2D& image) {
  if (image.pixels.size() != image.h * image.w) throw ShapeError("image pixel count does not match dims");
  write_slice(path, kKindImage, kDtypeF32, image.h, image.w, image.pixels.data(), image.pixels.size() * 4);
}

void write_qtns_mask(const fs::path& path, const Mask2D& mask) {
  if (mask.labels.size() != mask.h * mask.w) throw ShapeError("mask label count does not match dims");
  write_slice(path, kKindMask, kDtypeU8, mask.h, mask.w, mask.labels.data(), mask.labels.size());
}

Image2D read_qtns_image(const fs::path& path) {
  const auto bytes = detail::read_file(path);
  const std::string what = path.string();
  detail::ByteReader in(bytes, what);
  const SliceHeader h = read_slice_header(in, what);
  if (h.kind != kKindImage) throw FormatError(FormatError::Kind::kBadKind, what + ": expected an image slice");
  detail::check_crc(bytes, what);
  Image2D img{h.h, h.w, std::vector<float>(h.h * h.w)};
  if (h.dtype == kDtypeF32) {
    in.array<float>(img.pixels);
  } else {
    std::vector<std::uint8_t> raw(h.h * h.w);
    in.array<std::uint8_t>(raw);
    std::copy(raw.begin(), raw.end(), img.pixels.begin());
  }
  return img;
}

Mask2D read_qtns_mask(const fs::path& path, std::size_t num_classes) {
  const auto bytes = detail::read_file(path);
  const std::string what = path.string();
  detail::ByteReader in(bytes, what);
  const SliceHeader h = read_slice_header(in, what);
  if (h.kind != kKindMask) throw FormatError(FormatError::Kind::kBadKind, what + ": expected a mask slice");
  if (h.dtype != kDtypeU8) throw FormatError(FormatError::Kind::kBadDtype, what + ": masks must be u8");
  detail::check_crc(bytes, what);
  Mask2D mask{h.h, h.w, std::vector<std::uint8_t>(h.h * h.w)};
  in.array<std::uint8_t>(mask.labels);
  for (std::size_t i = 0; i < mask.labels.size(); ++i) {
    if (mask.labels[i] >= num_classes) {
      throw FormatError(FormatError::Kind::kInvalidClass,
                        what + ": invalid class id " + std::to_string(mask.labels[i]) + " at pixel " +
                            std::to_string(i));
    }
  }
  return mask;
}

// ---------------------------------------------------------------------------

std::vector<ManifestRow> Manifest::rows_in(Split s) const {
  std::vector<ManifestRow> out;
  std::copy_if(rows.begin(), rows.end(), std::back_inserter(out), [&](const auto& r) { return r.split == s; });
  return out;
}

std::size_t Manifest::count(Split s) const {
  return static_cast<std::size_t>(std::count_if(rows.begin(), rows.end(), [&](const auto& r) { return r.split == s; }));
}

void check_no_leakage(const Manifest& manifest) {
  std::map<std::string, Split> first;
  for (std::size_t i = 0; i < manifest.rows.size(); ++i) {
    const auto& r = manifest.rows[i];
    if (r.split == Split::kNone) continue;
    auto [it, inserted] = first.emplace(r.patient_id, r.split);
    if (!inserted && it->second != r.split) {
      throw DataError("manifest row " + std::to_string(i + 1) + ": patient '" + r.patient_id +
                      "' appears in both " + std::string(to_string(it->second)) + " and " +
                      std::string(to_string(r.split)) + " splits");
    }
  }
}

Manifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  Manifest m;
  m.base_dir = path.parent_path();
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": empty manifest");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kManifestHeader) {
    throw DataError(path.string() + ": expected header '" + std::string(kManifestHeader) + "', got '" + line + "'");
  }
  std::size_t row_no = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    ++row_no;
    const std::string where = path.string() + " row " + std::to_string(row_no);
    const auto f = split_csv_line(line);
    if (f.size() != 6) {
      throw DataError(where + ": expected 6 fields, got " + std::to_string(f.size()));
    }
    ManifestRow r;
    r.image = f[0];
    r.mask = f[1];
    r.patient_id = f[2];
    if (r.patient_id.empty()) throw DataError(where + ": empty patient_id");
    try {
      r.plane = parse_plane(f[3]);
      r.split = parse_split(f[5]);
    } catch (const DataError& e) {
      throw DataError(where + ": " + e.what());
    }
    std::stringstream cs(f[4]);
    std::string tok;
    while (std::getline(cs, tok, ';')) {
      if (tok.empty()) continue;
      int v = -1;
      try {
        v = std::stoi(tok);
      } catch (const std::exception&) {
      }
      if (v < 0 || v >= static_cast<int>(kNumClasses)) throw DataError(where + ": bad class id '" + tok + "'");
      r.classes.push_back(static_cast<std::uint8_t>(v));
    }
    for (const fs::path* p : {&r.image, &r.mask}) {
      if (!fs::exists(m.resolve(*p))) throw DataError(where + ": missing file " + m.resolve(*p).string());
    }
    m.rows.push_back(std::move(r));
  }
  if (m.rows.empty()) throw DataError(path.string() + ": manifest has no rows");
  check_no_leakage(m);
  return m;
}

void write_manifest(const Manifest& manifest, const fs::path& path) {
  std::ostringstream out;
  out << kManifestHeader << '\n';
  for (const auto& r : manifest.rows) {
    std::string classes;
    for (std::size_t i = 0; i < r.classes.size(); ++i) {
      if (i) classes += ';';
      classes += std::to_string(r.classes[i]);
    }
    out << csv_field(r.image.generic_string()) << ',' << csv_field(r.mask.generic_string()) << ','
        << csv_field(r.patient_id) << ',' << to_string(r.plane) << ',' << classes << ',' << to_string(r.split)
        << '\n';
  }
  const std::string text = out.str();
  detail::write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

void validate_split_ratios(const std::array<double, 3>& ratios) {
  double sum = 0.0;
  for (double r : ratios) {
    if (!(r >= 0.0)) throw ConfigError("split ratios must be non-negative");
    sum += r;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1, got " + std::to_string(sum));
}

Manifest split_by_patient(Manifest manifest, std::array<double, 3> ratios, std::uint64_t seed) {
  validate_split_ratios(ratios);

  std::set<std::string> unique;
  for (const auto& r : manifest.rows) unique.insert(r.patient_id);
  std::vector<std::string> patients(unique.begin(), unique.end());
  const std::size_t np = patients.size();
  const std::size_t buckets_needed =
      static_cast<std::size_t>(std::count_if(ratios.begin(), ratios.end(), [](double r) { return r > 0.0; }));
  if (np < buckets_needed) {
    throw DataError("split_by_patient: " + std::to_string(np) + " patients cannot fill " +
                    std::to_string(buckets_needed) + " nonzero split buckets");
  }

  std::array<std::size_t, 3> counts{};
  counts[0] = static_cast<std::size_t>(std::floor(ratios[0] * static_cast<double>(np) + 1e-9));
  counts[1] = static_cast<std::size_t>(std::floor(ratios[1] * static_cast<double>(np) + 1e-9));
  counts[1] = std::min(counts[1], np - counts[0]);
  counts[2] = np - counts[0] - counts[1];
  if (ratios[2] == 0.0 && counts[2] > 0) {
    counts[0] += counts[2];
    counts[2] = 0;
  }
  for (std::size_t b = 0; b < 3; ++b) {
    if (ratios[b] > 0.0 && counts[b] == 0) {
      const auto largest = static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
      --counts[largest];
      ++counts[b];
    }
  }

  // Explicit Fisher-Yates so the assignment does not depend on the standard
  // library's shuffle.
  std::mt19937_64 rng(seed);
  for (std::size_t i = np; i > 1; --i) std::swap(patients[i - 1], patients[static_cast<std::size_t>(rng() % i)]);
  std::map<std::string, Split> assign;
  std::size_t k = 0;
  const std::array<Split, 3> tags{Split::kTrain, Split::kVal, Split::kTest};
  for (std::size_t b = 0; b < 3; ++b) {
    for (std::size_t i = 0; i < counts[b]; ++i) assign[patients[k++]] = tags[b];
  }
  for (auto& r : manifest.rows) r.split = assign.at(r.patient_id);
  return manifest;
}

// ---------------------------------------------------------------------------

void normalize_minmax(Image2D& image) {
  if (image.pixels.empty()) return;
  const auto [lo, hi] = std::minmax_element(image.pixels.begin(), image.pixels.end());
  const double mn = *lo;
  const double range = static_cast<double>(*hi) - mn;
  for (float& v : image.pixels) {
    v = range > 0.0 ? static_cast<float>(std::clamp((v - mn) / range, 0.0, 1.0)) : 0.0f;
  }
}

Image2D resize_bilinear(const Image2D& image, std::size_t th, std::size_t tw) {
  if (image.h == th && image.w == tw) return image;
  Image2D out{th, tw, std::vector<float>(th * tw)};
  const double sy = static_cast<double>(image.h) / static_cast<double>(th);
  const double sx = static_cast<double>(image.w) / static_cast<double>(tw);
  for (std::size_t y = 0; y < th; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(image.h - 1));
    const std::size_t y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, image.h - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < tw; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(image.w - 1));
      const std::size_t x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, image.w - 1);
      const double wx = fx - static_cast<double>(x0);
      const auto px = [&](std::size_t yy, std::size_t xx) { return static_cast<double>(image.pixels[yy * image.w + xx]); };
      const double top = px(y0, x0) * (1 - wx) + px(y0, x1) * wx;
      const double bot = px(y1, x0) * (1 - wx) + px(y1, x1) * wx;
      out.pixels[y * tw + x] = static_cast<float>(top * (1 - wy) + bot * wy);
    }
  }
  return out;
}

Mask2D resize_nearest(const Mask2D& mask, std::size_t th, std::size_t tw) {
  if (mask.h == th && mask.w == tw) return mask;
  Mask2D out{th, tw, std::vector<std::uint8_t>(th * tw)};
  for (std::size_t y = 0; y < th; ++y) {
    const std::size_t sy = std::min(mask.h - 1, (2 * y + 1) * mask.h / (2 * th));
    for (std::size_t x = 0; x < tw; ++x) {
      const std::size_t sx = std::min(mask.w - 1, (2 * x + 1) * mask.w / (2 * tw));
      out.labels[y * tw + x] = mask.labels[sy * mask.w + sx];
    }
  }
  return out;
}

SliceSample resize_sample(const SliceSample& sample, std::size_t th, std::size_t tw) {
  check_target(th, tw);
  SliceSample out = sample;
  out.image = resize_bilinear(sample.image, th, tw);
  out.mask = resize_nearest(sample.mask, th, tw);
  return out;
}

SliceSample load_sample(const Manifest& manifest, const ManifestRow& row, std::size_t th, std::size_t tw) {
  SliceSample s;
  s.image = read_qtns_image(manifest.resolve(row.image));
  s.mask = read_qtns_mask(manifest.resolve(row.mask));
  if (s.image.h != s.mask.h || s.image.w != s.mask.w) {
    throw DataError("slice " + row.image.string() + " and mask " + row.mask.string() + " differ in size");
  }
  s.patient_id = row.patient_id;
  s.plane = row.plane;
  s.source_h = s.image.h;
  s.source_w = s.image.w;
  normalize_minmax(s.image);
  if (s.image.h != th || s.image.w != tw) s = resize_sample(s, th, tw);
  return s;
}

template <typename T>
std::pair<Tensor<T>, LabelMap> make_batch(const std::vector<SliceSample>& samples) {
  if (samples.empty()) throw ShapeError("make_batch: no samples");
  const std::size_t h = samples.front().image.h;
  const std::size_t w = samples.front().image.w;
  Tensor<T> images(samples.size(), 1, h, w);
  std::vector<std::uint8_t> labels;
  labels.reserve(samples.size() * h * w);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    if (s.image.h != h || s.image.w != w || s.mask.h != h || s.mask.w != w) {
      throw ShapeError("make_batch: samples differ in size");
    }
    std::transform(s.image.pixels.begin(), s.image.pixels.end(), images.plane(i, 0),
                   [](float v) { return static_cast<T>(v); });
    labels.insert(labels.end(), s.mask.labels.begin(), s.mask.labels.end());
  }
  return {std::move(images), LabelMap(samples.size(), h, w, std::move(labels))};
}

template std::pair<Tensor<float>, LabelMap> make_batch<float>(const std::vector<SliceSample>&);
template std::pair<Tensor<double>, LabelMap> make_batch<double>(const std::vector<SliceSample>&);

// ---------------------------------------------------------------------------

void SynthConfig::validate() const {
  if (count == 0) throw ConfigError("synth count must be >= 1");
  if (size < 16 || size % 16 != 0 || size > kMaxSliceDim) {
    throw ConfigError("synth size must be a multiple of 16 in 16.." + std::to_string(kMaxSliceDim));
  }
  if (slices_per_patient == 0) throw ConfigError("slices_per_patient must be >= 1");
  if (min_lesions > max_lesions) throw ConfigError("min_lesions exceeds max_lesions");
  if (!(min_axis > 0.0 && min_axis <= max_axis && max_axis < 0.5)) throw ConfigError("bad lesion axis range");
  if (!(min_area_fraction >= 0.0 && min_area_fraction <= max_area_fraction && max_area_fraction <= 1.0)) {
    throw ConfigError("bad lesion area fraction bounds");
  }
}

bool Lesion::contains(std::size_t x, std::size_t y) const {
  const double dx = static_cast<double>(x) + 0.5 - cx;
  const double dy = static_cast<double>(y) + 0.5 - cy;
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  const double u = (dx * c + dy * s) / a;
  const double v = (-dx * s + dy * c) / b;
  return u * u + v * v <= 1.0;
}

SynthSlice synth_slice(const SynthConfig& cfg, std::size_t index) {
  cfg.validate();
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::size_t n = cfg.size;
  const double size = static_cast<double>(n);

  const double disc_cx = size / 2 + (unit(rng) - 0.5) * 0.06 * size;
  const double disc_cy = size / 2 + (unit(rng) - 0.5) * 0.06 * size;
  const double disc_r = (0.38 + 0.07 * unit(rng)) * size;

  SynthSlice out;
  Mask2D& mask = out.sample.mask;
  mask = Mask2D{n, n, std::vector<std::uint8_t>(n * n, 0)};

  const std::size_t want =
      cfg.min_lesions + static_cast<std::size_t>(unit(rng) * static_cast<double>(cfg.max_lesions - cfg.min_lesions + 1));
  const std::size_t nlesions = std::min(want, cfg.max_lesions);
  std::size_t fg = 0;
  const double total = size * size;
  for (std::size_t k = 0; k < nlesions; ++k) {
    for (int attempt = 0; attempt < 100; ++attempt) {
      Lesion les;
      les.cls = static_cast<std::uint8_t>(1 + std::min<std::size_t>(2, static_cast<std::size_t>(unit(rng) * 3)));
      les.a = (cfg.min_axis + (cfg.max_axis - cfg.min_axis) * unit(rng)) * size;
      les.b = (cfg.min_axis + (cfg.max_axis - cfg.min_axis) * unit(rng)) * size;
      les.theta = unit(rng) * std::numbers::pi;
      const double reach = disc_r - std::max(les.a, les.b) - 1.0;
      if (reach <= 0.0) continue;
      const double ang = unit(rng) * 2.0 * std::numbers::pi;
      const double dist = std::sqrt(unit(rng)) * reach;
      les.cx = disc_cx + dist * std::cos(ang);
      les.cy = disc_cy + dist * std::sin(ang);

      std::vector<std::size_t> pixels;
      bool overlap = false;
      for (std::size_t y = 0; y < n && !overlap; ++y) {
        for (std::size_t x = 0; x < n; ++x) {
          if (!les.contains(x, y)) continue;
          if (mask.labels[y * n + x] != 0) {
            overlap = true;
            break;
          }
          pixels.push_back(y * n + x);
        }
      }
      if (overlap || pixels.empty()) continue;
      const double frac = static_cast<double>(fg + pixels.size()) / total;
      if (frac < cfg.min_area_fraction || frac > cfg.max_area_fraction) continue;
      for (std::size_t p : pixels) mask.labels[p] = les.cls;
      fg += pixels.size();
      out.lesions.push_back(les);
      break;
    }
  }

  Image2D& img = out.sample.image;
  img = Image2D{n, n, std::vector<float>(n * n)};
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      const double dx = static_cast<double>(x) + 0.5 - disc_cx;
      const double dy = static_cast<double>(y) + 0.5 - disc_cy;
      const bool in_disc = dx * dx + dy * dy <= disc_r * disc_r;
      const std::uint8_t cls = mask.labels[y * n + x];
      double v;
      if (cls == 0 && !in_disc) {
        v = cfg.outside_noise * unit(rng);
      } else {
        const Texture& t = cfg.textures[cls];
        const bool checker = ((x / t.period) + (y / t.period)) % 2 == 0;
        v = t.base + t.noise * (2.0 * unit(rng) - 1.0) + (checker ? t.speckle : -t.speckle);
      }
      img.pixels[y * n + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }

  static constexpr std::array<Plane, 3> kPlanes{Plane::kAxial, Plane::kSagittal, Plane::kCoronal};
  out.sample.plane = kPlanes[index % 3];
  char pid[32];
  std::snprintf(pid, sizeof(pid), "synth-%04zu", index / cfg.slices_per_patient);
  out.sample.patient_id = pid;
  out.sample.source_h = n;
  out.sample.source_w = n;
  return out;
}

SynthResult synth_generate(const SynthConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  try {
    fs::create_directories(out_dir / "images");
    fs::create_directories(out_dir / "masks");
  } catch (const fs::filesystem_error& e) {
    throw IoError("cannot create dataset directory " + out_dir.string() + ": " + e.what());
  }
  SynthResult result;
  result.manifest.base_dir = out_dir;
  for (std::size_t i = 0; i < cfg.count; ++i) {
    SynthSlice s = synth_slice(cfg, i);
    char name[32];
    std::snprintf(name, sizeof(name), "slice_%05zu.qtns", i);
    ManifestRow row;
    row.image = fs::path("images") / name;
    row.mask = fs::path("masks") / name;
    row.patient_id = s.sample.patient_id;
    row.plane = s.sample.plane;
    row.classes = classes_present(s.sample.mask);
    write_qtns_image(out_dir / row.image, s.sample.image);
    write_qtns_mask(out_dir / row.mask, s.sample.mask);
    result.manifest.rows.push_back(std::move(row));
    result.lesions.push_back(std::move(s.lesions));
  }
  write_manifest(result.manifest, out_dir / "manifest.csv");
  return result;
}

}  // namespace qtn
