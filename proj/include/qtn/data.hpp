#ifndef QTN_DATA_HPP
#define QTN_DATA_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "qtn/loss.hpp"
#include "qtn/tensor.hpp"

namespace qtn {

namespace fs = std::filesystem;

/// 0 = normal tissue, 1 = meningioma, 2 = glioma, 3 = pituitary.
inline constexpr std::size_t kNumClasses = 4;
std::string_view class_name(std::size_t id);

enum class Plane { kUnknown, kAxial, kSagittal, kCoronal };
std::string_view to_string(Plane p);
/// Empty string maps to kUnknown; anything unrecognized throws DataError.
Plane parse_plane(std::string_view s);

enum class Split { kNone, kTrain, kVal, kTest };
std::string_view to_string(Split s);
Split parse_split(std::string_view s);

struct Image2D {
  std::size_t h = 0;
  std::size_t w = 0;
  std::vector<float> pixels;
};

struct Mask2D {
  std::size_t h = 0;
  std::size_t w = 0;
  std::vector<std::uint8_t> labels;
};

struct SliceSample {
  Image2D image;
  Mask2D mask;
  std::string patient_id;
  Plane plane = Plane::kUnknown;
  std::size_t source_h = 0;
  std::size_t source_w = 0;
};

// ---------------------------------------------------------------------------
// QTNS slice files:
//   "QTNS" | u32 version (1) | u8 kind (1 image, 2 mask) | u8 dtype (1 f32, 2 u8) |
//   u32 height | u32 width | row-major little-endian data | u32 CRC-32

inline constexpr std::uint32_t kSliceVersion = 1;
inline constexpr std::size_t kMaxSliceDim = 4096;

void write_qtns_image(const fs::path& path, const Image2D& image);
void write_qtns_mask(const fs::path& path, const Mask2D& mask);
Image2D read_qtns_image(const fs::path& path);
/// Rejects labels >= num_classes with FormatError::kInvalidClass.
Mask2D read_qtns_mask(const fs::path& path, std::size_t num_classes = kNumClasses);

// ---------------------------------------------------------------------------

struct ManifestRow {
  fs::path image;  // as written in the CSV (relative to the manifest dir unless absolute)
  fs::path mask;
  std::string patient_id;
  Plane plane = Plane::kUnknown;
  std::vector<std::uint8_t> classes;
  Split split = Split::kNone;
};

struct Manifest {
  fs::path base_dir;
  std::vector<ManifestRow> rows;

  fs::path resolve(const fs::path& p) const { return p.is_absolute() ? p : base_dir / p; }
  std::vector<ManifestRow> rows_in(Split s) const;
  std::size_t count(Split s) const;
};

inline constexpr std::string_view kManifestHeader = "image,mask,patient_id,plane,classes,split";

/// Parses and validates: header, plane/split tags, file existence and
/// patient leakage across splits. Errors name the offending row.
Manifest load_manifest(const fs::path& path);
void write_manifest(const Manifest& manifest, const fs::path& path);

/// Throws DataError if a patient id appears in two different splits.
void check_no_leakage(const Manifest& manifest);

/// Non-negative and summing to 1; ConfigError otherwise.
void validate_split_ratios(const std::array<double, 3>& ratios);

/// Assigns splits per patient. Train and val receive floor(ratio * patients),
/// test the remainder; a bucket with a nonzero ratio that would be empty
/// borrows one patient from the largest bucket.
Manifest split_by_patient(Manifest manifest, std::array<double, 3> ratios, std::uint64_t seed);

// ---------------------------------------------------------------------------

/// Per-slice min-max to [0, 1]; constant images become all zeros.
void normalize_minmax(Image2D& image);

/// Bilinear image (half-pixel centres, edge clamp) and nearest-neighbour mask.
/// Target dims must be multiples of 16.
SliceSample resize_sample(const SliceSample& sample, std::size_t target_h, std::size_t target_w);
Image2D resize_bilinear(const Image2D& image, std::size_t target_h, std::size_t target_w);
Mask2D resize_nearest(const Mask2D& mask, std::size_t target_h, std::size_t target_w);

/// Reads, normalizes, and (when dims differ) resizes one manifest row.
SliceSample load_sample(const Manifest& manifest, const ManifestRow& row, std::size_t target_h,
                        std::size_t target_w);

/// Stacks samples into an (n, 1, h, w) tensor and matching labels.
template <typename T>
std::pair<Tensor<T>, LabelMap> make_batch(const std::vector<SliceSample>& samples);

// ---------------------------------------------------------------------------
// Synthetic stand-in data.

struct Texture {
  double base = 0.35;       // mean intensity
  double noise = 0.04;      // uniform noise amplitude
  double speckle = 0.0;     // amplitude of a checker pattern
  std::size_t period = 4;   // checker period in pixels
};

struct SynthConfig {
  std::size_t count = 64;
  std::size_t size = 256;
  std::uint64_t seed = 0;
  std::size_t slices_per_patient = 1;
  std::size_t min_lesions = 0;
  std::size_t max_lesions = 2;
  double outside_noise = 0.01;
  // [0] brain tissue, [1] meningioma, [2] glioma, [3] pituitary
  std::array<Texture, kNumClasses> textures{{
      {0.35, 0.04, 0.0, 4},
      {0.90, 0.03, 0.0, 4},
      {0.60, 0.04, 0.12, 4},
      {0.12, 0.03, 0.0, 4},
  }};
  double min_axis = 0.08;  // lesion semi-axes, fraction of image size
  double max_axis = 0.18;
  double min_area_fraction = 0.01;  // per-slice foreground fraction when lesions exist
  double max_area_fraction = 0.25;

  void validate() const;
};

struct Lesion {
  std::uint8_t cls = 1;
  double cx = 0;  // pixel units
  double cy = 0;
  double a = 0;  // semi-axes
  double b = 0;
  double theta = 0;

  /// Pixel (x, y) belongs to the lesion when its centre (x + 0.5, y + 0.5) is inside the ellipse.
  bool contains(std::size_t x, std::size_t y) const;
};

struct SynthSlice {
  SliceSample sample;
  std::vector<Lesion> lesions;
};

/// Deterministic in (cfg.seed, index).
SynthSlice synth_slice(const SynthConfig& cfg, std::size_t index);

struct SynthResult {
  Manifest manifest;
  std::vector<std::vector<Lesion>> lesions;  // per row
};

/// Writes images/ and masks/ QTNS files plus an unsplit manifest.csv under out_dir.
SynthResult synth_generate(const SynthConfig& cfg, const fs::path& out_dir);

}  // namespace qtn

#endif  // QTN_DATA_HPP
