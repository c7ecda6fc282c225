#ifndef QTN_CHECKPOINT_HPP
#define QTN_CHECKPOINT_HPP

// QTNW checkpoint container:
//   "QTNW" | u32 version | u32 record length | UTF-8 JSON record |
//   per tensor: u32 name length | name | u8 dtype (1=f32, 2=f64) |
//               u32 rank | rank x u32 dims | little-endian data
//   u32 CRC-32 of every preceding byte.
// The JSON record carries the model config, seed, dtype, tensor count and an
// optional "train" object owned by the trainer.

#include <cstdint>
#include <filesystem>

#include <nlohmann/json.hpp>

#include "qtn/model.hpp"

namespace qtn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class Dtype : std::uint8_t { kF32 = 1, kF64 = 2 };

template <typename T>
constexpr Dtype dtype_of() {
  return sizeof(T) == 4 ? Dtype::kF32 : Dtype::kF64;
}

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

struct CheckpointHeader {
  std::uint32_t version = 0;
  ModelConfig config;
  std::uint64_t seed = 0;
  Dtype dtype = Dtype::kF32;
  nlohmann::json record;
};

template <typename T>
struct Checkpoint {
  Parameters<T> params;
  nlohmann::json record;
  /// Tensors outside the model's canonical set (optimizer moments).
  TensorSet<T> extra;
};

/// Atomic write (temp file + rename). `train_record` is stored under "train".
template <typename T>
void save_weights(const Parameters<T>& params, const std::filesystem::path& path,
                  const nlohmann::json& train_record = nullptr, const TensorSet<T>* extra = nullptr);

/// Loads and validates a checkpoint, converting tensor data to T when the
/// stored dtype differs. Throws FormatError (kBadMagic, kUnsupportedVersion,
/// kTruncated, kChecksum, kBadDtype, kMalformed) or IoError.
template <typename T>
Checkpoint<T> load_weights(const std::filesystem::path& path);

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path);

}  // namespace qtn

#endif  // QTN_CHECKPOINT_HPP
