#include "qtn/checkpoint.hpp"

#include "binary_io.hpp"

namespace qtn {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'Q', 'T', 'N', 'W'};

std::string dtype_name(Dtype d) { return d == Dtype::kF32 ? "f32" : "f64"; }

struct ParsedHeader {
  CheckpointHeader header;
  std::size_t tensor_count = 0;
};

ParsedHeader parse_header(detail::ByteReader& in, const std::string& what) {
  in.need(4);
  const std::string magic = in.string(4);
  if (magic != std::string(kMagic, 4)) {
    throw FormatError(FormatError::Kind::kBadMagic, what + ": not a QTNW checkpoint (bad magic)");
  }
  ParsedHeader out;
  out.header.version = in.u32();
  if (out.header.version != kCheckpointVersion) {
    throw FormatError(FormatError::Kind::kUnsupportedVersion,
                      what + ": checkpoint format version " + std::to_string(out.header.version) +
                          " is not supported (this build reads version " + std::to_string(kCheckpointVersion) +
                          ")");
  }
  const std::uint32_t len = in.u32();
  const std::string text = in.string(len);
  try {
    out.header.record = json::parse(text);
    out.header.config = model_config_from_json(out.header.record.at("model"));
    out.header.seed = out.header.record.at("seed").get<std::uint64_t>();
    out.header.dtype = out.header.record.at("dtype").get<std::string>() == "f64" ? Dtype::kF64 : Dtype::kF32;
    out.tensor_count = out.header.record.at("tensor_count").get<std::size_t>();
  } catch (const json::exception& e) {
    throw FormatError(FormatError::Kind::kMalformed, what + ": bad config record: " + e.what());
  }
  return out;
}

template <typename T>
Tensor<T> read_tensor_data(detail::ByteReader& in, Dtype dtype, const Shape& shape) {
  Tensor<T> t(shape);
  if (dtype == dtype_of<T>()) {
    in.array<T>(t.span());
  } else if (dtype == Dtype::kF32) {
    std::vector<float> tmp(shape.numel());
    in.array<float>(tmp);
    std::copy(tmp.begin(), tmp.end(), t.data());
  } else {
    std::vector<double> tmp(shape.numel());
    in.array<double>(tmp);
    std::transform(tmp.begin(), tmp.end(), t.data(), [](double v) { return static_cast<T>(v); });
  }
  return t;
}

}  // namespace

json to_json(const ModelConfig& c) {
  return json{{"in_channels", c.in_channels}, {"num_classes", c.num_classes},
              {"base_channels", c.base_channels}, {"depth", c.depth},
              {"dense_kernel", c.dense_kernel}, {"input_h", c.input_h},
              {"input_w", c.input_w}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  c.in_channels = j.at("in_channels").get<std::size_t>();
  c.num_classes = j.at("num_classes").get<std::size_t>();
  c.base_channels = j.at("base_channels").get<std::size_t>();
  c.depth = j.at("depth").get<std::size_t>();
  c.dense_kernel = j.at("dense_kernel").get<std::size_t>();
  c.input_h = j.at("input_h").get<std::size_t>();
  c.input_w = j.at("input_w").get<std::size_t>();
  return c;
}

template <typename T>
void save_weights(const Parameters<T>& params, const std::filesystem::path& path, const json& train_record,
                  const TensorSet<T>* extra) {
  const std::size_t count = params.tensors.size() + (extra ? extra->size() : 0);
  json record{{"model", to_json(params.config)},
              {"seed", params.seed},
              {"dtype", dtype_name(dtype_of<T>())},
              {"tensor_count", count}};
  if (!train_record.is_null()) record["train"] = train_record;
  const std::string text = record.dump();

  detail::ByteWriter out;
  out.bytes(kMagic, 4);
  out.u32(kCheckpointVersion);
  out.u32(static_cast<std::uint32_t>(text.size()));
  out.bytes(text.data(), text.size());
  auto write_set = [&](const TensorSet<T>& set) {
    for (const auto& e : set.entries()) {
      out.u32(static_cast<std::uint32_t>(e.name.size()));
      out.bytes(e.name.data(), e.name.size());
      out.u8(static_cast<std::uint8_t>(dtype_of<T>()));
      out.u32(4);
      for (std::size_t d : e.value.shape().dims()) out.u32(static_cast<std::uint32_t>(d));
      out.array<T>(e.value.span());
    }
  };
  write_set(params.tensors);
  if (extra) write_set(*extra);
  out.finish_with_crc();
  detail::write_file_atomic(path, out.buffer());
}

template <typename T>
Checkpoint<T> load_weights(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = detail::read_file(path);
  const std::string what = path.string();
  detail::ByteReader in(bytes, what);
  ParsedHeader ph = parse_header(in, what);

  Checkpoint<T> ck;
  ck.record = ph.header.record;
  try {
    ck.params = build_model<T>(ph.header.config, ph.header.seed);
  } catch (const ConfigError& e) {
    throw FormatError(FormatError::Kind::kMalformed, what + ": " + e.what());
  }
  std::vector<bool> seen(ck.params.tensors.size(), false);

  for (std::size_t i = 0; i < ph.tensor_count; ++i) {
    const std::uint32_t name_len = in.u32();
    const std::string name = in.string(name_len);
    const std::uint8_t code = in.u8();
    if (code != 1 && code != 2) {
      throw FormatError(FormatError::Kind::kBadDtype,
                        what + ": tensor " + name + " has unknown dtype code " + std::to_string(code));
    }
    const std::uint32_t rank = in.u32();
    if (rank < 1 || rank > 4) {
      throw FormatError(FormatError::Kind::kMalformed,
                        what + ": tensor " + name + " has unsupported rank " + std::to_string(rank));
    }
    std::array<std::size_t, 4> dims{1, 1, 1, 1};
    for (std::uint32_t r = 0; r < rank; ++r) dims[4 - rank + r] = in.u32();
    const Shape shape{dims[0], dims[1], dims[2], dims[3]};
    const std::size_t width = code == 1 ? 4 : 8;
    in.need(shape.numel() * width);
    Tensor<T> value = read_tensor_data<T>(in, static_cast<Dtype>(code), shape);

    auto& entries = ck.params.tensors.entries();
    auto it = std::find_if(entries.begin(), entries.end(), [&](const auto& e) { return e.name == name; });
    if (it == entries.end()) {
      ck.extra.add(name, std::move(value), false);
      continue;
    }
    if (it->value.shape() != shape) {
      throw FormatError(FormatError::Kind::kMalformed, what + ": tensor " + name + " has shape " +
                                                           to_string(shape) + ", expected " +
                                                           to_string(it->value.shape()));
    }
    it->value = std::move(value);
    seen[static_cast<std::size_t>(it - entries.begin())] = true;
  }
  if (in.remaining() < 4) {
    throw FormatError(FormatError::Kind::kTruncated, what + ": truncated (missing checksum)");
  }
  if (in.remaining() > 4) {
    throw FormatError(FormatError::Kind::kMalformed, what + ": unexpected trailing bytes");
  }
  detail::check_crc(bytes, what);
  for (std::size_t i = 0; i < seen.size(); ++i) {
    if (!seen[i]) {
      throw FormatError(FormatError::Kind::kMalformed,
                        what + ": missing tensor " + ck.params.tensors.entries()[i].name);
    }
  }
  return ck;
}

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = detail::read_file(path);
  detail::ByteReader in(bytes, path.string());
  return parse_header(in, path.string()).header;
}

template void save_weights<float>(const Parameters<float>&, const std::filesystem::path&, const json&,
                                  const TensorSet<float>*);
template void save_weights<double>(const Parameters<double>&, const std::filesystem::path&, const json&,
                                   const TensorSet<double>*);
template Checkpoint<float> load_weights<float>(const std::filesystem::path&);
template Checkpoint<double> load_weights<double>(const std::filesystem::path&);

}  // namespace qtn
