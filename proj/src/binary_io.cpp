#include "binary_io.hpp"

#include <fstream>
#include <sstream>

namespace qtn::detail {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::vector<std::uint8_t> bytes(size);
  if (size > 0 && !in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size))) {
    throw IoError("failed reading " + path.string());
  }
  return bytes;
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      out.close();
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw IoError("failed writing " + tmp.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
  }
}

void check_crc(std::span<const std::uint8_t> bytes, const std::string& what) {
  if (bytes.size() < 4) throw FormatError(FormatError::Kind::kTruncated, what + ": truncated (no checksum)");
  const auto body = bytes.first(bytes.size() - 4);
  ByteReader tail(bytes.last(4), what);
  const std::uint32_t stored = tail.u32();
  const std::uint32_t actual = crc32_of(body);
  if (stored != actual) {
    std::ostringstream msg;
    msg << what << ": checksum mismatch (stored " << std::hex << stored << ", computed " << actual << ")";
    throw FormatError(FormatError::Kind::kChecksum, msg.str());
  }
}

}  // namespace qtn::detail
