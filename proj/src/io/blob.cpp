#include "xai/io/blob.hpp"

#include "xai/error.hpp"

#include <zlib.h>

#include <bit>
#include <fstream>
#include <sstream>

namespace xai::io {
namespace {

constexpr char kMagic[4] = {'X', 'A', 'I', 'B'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const std::string& in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

std::string payload_bytes(std::span<const double> values) {
  std::string out;
  out.reserve(values.size() * 8);
  for (double d : values) {
    const auto bits = std::bit_cast<std::uint64_t>(d);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
  }
  return out;
}

std::uint32_t crc_of(const char* data, std::size_t n) {
  return static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(data), static_cast<uInt>(n)));
}

}  // namespace

std::string encode_blob(const Blob& blob) {
  const std::string payload = payload_bytes(blob.payload);
  nlohmann::json header = blob.header;
  header["v"] = kBlobVersion;
  header["payload_count"] = blob.payload.size();
  header["payload_crc32"] = crc_of(payload.data(), payload.size());
  const std::string text = header.dump();

  std::string out(kMagic, 4);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  out += payload;
  return out;
}

Blob decode_blob(const std::string& bytes, const std::string& kind) {
  if (bytes.size() < 8 || bytes.compare(0, 4, kMagic, 4) != 0) {
    throw FormatError("not an XAIB container (bad magic)");
  }
  const std::size_t header_len = get_u32(bytes, 4);
  if (bytes.size() < 8 + header_len) throw FormatError("truncated container header");

  Blob blob;
  try {
    blob.header = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + 8 + static_cast<long>(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("corrupted container header: ") + e.what());
  }
  if (!blob.header.is_object() || !blob.header.contains("v")) throw FormatError("container header lacks 'v'");
  if (blob.header["v"] != kBlobVersion) {
    throw VersionError("container format version " + blob.header["v"].dump() + ", expected " +
                       std::to_string(kBlobVersion));
  }
  if (!kind.empty() && blob.header.value("kind", "") != kind) {
    throw FormatError("container holds '" + blob.header.value("kind", "") + "', expected '" + kind + "'");
  }

  const std::size_t count = blob.header.at("payload_count").get<std::size_t>();
  const std::size_t start = 8 + header_len;
  if (bytes.size() != start + count * 8) {
    throw FormatError(bytes.size() < start + count * 8 ? "truncated container payload"
                                                       : "trailing bytes after container payload");
  }
  if (crc_of(bytes.data() + start, count * 8) != blob.header.at("payload_crc32").get<std::uint32_t>()) {
    throw FormatError("container payload checksum mismatch");
  }
  blob.payload.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) {
      bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[start + i * 8 + b])) << (8 * b);
    }
    blob.payload[i] = std::bit_cast<double>(bits);
  }
  return blob;
}

void write_blob(const std::filesystem::path& path, const Blob& blob) { write_file(path, encode_blob(blob)); }

Blob read_blob(const std::filesystem::path& path, const std::string& kind) { return decode_blob(read_file(path), kind); }

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for " + path.string());
}

}  // namespace xai::io
