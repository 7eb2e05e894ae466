#pragma once

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace xai::io {

/// Binary container shared by model weights and raw attribution maps:
///
///   "XAIB" | u32 LE header length | header JSON | payload (f64 LE)
///
/// The header always carries "v" (format version), "kind", "payload_count"
/// and "payload_crc32"; callers add their own fields.
struct Blob {
  nlohmann::json header;
  std::vector<double> payload;
};

inline constexpr int kBlobVersion = 1;

std::string encode_blob(const Blob& blob);
/// Throws FormatError on bad magic, truncation or checksum mismatch and
/// VersionError when "v" differs from kBlobVersion. `kind` must match when non-empty.
Blob decode_blob(const std::string& bytes, const std::string& kind = {});

void write_blob(const std::filesystem::path& path, const Blob& blob);
Blob read_blob(const std::filesystem::path& path, const std::string& kind = {});

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& bytes);

}  // namespace xai::io
