#pragma once

// Raw little-endian float32 tensor blobs with a JSON descriptor, shared by
// feature packs, checkpoints and embedding tables.
//
// Descriptor layout:
//   {"file": "features.f32", "dtype": "f32le", "shape": [8, 3, 16],
//    "bytes": 1536, "crc32": "1a2b3c4d"}
//
// crc32 is the zlib CRC-32 of the file bytes, as 8 lowercase hex digits.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace mpd {

std::uint32_t crc32_of(std::span<const unsigned char> bytes);
std::string crc32_hex(std::uint32_t crc);

std::vector<unsigned char> encode_f32le(std::span<const float> values);
std::vector<float> decode_f32le(std::span<const unsigned char> bytes);

/// Writes `values` to dir/file and returns its descriptor. The product of
/// `shape` must equal values.size().
nlohmann::json write_tensor(const std::filesystem::path& dir, const std::string& file,
                            const std::vector<std::size_t>& shape,
                            std::span<const float> values);

/// Reads a tensor described by `desc`. Throws ChecksumError on a size or
/// CRC mismatch and DataError when the declared shape differs from
/// `expected_shape`.
std::vector<float> read_tensor(const std::filesystem::path& dir, const nlohmann::json& desc,
                               const std::vector<std::size_t>& expected_shape);

nlohmann::json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const nlohmann::json& doc);

/// Stages a directory next to `target` and renames it into place on
/// commit(). An uncommitted staging directory is removed on destruction.
class StagedDirectory {
 public:
  explicit StagedDirectory(std::filesystem::path target);
  ~StagedDirectory();
  StagedDirectory(const StagedDirectory&) = delete;
  StagedDirectory& operator=(const StagedDirectory&) = delete;

  const std::filesystem::path& path() const noexcept { return staging_; }
  void commit();

 private:
  std::filesystem::path target_;
  std::filesystem::path staging_;
  bool committed_ = false;
};

}  // namespace mpd
