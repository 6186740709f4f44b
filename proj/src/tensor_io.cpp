#include "mpd/tensor_io.hpp"

#include <bit>
#include <fstream>
#include <iterator>
#include <random>

#include <unistd.h>
#include <zlib.h>

#include "mpd/errors.hpp"

namespace mpd {

namespace fs = std::filesystem;

namespace {

std::size_t product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

std::vector<unsigned char> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

std::uint32_t crc32_of(std::span<const unsigned char> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  std::size_t off = 0;
  while (off < bytes.size()) {
    const std::size_t n = std::min<std::size_t>(bytes.size() - off, 1u << 30);
    crc = ::crc32(crc, bytes.data() + off, static_cast<uInt>(n));
    off += n;
  }
  return static_cast<std::uint32_t>(crc);
}

std::string crc32_hex(std::uint32_t crc) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out(8, '0');
  for (int i = 7; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kHex[crc & 0xF];
    crc >>= 4;
  }
  return out;
}

std::vector<unsigned char> encode_f32le(std::span<const float> values) {
  std::vector<unsigned char> out(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(values[i]);
    out[4 * i + 0] = static_cast<unsigned char>(bits & 0xFF);
    out[4 * i + 1] = static_cast<unsigned char>((bits >> 8) & 0xFF);
    out[4 * i + 2] = static_cast<unsigned char>((bits >> 16) & 0xFF);
    out[4 * i + 3] = static_cast<unsigned char>((bits >> 24) & 0xFF);
  }
  return out;
}

std::vector<float> decode_f32le(std::span<const unsigned char> bytes) {
  if (bytes.size() % 4 != 0) throw DataError("float32 blob length is not a multiple of 4");
  std::vector<float> out(bytes.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::uint32_t bits = static_cast<std::uint32_t>(bytes[4 * i]) |
                               (static_cast<std::uint32_t>(bytes[4 * i + 1]) << 8) |
                               (static_cast<std::uint32_t>(bytes[4 * i + 2]) << 16) |
                               (static_cast<std::uint32_t>(bytes[4 * i + 3]) << 24);
    out[i] = std::bit_cast<float>(bits);
  }
  return out;
}

nlohmann::json write_tensor(const fs::path& dir, const std::string& file,
                            const std::vector<std::size_t>& shape,
                            std::span<const float> values) {
  if (product(shape) != values.size()) {
    throw ConfigError("write_tensor: shape " + shape_str(shape) + " does not hold " +
                      std::to_string(values.size()) + " values");
  }
  const auto bytes = encode_f32le(values);
  std::ofstream out(dir / file, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + (dir / file).string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  out.close();
  if (!out) throw DataError("short write to " + (dir / file).string());
  return {{"file", file},
          {"dtype", "f32le"},
          {"shape", shape},
          {"bytes", bytes.size()},
          {"crc32", crc32_hex(crc32_of(bytes))}};
}

std::vector<float> read_tensor(const fs::path& dir, const nlohmann::json& desc,
                               const std::vector<std::size_t>& expected_shape) {
  std::string file;
  std::vector<std::size_t> shape;
  std::size_t declared_bytes = 0;
  std::string declared_crc;
  try {
    file = desc.at("file").get<std::string>();
    shape = desc.at("shape").get<std::vector<std::size_t>>();
    declared_bytes = desc.at("bytes").get<std::size_t>();
    declared_crc = desc.at("crc32").get<std::string>();
    if (desc.at("dtype").get<std::string>() != "f32le") {
      throw DataError("unsupported tensor dtype in descriptor for " + file);
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed tensor descriptor: ") + e.what());
  }
  if (file.empty() || file.find('/') != std::string::npos || file.find("..") != std::string::npos) {
    throw DataError("tensor file name '" + file + "' must be a plain file name");
  }
  if (shape != expected_shape) {
    throw DataError("tensor " + file + " declares shape " + shape_str(shape) +
                    " but manifest dimensions imply " + shape_str(expected_shape));
  }
  if (declared_bytes != product(shape) * 4) {
    throw DataError("tensor " + file + " declares " + std::to_string(declared_bytes) +
                    " bytes for shape " + shape_str(shape));
  }
  const auto bytes = read_bytes(dir / file);
  if (bytes.size() != declared_bytes) {
    throw ChecksumError("checksum mismatch for " + file + ": expected " +
                        std::to_string(declared_bytes) + " bytes, found " +
                        std::to_string(bytes.size()));
  }
  const std::string actual_crc = crc32_hex(crc32_of(bytes));
  if (actual_crc != declared_crc) {
    throw ChecksumError("checksum mismatch for " + file + ": manifest says " + declared_crc +
                        ", content hashes to " + actual_crc);
  }
  return decode_f32le(bytes);
}

nlohmann::json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void write_json_file(const fs::path& path, const nlohmann::json& doc) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << doc.dump(2) << '\n';
  out.close();
  if (!out) throw DataError("short write to " + path.string());
}

StagedDirectory::StagedDirectory(fs::path target) : target_(std::move(target)) {
  if (target_.has_parent_path()) fs::create_directories(target_.parent_path());
  std::random_device rd;
  const std::string suffix = ".staging-" + std::to_string(::getpid()) + "-" + std::to_string(rd());
  staging_ = target_;
  staging_ += suffix;
  fs::create_directory(staging_);
}

StagedDirectory::~StagedDirectory() {
  if (!committed_) {
    std::error_code ec;
    fs::remove_all(staging_, ec);
  }
}

void StagedDirectory::commit() {
  std::error_code ec;
  fs::remove_all(target_, ec);
  fs::rename(staging_, target_);
  committed_ = true;
}

}  // namespace mpd
