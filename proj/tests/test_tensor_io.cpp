#include <doctest.h>

#include <cstring>
#include <fstream>
#include <string>

#include "mpd/errors.hpp"
#include "mpd/tensor_io.hpp"
#include "testkit.hpp"

namespace fs = std::filesystem;

TEST_CASE("crc32 check value") {
  const std::string s = "123456789";
  const auto crc = mpd::crc32_of({reinterpret_cast<const unsigned char*>(s.data()), s.size()});
  CHECK(crc == 0xCBF43926u);
  CHECK(mpd::crc32_hex(crc) == "cbf43926");
  CHECK(mpd::crc32_hex(0x1u) == "00000001");
}

TEST_CASE("float32 little-endian encoding") {
  const std::vector<float> v{1.0f, -2.0f};
  const auto bytes = mpd::encode_f32le(v);
  CHECK(bytes == std::vector<unsigned char>{0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x00, 0xc0});
  CHECK(mpd::decode_f32le(bytes) == v);
  CHECK_THROWS_AS(mpd::decode_f32le(std::vector<unsigned char>{1, 2, 3}), mpd::DataError);
}

TEST_CASE("tensor round trip (property)") {
  testkit::ScratchDir dir;
  mpd::Rng rng(61);
  std::normal_distribution<float> g(0.0f, 10.0f);
  for (std::size_t n = 1; n < 40; n += 3) {
    std::vector<float> v(n * 2);
    for (float& x : v) x = g(rng);
    const auto desc = mpd::write_tensor(dir.path(), "t.f32", {n, 2}, v);
    CHECK(desc.at("bytes") == n * 8);
    CHECK(desc.at("dtype") == "f32le");
    CHECK(mpd::read_tensor(dir.path(), desc, {n, 2}) == v);
  }
}

TEST_CASE("corruption is detected") {
  testkit::ScratchDir dir;
  const std::vector<float> v{1, 2, 3, 4, 5, 6};
  const auto desc = mpd::write_tensor(dir.path(), "t.f32", {2, 3}, v);
  const fs::path file = dir.path() / "t.f32";

  SUBCASE("truncated file") {
    fs::resize_file(file, 20);
    CHECK_THROWS_AS(mpd::read_tensor(dir.path(), desc, {2, 3}), mpd::ChecksumError);
  }
  SUBCASE("flipped bit") {
    auto bytes = testkit::read_bytes(file);
    bytes[5] ^= 0x10;
    std::ofstream(file, std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
    CHECK_THROWS_AS(mpd::read_tensor(dir.path(), desc, {2, 3}), mpd::ChecksumError);
  }
  SUBCASE("unexpected shape") {
    CHECK_THROWS_AS(mpd::read_tensor(dir.path(), desc, {3, 2}), mpd::DataError);
  }
  SUBCASE("missing file") {
    fs::remove(file);
    CHECK_THROWS_AS(mpd::read_tensor(dir.path(), desc, {2, 3}), mpd::NotFoundError);
  }
  SUBCASE("path escapes the directory") {
    auto bad = desc;
    bad["file"] = "../t.f32";
    CHECK_THROWS_AS(mpd::read_tensor(dir.path(), bad, {2, 3}), mpd::DataError);
  }
  SUBCASE("malformed descriptor") {
    auto bad = desc;
    bad.erase("crc32");
    CHECK_THROWS_AS(mpd::read_tensor(dir.path(), bad, {2, 3}), mpd::DataError);
  }
}

TEST_CASE("staged directories appear only on commit") {
  testkit::ScratchDir dir;
  const fs::path target = dir.path() / "out";
  {
    mpd::StagedDirectory staged(target);
    mpd::write_json_file(staged.path() / "a.json", {{"x", 1}});
    CHECK_FALSE(fs::exists(target));
  }
  CHECK_FALSE(fs::exists(target));
  CHECK(std::distance(fs::directory_iterator(dir.path()), fs::directory_iterator{}) == 0);

  {
    mpd::StagedDirectory staged(target);
    mpd::write_json_file(staged.path() / "a.json", {{"x", 2}});
    staged.commit();
  }
  CHECK(mpd::read_json_file(target / "a.json").at("x") == 2);

  {
    mpd::StagedDirectory staged(target);
    mpd::write_json_file(staged.path() / "b.json", {{"y", 3}});
    staged.commit();
  }
  CHECK_FALSE(fs::exists(target / "a.json"));
  CHECK(fs::exists(target / "b.json"));
}

TEST_CASE("json files") {
  testkit::ScratchDir dir;
  CHECK_THROWS_AS(mpd::read_json_file(dir.path() / "none.json"), mpd::NotFoundError);
  std::ofstream(dir.path() / "bad.json") << "{not json";
  CHECK_THROWS_AS(mpd::read_json_file(dir.path() / "bad.json"), mpd::DataError);
}
