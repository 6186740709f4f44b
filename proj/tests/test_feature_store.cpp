#include <doctest.h>

#include <cmath>
#include <fstream>
#include <limits>

#include "mpd/errors.hpp"
#include "mpd/feature_store.hpp"
#include "mpd/tensor_io.hpp"
#include "testkit.hpp"

namespace fs = std::filesystem;
using mpd::FeaturePack;

namespace {

FeaturePack train_pack(std::uint64_t seed, std::size_t classes = 2, std::size_t shots = 4) {
  testkit::TaskShape shape;
  shape.classes = classes;
  shape.shots = shots;
  shape.dim = 6;
  const auto task = testkit::gaussian_task(shape, seed);
  return testkit::make_pack(task.train.samples, classes, shots, "train", seed);
}

bool has_issue(const mpd::PackReport& r, const std::string& kind) {
  for (const auto& i : r.issues)
    if (i.kind == kind) return true;
  return false;
}

}  // namespace

TEST_CASE("sample ids") { CHECK(mpd::sample_id("sst2", "train", 12) == "sst2/train/12"); }

TEST_CASE("pack write/read round trip (property)") {
  testkit::ScratchDir dir;
  for (std::uint64_t seed = 1; seed <= 8; ++seed) {
    const FeaturePack pack = train_pack(seed, 2 + seed % 3, 1 + seed % 4);
    const std::string path = dir / ("pack" + std::to_string(seed));
    mpd::write_pack(path, pack);
    CHECK(mpd::read_pack(path) == pack);
  }
}

TEST_CASE("labels are 1-based on disk") {
  testkit::ScratchDir dir;
  const FeaturePack pack = train_pack(3);
  mpd::write_pack(dir / "p", pack);
  const auto doc = mpd::read_json_file(fs::path(dir / "p") / "manifest.json");
  CHECK(doc.at("records")[0].at("label") == pack.records[0].label + 1);
  CHECK(doc.at("format") == "mpd-feature-pack");
  CHECK(doc.at("tensors").at("features").at("shape") == std::vector<std::size_t>{8, 3, 6});
}

TEST_CASE("truncated tensor raises a checksum error") {
  testkit::ScratchDir dir;
  mpd::write_pack(dir / "p", train_pack(4));
  const fs::path f = fs::path(dir / "p") / "features.f32";
  fs::resize_file(f, fs::file_size(f) - 4);
  CHECK_THROWS_AS(mpd::read_pack(dir / "p"), mpd::ChecksumError);
}

TEST_CASE("fuzzed manifests fail with data errors, never anything else") {
  testkit::ScratchDir dir;
  mpd::write_pack(dir / "p", train_pack(5));
  const fs::path manifest = fs::path(dir / "p") / "manifest.json";
  const auto original = mpd::read_json_file(manifest);
  mpd::Rng rng(83);
  const std::vector<nlohmann::json> junk{nullptr, -1, 0, 3.5, "x", nlohmann::json::array(),
                                         nlohmann::json::object(), true, 1000000};
  std::size_t rejected = 0;
  for (int trial = 0; trial < 300; ++trial) {
    auto doc = original;
    std::vector<std::string> keys;
    for (auto it = doc.begin(); it != doc.end(); ++it) keys.push_back(it.key());
    const std::string key = keys[rng() % keys.size()];
    if (rng() % 3 == 0) {
      doc.erase(key);
    } else {
      doc[key] = junk[rng() % junk.size()];
    }
    mpd::write_json_file(manifest, doc);
    try {
      mpd::read_pack(dir / "p");
    } catch (const mpd::DataError&) {
      ++rejected;
    } catch (const std::exception& e) {
      FAIL("unexpected exception type: " << e.what());
    }
  }
  CHECK(rejected > 250);

  std::ofstream(manifest) << "{\"format\": ";
  CHECK_THROWS_AS(mpd::read_pack(dir / "p"), mpd::DataError);
  fs::remove(manifest);
  CHECK_THROWS_AS(mpd::read_pack(dir / "p"), mpd::NotFoundError);
}

TEST_CASE("validation catches NaN, zero rows, bad labels and missing classes") {
  SUBCASE("clean pack") {
    const auto report = mpd::validate_pack(train_pack(6));
    CHECK(report.ok());
    CHECK(report.class_counts == std::vector<std::size_t>{4, 4});
  }
  SUBCASE("NaN feature") {
    auto pack = train_pack(6);
    pack.records[2].features[1] = std::numeric_limits<float>::quiet_NaN();
    CHECK(has_issue(mpd::validate_pack(pack), "nan"));
  }
  SUBCASE("zero feature row") {
    auto pack = train_pack(6);
    std::fill(pack.records[1].features.begin(), pack.records[1].features.begin() + 6, 0.0f);
    CHECK(has_issue(mpd::validate_pack(pack), "zero norm"));
  }
  SUBCASE("label out of range") {
    auto pack = train_pack(6);
    pack.records[0].label = 2;
    CHECK(has_issue(mpd::validate_pack(pack), "label"));
  }
  SUBCASE("missing class") {
    auto pack = train_pack(6);
    for (auto& r : pack.records) r.label = 0;
    const auto report = mpd::validate_pack(pack);
    CHECK(has_issue(report, "class count"));
    CHECK(report.class_counts[1] == 0);
  }
  SUBCASE("non-positive scores") {
    auto pack = train_pack(6);
    pack.records[0].scores[0] = -0.5f;
    pack.empty_scores[0] = -1.0f;
    const auto report = mpd::validate_pack(pack);
    CHECK(has_issue(report, "score"));
    CHECK(has_issue(report, "calibration"));
  }
  SUBCASE("duplicate and foreign ids") {
    auto pack = train_pack(6);
    pack.records[1].id = pack.records[0].id;
    pack.records[2].id = "other/train/2";
    CHECK(has_issue(mpd::validate_pack(pack), "id"));
  }
  SUBCASE("verbalizer shape") {
    auto pack = train_pack(6);
    pack.manifest.label_words.pop_back();
    CHECK(has_issue(mpd::validate_pack(pack), "verbalizer"));
  }
}

TEST_CASE("strict reads refuse invalid packs; lenient reads report") {
  testkit::ScratchDir dir;
  auto pack = train_pack(7);
  pack.records[0].features[0] = std::numeric_limits<float>::infinity();
  mpd::write_pack(dir / "p", pack);
  CHECK_THROWS_AS(mpd::read_pack(dir / "p"), mpd::DataError);
  const auto lenient = mpd::read_pack(dir / "p", false);
  CHECK_FALSE(mpd::validate_pack(lenient).ok());
}

TEST_CASE("training sets and prompt subsets") {
  const auto pack = train_pack(8);
  const auto set = mpd::pack_training_set(pack);
  CHECK(set.samples.size() == 8);
  CHECK(set.shots == 4);
  CHECK(set.samples[3].features(2, 5) == static_cast<double>(pack.records[3].features[2 * 6 + 5]));

  const auto sub = mpd::select_prompts(pack, {2, 0});
  CHECK(sub.num_prompts() == 2);
  CHECK(sub.manifest.templates[0] == pack.manifest.templates[2]);
  CHECK(sub.features_of(1).row(0)[3] == pack.features_of(1).row(2)[3]);
  CHECK(sub.empty_matrix().row(1)[1] == pack.empty_matrix().row(0)[1]);
  CHECK(mpd::validate_pack(sub).ok());
  CHECK_THROWS_AS(mpd::select_prompts(pack, {3}), mpd::ConfigError);
  CHECK_THROWS_AS(mpd::select_prompts(pack, {}), mpd::ConfigError);
}
