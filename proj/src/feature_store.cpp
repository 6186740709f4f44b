#include "mpd/feature_store.hpp"

#include <cmath>
#include <set>

#include "mpd/errors.hpp"
#include "mpd/tensor_io.hpp"

namespace mpd {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kFormat = "mpd-feature-pack";
constexpr int kVersion = 1;

void check_payload_sizes(const FeaturePack& pack) {
  const std::size_t p = pack.num_prompts();
  const std::size_t l = pack.score_dim();
  if (pack.empty_scores.size() != p * l) {
    throw DataError("pack: empty-input scores hold " + std::to_string(pack.empty_scores.size()) +
                    " values, expected P*L=" + std::to_string(p * l));
  }
  for (const auto& r : pack.records) {
    if (r.features.size() != p * pack.hidden_dim) {
      throw DataError("pack: record " + r.id + " has " + std::to_string(r.features.size()) +
                      " feature values, expected P*d_in=" + std::to_string(p * pack.hidden_dim) +
                      " (missing prompt slice?)");
    }
    if (r.scores.size() != p * l) {
      throw DataError("pack: record " + r.id + " has " + std::to_string(r.scores.size()) +
                      " score values, expected P*L=" + std::to_string(p * l));
    }
  }
}

Matrix to_matrix(std::size_t rows, std::size_t cols, const std::vector<float>& v) {
  return Matrix(rows, cols, std::vector<double>(v.begin(), v.end()));
}

}  // namespace

Matrix FeaturePack::features_of(std::size_t record) const {
  return to_matrix(num_prompts(), hidden_dim, records.at(record).features);
}

Matrix FeaturePack::scores_of(std::size_t record) const {
  return to_matrix(num_prompts(), score_dim(), records.at(record).scores);
}

Matrix FeaturePack::empty_matrix() const { return to_matrix(num_prompts(), score_dim(), empty_scores); }

std::string sample_id(const std::string& dataset, const std::string& split, std::size_t index) {
  return dataset + "/" + split + "/" + std::to_string(index);
}

void write_pack(const std::string& dir, const FeaturePack& pack) {
  check_payload_sizes(pack);
  const auto& m = pack.manifest;
  const std::size_t n_rec = pack.records.size();
  const std::size_t p = pack.num_prompts();
  const std::size_t l = pack.score_dim();

  StagedDirectory staged{fs::path(dir)};
  std::vector<float> features;
  std::vector<float> scores;
  features.reserve(n_rec * p * pack.hidden_dim);
  scores.reserve(n_rec * p * l);
  json records = json::array();
  for (const auto& r : pack.records) {
    features.insert(features.end(), r.features.begin(), r.features.end());
    scores.insert(scores.end(), r.scores.begin(), r.scores.end());
    records.push_back({{"id", r.id}, {"label", r.label + 1}});
  }

  json manifest = {
      {"format", kFormat},
      {"version", kVersion},
      {"dataset", m.dataset},
      {"split", m.split},
      {"eval_split", m.eval_split},
      {"encoder", m.encoder},
      {"seed", m.seed},
      {"num_classes", pack.num_classes()},
      {"shots", m.shots},
      {"num_prompts", p},
      {"hidden_dim", pack.hidden_dim},
      {"score_dim", l},
      {"record_count", n_rec},
      {"class_names", m.class_names},
      {"templates", m.templates},
      {"label_words", m.label_words},
      {"label_tokens", m.label_tokens},
      {"records", records},
      {"tensors",
       {{"features", write_tensor(staged.path(), "features.f32", {n_rec, p, pack.hidden_dim}, features)},
        {"scores", write_tensor(staged.path(), "scores.f32", {n_rec, p, l}, scores)},
        {"empty_scores", write_tensor(staged.path(), "empty_scores.f32", {p, l}, pack.empty_scores)}}}};
  write_json_file(staged.path() / "manifest.json", manifest);
  staged.commit();
}

FeaturePack read_pack(const std::string& dir, bool strict) {
  const fs::path root(dir);
  const json doc = read_json_file(root / "manifest.json");
  FeaturePack pack;
  auto& m = pack.manifest;
  std::size_t n_classes = 0, n_prompts = 0, score_dim = 0, record_count = 0;
  json tensors;
  try {
    if (doc.at("format").get<std::string>() != kFormat) throw DataError(dir + ": not a feature pack");
    if (doc.at("version").get<int>() != kVersion) {
      throw DataError(dir + ": unsupported pack version " + doc.at("version").dump());
    }
    m.dataset = doc.at("dataset").get<std::string>();
    m.split = doc.at("split").get<std::string>();
    m.eval_split = doc.value("eval_split", std::string{});
    m.encoder = doc.value("encoder", std::string{});
    m.seed = doc.value("seed", std::uint64_t{0});
    m.shots = doc.at("shots").get<std::size_t>();
    m.class_names = doc.at("class_names").get<std::vector<std::string>>();
    m.templates = doc.at("templates").get<std::vector<std::string>>();
    m.label_words = doc.at("label_words").get<std::vector<std::vector<std::string>>>();
    m.label_tokens = doc.at("label_tokens").get<std::vector<std::string>>();
    n_classes = doc.at("num_classes").get<std::size_t>();
    n_prompts = doc.at("num_prompts").get<std::size_t>();
    score_dim = doc.at("score_dim").get<std::size_t>();
    record_count = doc.at("record_count").get<std::size_t>();
    pack.hidden_dim = doc.at("hidden_dim").get<std::size_t>();
    for (const auto& r : doc.at("records")) {
      const long long label = r.at("label").get<long long>();
      if (label < 1) throw DataError(dir + ": record label " + std::to_string(label) + " < 1");
      pack.records.push_back({r.at("id").get<std::string>(), static_cast<std::size_t>(label - 1), {}, {}});
    }
    tensors = doc.at("tensors");
  } catch (const json::exception& e) {
    throw DataError(dir + ": malformed manifest: " + e.what());
  }

  if (n_classes != m.class_names.size()) {
    throw DataError(dir + ": num_classes=" + std::to_string(n_classes) + " but " +
                    std::to_string(m.class_names.size()) + " class names");
  }
  if (n_prompts != m.templates.size()) {
    throw DataError(dir + ": num_prompts=" + std::to_string(n_prompts) + " but " +
                    std::to_string(m.templates.size()) + " templates");
  }
  if (score_dim != m.label_tokens.size()) {
    throw DataError(dir + ": score_dim=" + std::to_string(score_dim) + " but " +
                    std::to_string(m.label_tokens.size()) + " label tokens");
  }
  if (record_count != pack.records.size()) {
    throw DataError(dir + ": record_count=" + std::to_string(record_count) + " but " +
                    std::to_string(pack.records.size()) + " records listed");
  }
  if (n_prompts == 0 || pack.hidden_dim == 0 || score_dim == 0) {
    throw DataError(dir + ": zero dimension in manifest");
  }

  const std::size_t n_rec = pack.records.size();
  const std::size_t p = n_prompts;
  const std::size_t d = pack.hidden_dim;
  const std::size_t l = score_dim;
  std::vector<float> features, scores;
  try {
    features = read_tensor(root, tensors.at("features"), {n_rec, p, d});
    scores = read_tensor(root, tensors.at("scores"), {n_rec, p, l});
    pack.empty_scores = read_tensor(root, tensors.at("empty_scores"), {p, l});
  } catch (const json::exception& e) {
    throw DataError(dir + ": missing tensor descriptor: " + e.what());
  }
  for (std::size_t i = 0; i < n_rec; ++i) {
    auto& r = pack.records[i];
    r.features.assign(features.begin() + static_cast<std::ptrdiff_t>(i * p * d),
                      features.begin() + static_cast<std::ptrdiff_t>((i + 1) * p * d));
    r.scores.assign(scores.begin() + static_cast<std::ptrdiff_t>(i * p * l),
                    scores.begin() + static_cast<std::ptrdiff_t>((i + 1) * p * l));
  }

  if (strict) {
    const PackReport report = validate_pack(pack);
    if (!report.ok()) {
      std::string msg = dir + ": pack fails validation:";
      for (const auto& issue : report.issues) msg += "\n  [" + issue.kind + "] " + issue.message;
      throw DataError(msg);
    }
  }
  return pack;
}

PackReport validate_pack(const FeaturePack& pack) {
  PackReport report;
  auto issue = [&](std::string kind, std::string msg) {
    report.issues.push_back({std::move(kind), std::move(msg)});
  };
  const auto& m = pack.manifest;
  const std::size_t n = pack.num_classes();
  const std::size_t p = pack.num_prompts();
  const std::size_t l = pack.score_dim();
  report.records = pack.records.size();
  report.class_counts.assign(n, 0);

  if (n == 0) issue("dimension", "no classes");
  if (p == 0) issue("dimension", "no prompt templates");
  if (l == 0) issue("dimension", "empty label-word axis");
  if (pack.hidden_dim == 0) issue("dimension", "hidden_dim is 0");
  if (m.label_words.size() != n) {
    issue("verbalizer", std::to_string(m.label_words.size()) + " label-word entries for " +
                            std::to_string(n) + " classes");
  }
  if (m.shots == 0) issue("shots", "shot count K is 0");
  if (l != 0 && n != 0 && l < n) issue("verbalizer", "label-word axis shorter than class count");

  std::set<std::string> ids;
  const std::string id_prefix = m.dataset + "/" + m.split + "/";
  for (std::size_t i = 0; i < pack.records.size(); ++i) {
    const auto& r = pack.records[i];
    if (!ids.insert(r.id).second) issue("id", "duplicate sample id '" + r.id + "'");
    if (r.id.rfind(id_prefix, 0) != 0) {
      issue("id", "sample id '" + r.id + "' does not start with '" + id_prefix + "'");
    }
    if (r.label >= n) {
      issue("label", "record " + r.id + " has label " + std::to_string(r.label + 1) +
                         " outside 1.." + std::to_string(n));
    } else {
      ++report.class_counts[r.label];
    }
    if (r.features.size() != p * pack.hidden_dim) {
      issue("dimension", "record " + r.id + " has " + std::to_string(r.features.size()) +
                             " feature values, expected " + std::to_string(p * pack.hidden_dim));
      continue;
    }
    if (r.scores.size() != p * l) {
      issue("dimension", "record " + r.id + " has " + std::to_string(r.scores.size()) +
                             " score values, expected " + std::to_string(p * l));
      continue;
    }
    for (std::size_t j = 0; j < p; ++j) {
      double sq = 0.0;
      bool finite = true;
      for (std::size_t c = 0; c < pack.hidden_dim; ++c) {
        const float x = r.features[j * pack.hidden_dim + c];
        if (!std::isfinite(x)) {
          issue("nan", "record " + r.id + " prompt " + std::to_string(j) + " feature " +
                           std::to_string(c) + " is not finite");
          finite = false;
        }
        sq += static_cast<double>(x) * x;
      }
      if (finite && sq == 0.0) {
        issue("zero norm", "record " + r.id + " prompt " + std::to_string(j) + " has a zero feature row");
      }
      for (std::size_t c = 0; c < l; ++c) {
        const float s = r.scores[j * l + c];
        if (!std::isfinite(s)) {
          issue("nan", "record " + r.id + " prompt " + std::to_string(j) + " score " +
                           std::to_string(c) + " is not finite");
        } else if (s < 0.0f) {
          issue("score", "record " + r.id + " prompt " + std::to_string(j) + " score " +
                             std::to_string(c) + " is negative");
        }
      }
    }
  }

  if (pack.empty_scores.size() != p * l) {
    issue("dimension", "empty-input scores hold " + std::to_string(pack.empty_scores.size()) +
                           " values, expected " + std::to_string(p * l));
  } else {
    for (std::size_t i = 0; i < pack.empty_scores.size(); ++i) {
      const float s = pack.empty_scores[i];
      if (!std::isfinite(s)) {
        issue("nan", "empty-input score " + std::to_string(i) + " is not finite");
      } else if (!(s > 0.0f)) {
        issue("calibration", "empty-input score " + std::to_string(i) + " is not positive");
      }
    }
  }

  if (m.split == "train" && n > 0) {
    if (pack.records.size() != n * m.shots) {
      issue("class count", "train pack has " + std::to_string(pack.records.size()) +
                               " records, expected N*K=" + std::to_string(n * m.shots));
    }
    for (std::size_t k = 0; k < n; ++k) {
      if (report.class_counts[k] != m.shots) {
        issue("class count", "class " + std::to_string(k + 1) + " (" + m.class_names[k] + ") has " +
                                 std::to_string(report.class_counts[k]) + " samples, expected K=" +
                                 std::to_string(m.shots));
      }
    }
  }
  return report;
}

std::vector<Sample> pack_samples(const FeaturePack& pack) {
  std::vector<Sample> out;
  out.reserve(pack.records.size());
  for (std::size_t i = 0; i < pack.records.size(); ++i) out.push_back({pack.features_of(i), pack.records[i].label});
  return out;
}

TrainingSet pack_training_set(const FeaturePack& pack) {
  TrainingSet set{pack_samples(pack), pack.num_classes(), pack.manifest.shots};
  set.validate();
  return set;
}

FeaturePack select_prompts(const FeaturePack& pack, const std::vector<std::size_t>& prompts) {
  if (prompts.empty()) throw ConfigError("select_prompts: empty prompt subset");
  const std::size_t p = pack.num_prompts();
  const std::size_t d = pack.hidden_dim;
  const std::size_t l = pack.score_dim();
  for (std::size_t j : prompts)
    if (j >= p) throw ConfigError("select_prompts: prompt index " + std::to_string(j) + " out of range");

  FeaturePack out;
  out.manifest = pack.manifest;
  out.hidden_dim = d;
  out.manifest.templates.clear();
  for (std::size_t j : prompts) {
    out.manifest.templates.push_back(pack.manifest.templates[j]);
    out.empty_scores.insert(out.empty_scores.end(), pack.empty_scores.begin() + static_cast<std::ptrdiff_t>(j * l),
                            pack.empty_scores.begin() + static_cast<std::ptrdiff_t>((j + 1) * l));
  }
  for (const auto& r : pack.records) {
    PackRecord nr{r.id, r.label, {}, {}};
    for (std::size_t j : prompts) {
      nr.features.insert(nr.features.end(), r.features.begin() + static_cast<std::ptrdiff_t>(j * d),
                         r.features.begin() + static_cast<std::ptrdiff_t>((j + 1) * d));
      nr.scores.insert(nr.scores.end(), r.scores.begin() + static_cast<std::ptrdiff_t>(j * l),
                       r.scores.begin() + static_cast<std::ptrdiff_t>((j + 1) * l));
    }
    out.records.push_back(std::move(nr));
  }
  return out;
}

}  // namespace mpd
