#include "mpd/verbalizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mpd/errors.hpp"
#include "mpd/tensor_io.hpp"

namespace mpd {

namespace fs = std::filesystem;
using nlohmann::json;

EmbeddingTable::EmbeddingTable(std::vector<std::string> tokens, Matrix rows)
    : tokens_(std::move(tokens)), rows_(std::move(rows)) {
  if (tokens_.empty()) throw DataError("embedding table has no tokens");
  if (tokens_.size() != rows_.rows()) {
    throw DataError("embedding table: " + std::to_string(tokens_.size()) + " tokens but " +
                    std::to_string(rows_.rows()) + " rows");
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!ids_.emplace(tokens_[i], i).second) {
      throw DataError("embedding table: duplicate token '" + tokens_[i] + "'");
    }
  }
}

std::size_t EmbeddingTable::id_of(const std::string& token) const {
  const auto it = ids_.find(token);
  if (it == ids_.end()) throw NotFoundError("token '" + token + "' is not in the vocabulary");
  return it->second;
}

void save_embedding_table(const std::string& dir, const EmbeddingTable& table) {
  StagedDirectory staged{fs::path(dir)};
  const auto& d = table.rows().data();
  const std::vector<float> values(d.begin(), d.end());
  json doc = {{"format", "mpd-embedding-table"},
              {"version", 1},
              {"tokens", table.tokens()},
              {"tensors",
               {{"rows", write_tensor(staged.path(), "embeddings.f32",
                                      {table.vocab_size(), table.dim()}, values)}}}};
  write_json_file(staged.path() / "embeddings.json", doc);
  staged.commit();
}

EmbeddingTable load_embedding_table(const std::string& dir) {
  const fs::path root(dir);
  const json doc = read_json_file(root / "embeddings.json");
  std::vector<std::string> tokens;
  json desc;
  std::vector<std::size_t> shape;
  try {
    if (doc.at("format").get<std::string>() != "mpd-embedding-table") {
      throw DataError(dir + ": not an embedding table");
    }
    tokens = doc.at("tokens").get<std::vector<std::string>>();
    desc = doc.at("tensors").at("rows");
    shape = desc.at("shape").get<std::vector<std::size_t>>();
  } catch (const json::exception& e) {
    throw DataError(dir + ": malformed embedding table manifest: " + e.what());
  }
  if (shape.size() != 2) throw DataError(dir + ": embedding rows must be 2-D");
  if (shape[0] != tokens.size()) throw DataError(dir + ": row count differs from token count");
  const auto values = read_tensor(root, desc, shape);
  return EmbeddingTable(std::move(tokens),
                        Matrix(shape[0], shape[1], std::vector<double>(values.begin(), values.end())));
}

std::vector<WeightedToken> expand_label_words(const EmbeddingTable& table,
                                              std::span<const std::string> seed_words,
                                              std::size_t k, double temperature) {
  if (seed_words.empty()) throw ConfigError("expand_label_words: no seed word");
  if (k < 1 || k > table.vocab_size()) {
    throw ConfigError("expand_label_words: k=" + std::to_string(k) + " outside [1, " +
                      std::to_string(table.vocab_size()) + "]");
  }
  std::vector<std::size_t> seed_ids;
  for (const auto& w : seed_words) {
    const std::size_t id = table.id_of(w);
    if (norm(table.rows().row(id)) == 0.0) {
      throw DataError("seed word '" + w + "' has a zero embedding row");
    }
    seed_ids.push_back(id);
  }

  struct Candidate {
    std::size_t id;
    double sim;
    bool seed;
  };
  std::vector<Candidate> candidates;
  candidates.reserve(table.vocab_size());
  for (std::size_t id = 0; id < table.vocab_size(); ++id) {
    const auto row = table.rows().row(id);
    const bool is_seed = std::find(seed_ids.begin(), seed_ids.end(), id) != seed_ids.end();
    if (!is_seed && norm(row) == 0.0) continue;
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t s : seed_ids) best = std::max(best, cosine_sim(table.rows().row(s), row));
    candidates.push_back({id, best, is_seed});
  }
  if (candidates.size() < k) {
    throw DataError("expand_label_words: only " + std::to_string(candidates.size()) +
                    " tokens have nonzero rows, need " + std::to_string(k));
  }
  const auto better = [](const Candidate& a, const Candidate& b) {
    if (a.seed != b.seed) return a.seed;
    if (a.sim != b.sim) return a.sim > b.sim;
    return a.id < b.id;
  };
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(k),
                    candidates.end(), better);

  Vector sims(k);
  for (std::size_t i = 0; i < k; ++i) sims[i] = candidates[i].sim;
  const Vector weights = softmax(sims, temperature);
  std::vector<WeightedToken> out;
  for (std::size_t i = 0; i < k; ++i) {
    out.push_back({table.token(candidates[i].id), static_cast<std::int64_t>(candidates[i].id),
                   weights[i], candidates[i].sim});
  }
  return out;
}

std::vector<WeightedToken> expand_label_words(const EmbeddingTable& table,
                                              const std::string& seed_word, std::size_t k,
                                              double temperature) {
  return expand_label_words(table, std::span<const std::string>(&seed_word, 1), k, temperature);
}

std::size_t VerbalizerSpec::axis_length() const noexcept {
  std::size_t n = 0;
  for (const auto& c : classes) n += c.words.size();
  return n;
}

std::size_t VerbalizerSpec::offset(std::size_t k) const {
  if (k >= classes.size()) throw ConfigError("verbalizer: class index out of range");
  std::size_t off = 0;
  for (std::size_t i = 0; i < k; ++i) off += classes[i].words.size();
  return off;
}

std::vector<std::string> VerbalizerSpec::axis_tokens() const {
  std::vector<std::string> out;
  for (const auto& c : classes)
    for (const auto& w : c.words) out.push_back(w.token);
  return out;
}

bool VerbalizerSpec::frozen() const noexcept {
  return !classes.empty() &&
         std::all_of(classes.begin(), classes.end(), [](const ClassWords& c) { return !c.words.empty(); });
}

void VerbalizerSpec::validate() const {
  if (classes.empty()) throw ConfigError("verbalizer: no classes");
  if (expansion_size < 1) throw ConfigError("verbalizer: expansion_size must be >= 1");
  if (!(temperature > 0.0)) throw ConfigError("verbalizer: temperature must be > 0");
  for (const auto& c : classes) {
    if (c.words.empty()) throw ConfigError("verbalizer: class '" + c.name + "' has no label words");
    double total = 0.0;
    for (const auto& w : c.words) {
      if (!(w.weight >= 0.0)) throw ConfigError("verbalizer: negative weight in class '" + c.name + "'");
      total += w.weight;
    }
    if (std::abs(total - 1.0) > 1e-9) {
      throw ConfigError("verbalizer: weights of class '" + c.name + "' sum to " +
                        std::to_string(total) + ", expected 1");
    }
  }
}

void resolve_verbalizer(VerbalizerSpec& spec, const EmbeddingTable* table) {
  for (auto& c : spec.classes) {
    if (c.seed_words.empty()) throw ConfigError("verbalizer: class '" + c.name + "' has no seed word");
    if (spec.expand) {
      if (!table) throw ConfigError("verbalizer: expansion requires an embedding table");
      c.words = expand_label_words(*table, c.seed_words, spec.expansion_size, spec.temperature);
    } else {
      c.words.clear();
      const double w = 1.0 / static_cast<double>(c.seed_words.size());
      for (const auto& s : c.seed_words) {
        const std::int64_t id = table ? static_cast<std::int64_t>(table->id_of(s)) : -1;
        c.words.push_back({s, id, w, 1.0});
      }
    }
  }
  spec.validate();
}

void to_json(json& j, const VerbalizerSpec& spec) {
  json classes = json::array();
  for (const auto& c : spec.classes) {
    json words = json::array();
    for (const auto& w : c.words)
      words.push_back({{"token", w.token}, {"id", w.id}, {"weight", w.weight}, {"similarity", w.similarity}});
    json entry = {{"name", c.name}, {"seed_words", c.seed_words}};
    if (!c.words.empty()) entry["expanded"] = words;
    classes.push_back(entry);
  }
  j = {{"format", "mpd-verbalizer"},
       {"version", 1},
       {"expansion_size", spec.expansion_size},
       {"expand", spec.expand},
       {"temperature", spec.temperature},
       {"classes", classes}};
}

void from_json(const json& j, VerbalizerSpec& spec) {
  try {
    spec = VerbalizerSpec{};
    spec.expansion_size = j.value("expansion_size", spec.expansion_size);
    spec.expand = j.value("expand", spec.expand);
    spec.temperature = j.value("temperature", spec.temperature);
    for (const auto& c : j.at("classes")) {
      ClassWords cw;
      cw.name = c.at("name").get<std::string>();
      if (c.contains("seed_words")) {
        cw.seed_words = c.at("seed_words").get<std::vector<std::string>>();
      } else {
        cw.seed_words = {c.at("seed_word").get<std::string>()};
      }
      if (c.contains("expanded")) {
        for (const auto& w : c.at("expanded")) {
          cw.words.push_back({w.at("token").get<std::string>(), w.value("id", std::int64_t{-1}),
                              w.at("weight").get<double>(), w.value("similarity", 1.0)});
        }
      }
      spec.classes.push_back(std::move(cw));
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed verbalizer document: ") + e.what());
  }
}

VerbalizerSpec load_verbalizer(const fs::path& path) {
  VerbalizerSpec spec = read_json_file(path).get<VerbalizerSpec>();
  if (spec.frozen()) spec.validate();
  return spec;
}

void save_verbalizer(const fs::path& path, const VerbalizerSpec& spec) {
  const fs::path tmp = fs::path(path.string() + ".tmp");
  write_json_file(tmp, json(spec));
  fs::rename(tmp, path);
}

Vector calibrate(std::span<const double> raw, std::span<const double> empty) {
  if (raw.size() != empty.size()) {
    throw ConfigError("calibrate: raw length " + std::to_string(raw.size()) +
                      " != empty-input length " + std::to_string(empty.size()));
  }
  if (raw.empty()) throw ConfigError("calibrate: empty score vector");
  double mean = 0.0;
  for (std::size_t i = 0; i < empty.size(); ++i) {
    if (!(empty[i] > 0.0) || !std::isfinite(empty[i])) {
      throw DataError("calibrate: empty-input score at " + std::to_string(i) + " is not positive");
    }
    mean += empty[i];
  }
  mean /= static_cast<double>(empty.size());
  Vector out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) out[i] = raw[i] * (mean / empty[i]);
  return out;
}

Vector aggregate_unnormalized(std::span<const double> calibrated, const VerbalizerSpec& spec) {
  if (calibrated.size() != spec.axis_length()) {
    throw ConfigError("aggregate: score length " + std::to_string(calibrated.size()) +
                      " != label-word axis length " + std::to_string(spec.axis_length()));
  }
  Vector out(spec.num_classes(), 0.0);
  std::size_t pos = 0;
  for (std::size_t k = 0; k < spec.num_classes(); ++k)
    for (const auto& w : spec.classes[k].words) out[k] += w.weight * calibrated[pos++];
  return out;
}

Vector aggregate_to_classes(std::span<const double> calibrated, const VerbalizerSpec& spec) {
  Vector out = aggregate_unnormalized(calibrated, spec);
  double total = 0.0;
  for (double x : out) total += x;
  if (!(total > 0.0) || !std::isfinite(total)) {
    throw DataError("aggregate: class scores sum to " + std::to_string(total) + ", cannot normalize");
  }
  for (double& x : out) x /= total;
  return out;
}

Vector average_prompts(std::span<const Vector> per_prompt) {
  if (per_prompt.empty()) throw ConfigError("average_prompts: no prompts");
  Vector out(per_prompt.front().size(), 0.0);
  for (const Vector& v : per_prompt) {
    if (v.size() != out.size()) throw ConfigError("average_prompts: length mismatch");
    for (std::size_t k = 0; k < v.size(); ++k) out[k] += v[k];
  }
  for (double& x : out) x /= static_cast<double>(per_prompt.size());
  return out;
}

Vector calibrated_class_scores(const Matrix& raw, const Matrix& empty, const VerbalizerSpec& spec) {
  if (raw.rows() != empty.rows() || raw.cols() != empty.cols()) {
    throw ConfigError("calibrated_class_scores: raw and empty-input shapes differ");
  }
  std::vector<Vector> per_prompt;
  per_prompt.reserve(raw.rows());
  for (std::size_t j = 0; j < raw.rows(); ++j)
    per_prompt.push_back(aggregate_to_classes(calibrate(raw.row(j), empty.row(j)), spec));
  return average_prompts(per_prompt);
}

}  // namespace mpd
