#pragma once

// Turning the black box's label-word probabilities into class scores:
// nearest-neighbour label-word expansion over the word-prediction head,
// per-prompt calibration against empty-input predictions, weighted
// aggregation per class and averaging across prompts.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "mpd/numerics.hpp"

namespace mpd {

/// Rows of the masked-LM word-prediction head, one per vocabulary token.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  EmbeddingTable(std::vector<std::string> tokens, Matrix rows);

  std::size_t vocab_size() const noexcept { return tokens_.size(); }
  std::size_t dim() const noexcept { return rows_.cols(); }
  const std::string& token(std::size_t id) const { return tokens_.at(id); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }
  const Matrix& rows() const noexcept { return rows_; }

  bool contains(const std::string& token) const { return ids_.count(token) != 0; }
  /// Throws NotFoundError for a token outside the vocabulary.
  std::size_t id_of(const std::string& token) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> ids_;
  Matrix rows_;
};

// Directory layout: embeddings.json ({"format": "mpd-embedding-table",
// "version": 1, "tokens": [...], "tensors": {"rows": <descriptor>}}) and
// embeddings.f32 holding the |V| x d rows.
void save_embedding_table(const std::string& dir, const EmbeddingTable& table);
EmbeddingTable load_embedding_table(const std::string& dir);

struct WeightedToken {
  std::string token;
  std::int64_t id = -1;  // -1 when no embedding table was available
  double weight = 0.0;
  double similarity = 1.0;

  friend bool operator==(const WeightedToken&, const WeightedToken&) = default;
};

/// Top-k vocabulary rows by cosine similarity to the seed word's row (the
/// seed itself first), weighted by a softmax over those similarities.
/// Ties in similarity go to the lower token id.
std::vector<WeightedToken> expand_label_words(const EmbeddingTable& table,
                                              const std::string& seed_word, std::size_t k,
                                              double temperature = 1.0);

/// Several seed words: rank by the best similarity to any seed, seeds first.
std::vector<WeightedToken> expand_label_words(const EmbeddingTable& table,
                                              std::span<const std::string> seed_words,
                                              std::size_t k, double temperature = 1.0);

struct ClassWords {
  std::string name;
  std::vector<std::string> seed_words;
  std::vector<WeightedToken> words;  // the expanded set S with weights
};

struct VerbalizerSpec {
  std::vector<ClassWords> classes;
  std::size_t expansion_size = 10;
  bool expand = true;
  double temperature = 1.0;

  std::size_t num_classes() const noexcept { return classes.size(); }
  /// Length of the flattened label-word axis (sum of |S_k|).
  std::size_t axis_length() const noexcept;
  /// Class k's words occupy [offset(k), offset(k) + classes[k].words.size()).
  std::size_t offset(std::size_t k) const;
  /// Label-word tokens in axis order.
  std::vector<std::string> axis_tokens() const;
  /// True once every class carries its expanded words.
  bool frozen() const noexcept;

  /// Throws ConfigError when weights do not sum to 1 within 1e-9, a class
  /// has no words, or expansion_size is 0.
  void validate() const;
};

/// Fills each class's words: expanded from `table` when spec.expand is set,
/// otherwise the seed words with equal weights.
void resolve_verbalizer(VerbalizerSpec& spec, const EmbeddingTable* table);

void to_json(nlohmann::json& j, const VerbalizerSpec& spec);
void from_json(const nlohmann::json& j, VerbalizerSpec& spec);
VerbalizerSpec load_verbalizer(const std::filesystem::path& path);
void save_verbalizer(const std::filesystem::path& path, const VerbalizerSpec& spec);

/// Element-wise raw * mean(empty) / empty. Throws DataError when an
/// empty-input entry is not positive.
Vector calibrate(std::span<const double> raw, std::span<const double> empty);

/// Weighted per-class sums over the label-word axis, before normalization.
Vector aggregate_unnormalized(std::span<const double> calibrated, const VerbalizerSpec& spec);

/// aggregate_unnormalized divided by its sum, so the result is on the
/// probability simplex.
Vector aggregate_to_classes(std::span<const double> calibrated, const VerbalizerSpec& spec);

/// Arithmetic mean of per-prompt class-score vectors.
Vector average_prompts(std::span<const Vector> per_prompt);

/// Full path for one sample: raw is P x L, empty is P x L (one empty-input
/// row per prompt).
Vector calibrated_class_scores(const Matrix& raw, const Matrix& empty, const VerbalizerSpec& spec);

}  // namespace mpd
