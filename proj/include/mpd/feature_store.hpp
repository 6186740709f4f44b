#pragma once

// On-disk container for everything read from the black-box encoder.
//
// A pack is a directory:
//   manifest.json       dataset manifest, record list, tensor descriptors
//   features.f32        [records, P, d_in]  mask-position hidden states
//   scores.f32          [records, P, L]     label-word probabilities
//   empty_scores.f32    [P, L]              empty-input probabilities
// L is the flattened label-word axis. Tensors are little-endian float32;
// see tensor_io.hpp for the descriptor and checksum. Labels are 1-based on
// disk and 0-based in memory.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mpd/decoder.hpp"
#include "mpd/numerics.hpp"

namespace mpd {

struct DatasetManifest {
  std::string dataset;
  std::string split = "train";  // "train" packs must hold exactly N*K records
  std::vector<std::string> class_names;
  std::vector<std::string> templates;                // one per prompt
  std::vector<std::vector<std::string>> label_words; // seed words, one entry per class
  std::vector<std::string> label_tokens;             // the L-long label-word axis
  std::size_t shots = 0;                             // K
  std::string eval_split;
  std::string encoder;
  std::uint64_t seed = 0;

  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

struct PackRecord {
  std::string id;          // "<dataset>/<split>/<index>"
  std::size_t label = 0;   // 0-based
  std::vector<float> features;  // P * d_in
  std::vector<float> scores;    // P * L

  friend bool operator==(const PackRecord&, const PackRecord&) = default;
};

struct FeaturePack {
  DatasetManifest manifest;
  std::size_t hidden_dim = 0;  // d_in
  std::vector<PackRecord> records;
  std::vector<float> empty_scores;  // P * L

  std::size_t num_classes() const noexcept { return manifest.class_names.size(); }
  std::size_t num_prompts() const noexcept { return manifest.templates.size(); }
  std::size_t score_dim() const noexcept { return manifest.label_tokens.size(); }

  Matrix features_of(std::size_t record) const;  // P x d_in
  Matrix scores_of(std::size_t record) const;    // P x L
  Matrix empty_matrix() const;                   // P x L

  friend bool operator==(const FeaturePack&, const FeaturePack&) = default;
};

std::string sample_id(const std::string& dataset, const std::string& split, std::size_t index);

/// Writes atomically (stage then rename). Throws DataError when the pack's
/// payload sizes disagree with its manifest.
void write_pack(const std::string& dir, const FeaturePack& pack);

/// Parses and checksums every tensor. With `strict` set, any issue found by
/// validate_pack is also an error.
FeaturePack read_pack(const std::string& dir, bool strict = true);

struct PackIssue {
  std::string kind;  // "class count", "nan", "zero norm", "dimension", "label", ...
  std::string message;
};

struct PackReport {
  std::vector<PackIssue> issues;
  std::vector<std::size_t> class_counts;
  std::size_t records = 0;

  bool ok() const noexcept { return issues.empty(); }
};

/// Report-only invariant check; never throws.
PackReport validate_pack(const FeaturePack& pack);

/// Samples of a pack as decoder inputs.
std::vector<Sample> pack_samples(const FeaturePack& pack);

/// Training view: validates the few-shot structure.
TrainingSet pack_training_set(const FeaturePack& pack);

/// A copy of `pack` restricted to the given prompt indices (in order).
FeaturePack select_prompts(const FeaturePack& pack, const std::vector<std::size_t>& prompts);

}  // namespace mpd
