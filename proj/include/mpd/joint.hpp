#pragma once

// Fuses OT scores with averaged calibrated class scores and scores the
// resulting predictions.

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "mpd/numerics.hpp"

namespace mpd {

enum class BetaRule { kFixed, kInverseShots };

BetaRule parse_beta_rule(std::string_view name);
std::string_view to_string(BetaRule rule);

struct JointConfig {
  double beta = 1.0;
  BetaRule rule = BetaRule::kInverseShots;

  /// beta itself, or 1/K under the inverse-shots rule.
  double effective_beta(std::size_t shots) const;
  void validate() const;
};

struct Prediction {
  Vector fused;
  std::size_t label = 0;  // argmax of fused, lowest index on ties
  Vector ot_scores;
  Vector calibrated_scores;
  double beta = 0.0;
};

/// fused = ot + beta * cal. Throws ConfigError on a length mismatch.
Prediction fuse(std::span<const double> ot_scores, std::span<const double> cal_scores,
                const JointConfig& cfg, std::size_t shots);

struct Evaluation {
  double accuracy = 0.0;
  std::size_t correct = 0;
  std::size_t total = 0;
  // confusion[gold][predicted]
  std::vector<std::vector<std::size_t>> confusion;
};

/// Throws ConfigError on empty or mismatched input and DataError on a label
/// outside [0, num_classes).
Evaluation evaluate(std::span<const std::size_t> predicted, std::span<const std::size_t> gold,
                    std::size_t num_classes);

struct SeedSummary {
  double mean = 0.0;
  double stddev = 0.0;  // population standard deviation over seeds
  std::size_t count = 0;
};

/// Mean and standard deviation of per-seed accuracies (Welford update).
SeedSummary summarize_seeds(std::span<const double> accuracies);

}  // namespace mpd
