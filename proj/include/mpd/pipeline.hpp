#pragma once

// The operations behind the command-line tool: building verbalizers,
// validating packs, multi-seed training, evaluation with ablations, and
// one-axis sweeps. Every command writes a JSON report that embeds the fully
// resolved configuration.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mpd/decoder.hpp"
#include "mpd/feature_store.hpp"
#include "mpd/joint.hpp"
#include "mpd/verbalizer.hpp"

namespace mpd {

enum class Ablation { kNone, kNoCalibration, kNoOt };

Ablation parse_ablation(std::string_view name);
std::string_view to_string(Ablation a);

struct RunConfig {
  std::string train_pack;
  std::string eval_pack;
  std::string checkpoint_dir;
  std::string report_dir;
  std::string verbalizer;  // optional; defaults to the pack's seed words
  TrainConfig train;
  JointConfig joint;
  std::vector<std::uint64_t> seeds{13, 21, 42, 87, 100};
  PlanKind eval_plan = PlanKind::kSinkhorn;
  Ablation ablate = Ablation::kNone;

  enum class Role { kTrain, kEval, kSweep };
  /// Throws ConfigError when a field is invalid or a path needed for
  /// reading in `role` does not exist.
  void validate(Role role) const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
/// Relative paths in the document are resolved against `base_dir`.
RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);

/// Checkpoint directory for one seed: <checkpoint_dir>/seed-<seed>.
std::string checkpoint_path(const RunConfig& cfg, std::uint64_t seed);

// ---- expand ----------------------------------------------------------------

/// Resolves every class's label words from the embedding table and writes
/// the frozen verbalizer to `out_path`.
VerbalizerSpec cmd_expand(const std::string& table_dir, const std::string& verbalizer_path,
                          const std::string& out_path, std::optional<std::size_t> k = std::nullopt);

// ---- validate --------------------------------------------------------------

nlohmann::json pack_report_json(const PackReport& report);
/// Reads a pack non-strictly and reports on it. Unreadable packs throw.
PackReport cmd_validate(const std::string& pack_path);

// ---- train -----------------------------------------------------------------

struct SeedTraining {
  std::uint64_t seed = 0;
  std::string checkpoint;
  std::vector<double> loss_trace;
  double train_accuracy = 0.0;
  std::size_t unconverged_plans = 0;
};

/// Trains one model per seed and writes one checkpoint per seed plus
/// <report_dir>/train.json.
std::vector<SeedTraining> cmd_train(const RunConfig& cfg);

// ---- eval ------------------------------------------------------------------

struct ScoredSample {
  Vector ot;
  Vector cal;  // averaged calibrated class scores on the simplex
  std::size_t gold = 0;
};

/// Class scores for every eval sample under one parameter set.
std::vector<ScoredSample> score_pack(const DecoderParams& params, const FeaturePack& pack,
                                     const VerbalizerSpec& verbalizer, const SinkhornConfig& sinkhorn,
                                     PlanKind plan);

struct PathResult {
  std::vector<Vector> scores;
  std::vector<std::size_t> predictions;
  double accuracy = 0.0;
};

/// OT-only scoring (the "without class scores" ablation).
PathResult ot_only_path(const std::vector<ScoredSample>& scored);
/// beta * calibrated scores (the "without OT scores" ablation).
PathResult calibration_only_path(const std::vector<ScoredSample>& scored, double beta);
/// Fused scoring under the given ablation, built with fuse().
PathResult fused_path(const std::vector<ScoredSample>& scored, const JointConfig& joint,
                      std::size_t shots, Ablation ablate);

struct SeedEvaluation {
  std::uint64_t seed = 0;
  PathResult selected;  // the path chosen by cfg.ablate
  double fused_accuracy = 0.0;
  double ot_only_accuracy = 0.0;
  double cal_only_accuracy = 0.0;
};

struct EvalReport {
  std::vector<SeedEvaluation> seeds;
  SeedSummary selected;
  SeedSummary fused;
  SeedSummary ot_only;
  SeedSummary cal_only;
  double beta = 0.0;
  nlohmann::json document;
};

/// Loads each seed's checkpoint, scores the eval pack and writes
/// <report_dir>/eval.json and <report_dir>/eval.txt.
EvalReport cmd_eval(const RunConfig& cfg);

// ---- sweep -----------------------------------------------------------------

enum class SweepAxis { kBeta, kPrototypes, kPrompts, kPromptSubset };
SweepAxis parse_sweep_axis(std::string_view name);
std::string_view to_string(SweepAxis axis);

struct SweepRow {
  std::string value;
  SeedSummary fused;
  SeedSummary ot_only;
  SeedSummary cal_only;
};

/// One row per axis value. The beta axis reuses trained checkpoints; the
/// other axes retrain per seed in memory. Empty `values` selects the
/// defaults: beta {0, 0.25, 1/K, 1, 4}; Q {1..5}; P {1..P}; every
/// nonempty prompt subset. Writes <report_dir>/sweep-<axis>.json.
std::vector<SweepRow> cmd_sweep(const RunConfig& cfg, SweepAxis axis,
                                const std::vector<std::string>& values = {});

/// Plain-text table for terminal output.
std::string format_sweep_table(SweepAxis axis, const std::vector<SweepRow>& rows);

/// The verbalizer named in cfg, or one built from the pack's seed words.
VerbalizerSpec resolve_run_verbalizer(const RunConfig& cfg, const FeaturePack& pack);

}  // namespace mpd
