#pragma once

// The trainable decoding head: a linear projector shared by all prompts and
// Q prototypes per class. A sample is scored against class k by solving a
// transport plan between its P projected prompt features and the class's Q
// prototypes and summing plan-weighted cosine similarities.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mpd/numerics.hpp"
#include "mpd/sinkhorn.hpp"

namespace mpd {

struct DecoderParams {
  Matrix projector;                // d_out x d_in
  std::vector<Matrix> prototypes;  // N banks, each Q x d_out

  std::size_t input_dim() const noexcept { return projector.cols(); }
  std::size_t output_dim() const noexcept { return projector.rows(); }
  std::size_t num_classes() const noexcept { return prototypes.size(); }
  std::size_t num_prototypes() const noexcept {
    return prototypes.empty() ? 0 : prototypes.front().rows();
  }
  std::size_t trainable_count() const noexcept;

  friend bool operator==(const DecoderParams&, const DecoderParams&) = default;
};

enum class BatchMode { kFullBatch, kPerSample };

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t d_out = 128;
  std::size_t num_prototypes = 3;  // Q
  std::size_t num_prompts = 3;     // P
  SinkhornConfig sinkhorn;
  PlanKind plan = PlanKind::kSinkhorn;
  AdamSettings adam;
  BatchMode batch = BatchMode::kFullBatch;
  // Solve plans once on the first epoch and reuse them afterwards.
  bool cache_plans = false;
  double prototype_init_std = 0.02;
  std::uint64_t seed = 13;

  void validate() const;
};

struct Sample {
  Matrix features;  // P x d_in hidden states, one row per prompt
  std::size_t label = 0;  // 0-based class index
};

struct TrainingSet {
  std::vector<Sample> samples;
  std::size_t num_classes = 0;  // N
  std::size_t shots = 0;        // K

  /// Throws DataError unless every class has exactly `shots` samples, all
  /// labels are in range and all feature matrices share one shape.
  void validate() const;
};

/// Gaussian prototypes (std `prototype_init_std`) and a uniform
/// +-1/sqrt(d_in) projector, drawn from `rng`.
DecoderParams init_params(std::size_t d_in, std::size_t num_classes, const TrainConfig& cfg,
                          Rng& rng);

/// V = H * W^T: every prompt row projected to d_out.
Matrix project(const DecoderParams& params, const Matrix& hidden);

/// Per-class transport plans and similarity matrices of one sample.
struct SampleScoring {
  Matrix projected;                 // P x d_out
  std::vector<Matrix> similarity;   // per class, P x Q
  std::vector<TransportPlan> plans; // per class
  Vector scores;                    // per class OT score
};

SampleScoring score_sample(const DecoderParams& params, const Matrix& hidden,
                           const SinkhornConfig& sinkhorn, PlanKind plan = PlanKind::kSinkhorn);

/// OT score for every class; each entry lies in [-1, 1].
Vector class_scores_ot(const DecoderParams& params, const Matrix& hidden,
                       const SinkhornConfig& sinkhorn, PlanKind plan = PlanKind::kSinkhorn);

/// Plans for every (sample, class) pair, in batch order.
using PlanSet = std::vector<std::vector<TransportPlan>>;

PlanSet solve_plans(const DecoderParams& params, std::span<const Sample> batch,
                    const SinkhornConfig& sinkhorn, PlanKind plan = PlanKind::kSinkhorn);

/// Mean cross-entropy of softmax(OT scores) against the labels, with plans
/// solved from the current parameters.
double loss(const DecoderParams& params, std::span<const Sample> batch, const TrainConfig& cfg);

/// Same loss, with the given plans used as constants.
double loss_with_plans(const DecoderParams& params, std::span<const Sample> batch,
                       const PlanSet& plans);

struct Gradients {
  Matrix projector;
  std::vector<Matrix> prototypes;

  double squared_norm() const;
};

/// Analytic gradient of the loss with the transport plans held fixed at the
/// solution for the current parameters.
Gradients gradients(const DecoderParams& params, std::span<const Sample> batch,
                    const TrainConfig& cfg);

/// Gradient of loss_with_plans. Also returns the loss through `loss_out`.
Gradients gradients_with_plans(const DecoderParams& params, std::span<const Sample> batch,
                               const PlanSet& plans, double* loss_out = nullptr);

struct TrainResult {
  DecoderParams params;
  std::vector<double> loss_trace;  // loss at the start of each epoch
  std::size_t unconverged_plans = 0;
};

/// Runs cfg.epochs epochs of Adam on the cross-entropy loss. Throws
/// NumericError with the epoch number when the loss stops being finite.
TrainResult train(const TrainingSet& data, const TrainConfig& cfg);

/// d_out * d_in + N * Q * d_out. Throws ConfigError on a zero dimension.
std::size_t param_count(const TrainConfig& cfg, std::size_t d_in, std::size_t num_classes);

/// Fraction of samples whose highest OT score is the gold class.
double ot_accuracy(const DecoderParams& params, std::span<const Sample> samples,
                   const SinkhornConfig& sinkhorn, PlanKind plan = PlanKind::kSinkhorn);

// Checkpoint directory: checkpoint.json (dimensions, config echo, seed,
// tensor descriptors) plus projector.f32 and prototypes.f32 as little-endian
// float32. The write is atomic.
void save_checkpoint(const std::string& dir, const DecoderParams& params, const TrainConfig& cfg);

struct Checkpoint {
  DecoderParams params;
  TrainConfig config;
};

/// Throws DataError when the stored dimensions disagree with the tensors or
/// with the nonzero `expect_*` arguments.
Checkpoint load_checkpoint(const std::string& dir, std::size_t expect_d_in = 0,
                           std::size_t expect_classes = 0);

}  // namespace mpd
