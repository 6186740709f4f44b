#pragma once

// Entropic optimal transport between a set of prompt features and a set of
// class prototypes, both carrying uniform mass.

#include <cstddef>
#include <string_view>

#include "mpd/numerics.hpp"

namespace mpd {

struct SinkhornConfig {
  double lambda = 0.1;      // entropic regularizer
  double threshold = 0.01;  // stop when mean |v(t) - v(t-1)| drops below this
  std::size_t max_iters = 1000;
  // A plan only counts as converged once its row marginals also match the
  // targets to this L1 tolerance (column marginals are exact after each
  // v update).
  double marginal_tol = 1e-9;
  bool log_domain = true;

  /// Throws ConfigError when a field is out of range.
  void validate() const;
};

/// P x Q cost; 1 - cosine similarity when built by cost_from_sim.
using CostMatrix = Matrix;

struct TransportPlan {
  Matrix mass;        // P x Q, nonnegative
  Vector row_target;  // length P, uniform 1/P
  Vector col_target;  // length Q, uniform 1/Q
  std::size_t iterations = 0;
  bool converged = true;
  // Set when a plan variant could not be formed and the uniform plan was
  // substituted.
  bool fallback = false;

  std::size_t rows() const noexcept { return mass.rows(); }
  std::size_t cols() const noexcept { return mass.cols(); }

  /// L1 distances between the plan's marginals and their targets.
  double row_marginal_error() const;
  double col_marginal_error() const;
};

/// P x Q matrix of cosine similarities between rows of `features` and rows
/// of `prototypes`.
Matrix similarity_matrix(const Matrix& features, const Matrix& prototypes);

/// C[p][q] = 1 - cos(features[p], prototypes[q]).
CostMatrix cost_from_sim(const Matrix& features, const Matrix& prototypes);

/// Sinkhorn scaling with uniform marginals, starting from v = 1. Returns the
/// last plan even when max_iters is reached (flagged via `converged`).
/// In the linear-domain path, an underflowing kernel raises NumericError.
TransportPlan sinkhorn(const CostMatrix& cost, const SinkhornConfig& cfg);

/// All-equal plan with mass 1/(P*Q) per cell.
TransportPlan uniform_plan(std::size_t rows, std::size_t cols);

/// sum_{m,n} T[m][n] * sim[m][n].
double ot_score(const TransportPlan& plan, const Matrix& sim);

enum class PlanKind { kSinkhorn, kUniform, kCosine };

PlanKind parse_plan_kind(std::string_view name);
std::string_view to_string(PlanKind kind);

/// Builds a plan of the requested kind. `cosine` clips similarities at zero
/// and renormalizes to unit mass; when no similarity is positive it falls
/// back to the uniform plan and sets `fallback`.
TransportPlan plan_variant(PlanKind kind, const CostMatrix& cost, const Matrix& sim,
                           const SinkhornConfig& cfg);

}  // namespace mpd
