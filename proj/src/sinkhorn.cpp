#include "mpd/sinkhorn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "mpd/errors.hpp"

namespace mpd {

namespace {

void check_cost(const CostMatrix& cost) {
  if (cost.rows() == 0 || cost.cols() == 0) throw ConfigError("sinkhorn: empty cost matrix");
  if (!cost.all_finite()) throw NumericError("sinkhorn: non-finite cost entry");
}

TransportPlan make_plan(Matrix mass) {
  TransportPlan plan;
  plan.row_target.assign(mass.rows(), 1.0 / static_cast<double>(mass.rows()));
  plan.col_target.assign(mass.cols(), 1.0 / static_cast<double>(mass.cols()));
  plan.mass = std::move(mass);
  return plan;
}

double l1_gap(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s;
}

double mean_abs_change(const Vector& now, const Vector& before) {
  return l1_gap(now, before) / static_cast<double>(now.size());
}

TransportPlan sinkhorn_log(const CostMatrix& cost, const SinkhornConfig& cfg) {
  const std::size_t P = cost.rows();
  const std::size_t Q = cost.cols();
  const double log_u = -std::log(static_cast<double>(P));
  const double log_v = -std::log(static_cast<double>(Q));

  Matrix log_kernel(P, Q);
  for (std::size_t p = 0; p < P; ++p)
    for (std::size_t q = 0; q < Q; ++q) log_kernel(p, q) = -cost(p, q) / cfg.lambda;

  Vector log_a(P, 0.0);
  Vector log_b(Q, 0.0);  // v^(0) = 1
  Vector b(Q, 1.0);
  Vector b_prev(Q);
  Vector scratch(std::max(P, Q));

  TransportPlan plan = make_plan(Matrix(P, Q));
  plan.converged = false;

  auto assemble = [&] {
    for (std::size_t p = 0; p < P; ++p)
      for (std::size_t q = 0; q < Q; ++q)
        plan.mass(p, q) = std::exp(log_a[p] + log_kernel(p, q) + log_b[q]);
  };

  for (std::size_t it = 1; it <= cfg.max_iters; ++it) {
    for (std::size_t p = 0; p < P; ++p) {
      for (std::size_t q = 0; q < Q; ++q) scratch[q] = log_kernel(p, q) + log_b[q];
      log_a[p] = log_u - log_sum_exp({scratch.data(), Q});
    }
    b_prev = b;
    for (std::size_t q = 0; q < Q; ++q) {
      for (std::size_t p = 0; p < P; ++p) scratch[p] = log_kernel(p, q) + log_a[p];
      log_b[q] = log_v - log_sum_exp({scratch.data(), P});
      b[q] = std::exp(log_b[q]);
    }
    plan.iterations = it;
    if (mean_abs_change(b, b_prev) < cfg.threshold) {
      assemble();
      if (plan.row_marginal_error() < cfg.marginal_tol) {
        plan.converged = true;
        return plan;
      }
    }
  }
  assemble();
  return plan;
}

TransportPlan sinkhorn_linear(const CostMatrix& cost, const SinkhornConfig& cfg) {
  const std::size_t P = cost.rows();
  const std::size_t Q = cost.cols();
  const double u_target = 1.0 / static_cast<double>(P);
  const double v_target = 1.0 / static_cast<double>(Q);

  Matrix kernel(P, Q);
  for (std::size_t p = 0; p < P; ++p) {
    for (std::size_t q = 0; q < Q; ++q) {
      kernel(p, q) = std::exp(-cost(p, q) / cfg.lambda);
      if (!(kernel(p, q) > std::numeric_limits<double>::min())) {
        throw NumericError("sinkhorn: exp(-C/lambda) underflows at (" + std::to_string(p) +
                           "," + std::to_string(q) + "); lambda " + std::to_string(cfg.lambda) +
                           " is too small for this cost scale");
      }
    }
  }

  Vector a(P, 1.0);
  Vector b(Q, 1.0);
  Vector b_prev(Q);
  TransportPlan plan = make_plan(Matrix(P, Q));
  plan.converged = false;

  auto assemble = [&] {
    for (std::size_t p = 0; p < P; ++p)
      for (std::size_t q = 0; q < Q; ++q) plan.mass(p, q) = a[p] * kernel(p, q) * b[q];
  };

  for (std::size_t it = 1; it <= cfg.max_iters; ++it) {
    for (std::size_t p = 0; p < P; ++p) {
      const double denom = dot(kernel.row(p), b);
      if (!(denom > 0.0) || !std::isfinite(denom)) throw NumericError("sinkhorn: scaling underflow");
      a[p] = u_target / denom;
    }
    b_prev = b;
    for (std::size_t q = 0; q < Q; ++q) {
      double denom = 0.0;
      for (std::size_t p = 0; p < P; ++p) denom += kernel(p, q) * a[p];
      if (!(denom > 0.0) || !std::isfinite(denom)) throw NumericError("sinkhorn: scaling underflow");
      b[q] = v_target / denom;
    }
    plan.iterations = it;
    if (mean_abs_change(b, b_prev) < cfg.threshold) {
      assemble();
      if (plan.row_marginal_error() < cfg.marginal_tol) {
        plan.converged = true;
        return plan;
      }
    }
  }
  assemble();
  return plan;
}

}  // namespace

void SinkhornConfig::validate() const {
  if (!(lambda > 0.0) || !std::isfinite(lambda)) throw ConfigError("sinkhorn: lambda must be > 0");
  if (!(threshold > 0.0)) throw ConfigError("sinkhorn: threshold must be > 0");
  if (max_iters < 1) throw ConfigError("sinkhorn: max_iters must be >= 1");
  if (!(marginal_tol > 0.0)) throw ConfigError("sinkhorn: marginal_tol must be > 0");
}

double TransportPlan::row_marginal_error() const { return l1_gap(mass.row_sums(), row_target); }

double TransportPlan::col_marginal_error() const { return l1_gap(mass.col_sums(), col_target); }

Matrix similarity_matrix(const Matrix& features, const Matrix& prototypes) {
  if (features.cols() != prototypes.cols()) {
    throw ConfigError("similarity_matrix: feature dim " + std::to_string(features.cols()) +
                      " != prototype dim " + std::to_string(prototypes.cols()));
  }
  Matrix sim(features.rows(), prototypes.rows());
  for (std::size_t p = 0; p < features.rows(); ++p)
    for (std::size_t q = 0; q < prototypes.rows(); ++q)
      sim(p, q) = cosine_sim(features.row(p), prototypes.row(q));
  return sim;
}

CostMatrix cost_from_sim(const Matrix& features, const Matrix& prototypes) {
  CostMatrix cost = similarity_matrix(features, prototypes);
  for (double& c : cost.data()) c = 1.0 - c;
  return cost;
}

TransportPlan sinkhorn(const CostMatrix& cost, const SinkhornConfig& cfg) {
  cfg.validate();
  check_cost(cost);
  return cfg.log_domain ? sinkhorn_log(cost, cfg) : sinkhorn_linear(cost, cfg);
}

TransportPlan uniform_plan(std::size_t rows, std::size_t cols) {
  if (rows == 0 || cols == 0) throw ConfigError("uniform_plan: empty shape");
  return make_plan(Matrix(rows, cols, 1.0 / static_cast<double>(rows * cols)));
}

double ot_score(const TransportPlan& plan, const Matrix& sim) {
  if (plan.rows() != sim.rows() || plan.cols() != sim.cols()) {
    throw ConfigError("ot_score: plan is " + std::to_string(plan.rows()) + "x" +
                      std::to_string(plan.cols()) + " but sim is " + std::to_string(sim.rows()) +
                      "x" + std::to_string(sim.cols()));
  }
  return dot(plan.mass.data(), sim.data());
}

PlanKind parse_plan_kind(std::string_view name) {
  if (name == "sinkhorn") return PlanKind::kSinkhorn;
  if (name == "uniform") return PlanKind::kUniform;
  if (name == "cosine") return PlanKind::kCosine;
  throw ConfigError("unknown plan kind '" + std::string(name) + "'");
}

std::string_view to_string(PlanKind kind) {
  switch (kind) {
    case PlanKind::kSinkhorn: return "sinkhorn";
    case PlanKind::kUniform: return "uniform";
    case PlanKind::kCosine: return "cosine";
  }
  return "?";
}

TransportPlan plan_variant(PlanKind kind, const CostMatrix& cost, const Matrix& sim,
                           const SinkhornConfig& cfg) {
  switch (kind) {
    case PlanKind::kSinkhorn:
      return sinkhorn(cost, cfg);
    case PlanKind::kUniform:
      return uniform_plan(sim.rows(), sim.cols());
    case PlanKind::kCosine: {
      Matrix mass(sim.rows(), sim.cols());
      double total = 0.0;
      for (std::size_t i = 0; i < sim.size(); ++i) {
        mass.data()[i] = std::max(sim.data()[i], 0.0);
        total += mass.data()[i];
      }
      if (!(total > 0.0)) {
        TransportPlan plan = uniform_plan(sim.rows(), sim.cols());
        plan.fallback = true;
        return plan;
      }
      for (double& m : mass.data()) m /= total;
      TransportPlan plan = make_plan(std::move(mass));
      return plan;
    }
  }
  throw ConfigError("plan_variant: invalid kind");
}

}  // namespace mpd
