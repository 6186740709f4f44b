#include "mpd/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "mpd/config.hpp"
#include "mpd/errors.hpp"
#include "mpd/tensor_io.hpp"

namespace mpd {

namespace fs = std::filesystem;

namespace {

// d cos(a, b) / d a, given the precomputed cosine.
void add_cosine_grad(std::span<const double> a, std::span<const double> b, double cosine,
                     double scale, std::span<double> out) {
  const double na = norm(a);
  const double nb = norm(b);
  const double inv_ab = 1.0 / (na * nb);
  const double inv_aa = cosine / (na * na);
  for (std::size_t i = 0; i < a.size(); ++i) out[i] += scale * (b[i] * inv_ab - a[i] * inv_aa);
}

void check_batch(const DecoderParams& params, std::span<const Sample> batch) {
  if (batch.empty()) throw ConfigError("empty batch");
  for (const Sample& s : batch) {
    if (s.label >= params.num_classes()) {
      throw DataError("label " + std::to_string(s.label) + " out of range for " +
                      std::to_string(params.num_classes()) + " classes");
    }
  }
}

Gradients zero_like(const DecoderParams& params) {
  Gradients g;
  g.projector = Matrix(params.projector.rows(), params.projector.cols());
  for (const Matrix& bank : params.prototypes) g.prototypes.emplace_back(bank.rows(), bank.cols());
  return g;
}

std::vector<float> to_floats(std::span<const double> v) {
  return {v.begin(), v.end()};
}

}  // namespace

std::size_t DecoderParams::trainable_count() const noexcept {
  std::size_t n = projector.size();
  for (const Matrix& bank : prototypes) n += bank.size();
  return n;
}

void TrainConfig::validate() const {
  if (d_out < 1) throw ConfigError("train: d_out must be >= 1");
  if (num_prototypes < 1) throw ConfigError("train: Q (num_prototypes) must be >= 1");
  if (num_prompts < 1) throw ConfigError("train: P (num_prompts) must be >= 1");
  if (!(adam.lr > 0.0)) throw ConfigError("train: learning rate must be > 0");
  if (!(prototype_init_std > 0.0)) throw ConfigError("train: prototype_init_std must be > 0");
  sinkhorn.validate();
}

void TrainingSet::validate() const {
  if (num_classes < 1) throw DataError("training set: N must be >= 1");
  if (shots < 1) throw DataError("training set: K must be >= 1");
  if (samples.empty()) throw DataError("training set is empty");
  std::vector<std::size_t> counts(num_classes, 0);
  const std::size_t rows = samples.front().features.rows();
  const std::size_t cols = samples.front().features.cols();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Sample& s = samples[i];
    if (s.label >= num_classes) {
      throw DataError("sample " + std::to_string(i) + ": label out of range");
    }
    if (s.features.rows() != rows || s.features.cols() != cols) {
      throw DataError("sample " + std::to_string(i) + ": feature shape differs from sample 0");
    }
    ++counts[s.label];
  }
  for (std::size_t k = 0; k < num_classes; ++k) {
    if (counts[k] != shots) {
      throw DataError("class " + std::to_string(k) + " has " + std::to_string(counts[k]) +
                      " samples, expected K=" + std::to_string(shots));
    }
  }
}

DecoderParams init_params(std::size_t d_in, std::size_t num_classes, const TrainConfig& cfg,
                          Rng& rng) {
  cfg.validate();
  if (d_in < 1 || num_classes < 1) throw ConfigError("init_params: zero dimension");
  DecoderParams params;
  params.projector = Matrix(cfg.d_out, d_in);
  const double bound = 1.0 / std::sqrt(static_cast<double>(d_in));
  std::uniform_real_distribution<double> uniform(-bound, bound);
  for (double& w : params.projector.data()) w = uniform(rng);

  std::normal_distribution<double> gauss(0.0, cfg.prototype_init_std);
  for (std::size_t k = 0; k < num_classes; ++k) {
    Matrix bank(cfg.num_prototypes, cfg.d_out);
    for (double& r : bank.data()) r = gauss(rng);
    params.prototypes.push_back(std::move(bank));
  }
  return params;
}

Matrix project(const DecoderParams& params, const Matrix& hidden) {
  if (hidden.cols() != params.input_dim()) {
    throw ConfigError("project: hidden dim " + std::to_string(hidden.cols()) +
                      " != projector input dim " + std::to_string(params.input_dim()));
  }
  return matmul_transposed(hidden, params.projector);
}

SampleScoring score_sample(const DecoderParams& params, const Matrix& hidden,
                           const SinkhornConfig& sinkhorn, PlanKind plan) {
  SampleScoring out;
  out.projected = project(params, hidden);
  out.scores.resize(params.num_classes());
  for (std::size_t k = 0; k < params.num_classes(); ++k) {
    Matrix sim = similarity_matrix(out.projected, params.prototypes[k]);
    CostMatrix cost = sim;
    for (double& c : cost.data()) c = 1.0 - c;
    TransportPlan t = plan_variant(plan, cost, sim, sinkhorn);
    out.scores[k] = ot_score(t, sim);
    out.similarity.push_back(std::move(sim));
    out.plans.push_back(std::move(t));
  }
  return out;
}

Vector class_scores_ot(const DecoderParams& params, const Matrix& hidden,
                       const SinkhornConfig& sinkhorn, PlanKind plan) {
  return score_sample(params, hidden, sinkhorn, plan).scores;
}

PlanSet solve_plans(const DecoderParams& params, std::span<const Sample> batch,
                    const SinkhornConfig& sinkhorn, PlanKind plan) {
  PlanSet plans;
  plans.reserve(batch.size());
  for (const Sample& s : batch) plans.push_back(score_sample(params, s.features, sinkhorn, plan).plans);
  return plans;
}

double loss(const DecoderParams& params, std::span<const Sample> batch, const TrainConfig& cfg) {
  check_batch(params, batch);
  double total = 0.0;
  for (const Sample& s : batch) {
    const Vector scores = class_scores_ot(params, s.features, cfg.sinkhorn, cfg.plan);
    total += log_sum_exp(scores) - scores[s.label];
  }
  const double mean = total / static_cast<double>(batch.size());
  if (!std::isfinite(mean)) throw NumericError("loss: non-finite value");
  return mean;
}

double loss_with_plans(const DecoderParams& params, std::span<const Sample> batch,
                       const PlanSet& plans) {
  check_batch(params, batch);
  if (plans.size() != batch.size()) throw ConfigError("loss_with_plans: plan count != batch size");
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Matrix v = project(params, batch[i].features);
    Vector scores(params.num_classes());
    for (std::size_t k = 0; k < params.num_classes(); ++k)
      scores[k] = ot_score(plans[i][k], similarity_matrix(v, params.prototypes[k]));
    total += log_sum_exp(scores) - scores[batch[i].label];
  }
  const double mean = total / static_cast<double>(batch.size());
  if (!std::isfinite(mean)) throw NumericError("loss: non-finite value");
  return mean;
}

double Gradients::squared_norm() const {
  double s = dot(projector.data(), projector.data());
  for (const Matrix& g : prototypes) s += dot(g.data(), g.data());
  return s;
}

Gradients gradients_with_plans(const DecoderParams& params, std::span<const Sample> batch,
                               const PlanSet& plans, double* loss_out) {
  check_batch(params, batch);
  if (plans.size() != batch.size()) {
    throw ConfigError("gradients_with_plans: plan count != batch size");
  }
  const std::size_t n_classes = params.num_classes();
  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  Gradients grad = zero_like(params);
  double total = 0.0;

  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Sample& sample = batch[i];
    const Matrix v = project(params, sample.features);
    std::vector<Matrix> sims;
    Vector scores(n_classes);
    for (std::size_t k = 0; k < n_classes; ++k) {
      sims.push_back(similarity_matrix(v, params.prototypes[k]));
      scores[k] = ot_score(plans[i][k], sims[k]);
    }
    total += log_sum_exp(scores) - scores[sample.label];

    // dL/dscore_k = (p_k - [k == y]) / B
    Vector dscore = softmax(scores);
    dscore[sample.label] -= 1.0;
    for (double& d : dscore) d *= inv_batch;

    Matrix dv(v.rows(), v.cols());
    for (std::size_t k = 0; k < n_classes; ++k) {
      const Matrix& bank = params.prototypes[k];
      const TransportPlan& plan = plans[i][k];
      for (std::size_t m = 0; m < v.rows(); ++m) {
        for (std::size_t n = 0; n < bank.rows(); ++n) {
          const double w = dscore[k] * plan.mass(m, n);
          if (w == 0.0) continue;
          add_cosine_grad(v.row(m), bank.row(n), sims[k](m, n), w, dv.row(m));
          add_cosine_grad(bank.row(n), v.row(m), sims[k](m, n), w, grad.prototypes[k].row(n));
        }
      }
    }
    // V = H W^T  =>  dW += dV^T H
    for (std::size_t m = 0; m < v.rows(); ++m) {
      const auto h = sample.features.row(m);
      const auto dvm = dv.row(m);
      for (std::size_t o = 0; o < dvm.size(); ++o) {
        if (dvm[o] == 0.0) continue;
        auto grow = grad.projector.row(o);
        for (std::size_t j = 0; j < h.size(); ++j) grow[j] += dvm[o] * h[j];
      }
    }
  }
  const double mean = total * inv_batch;
  if (!std::isfinite(mean) || !grad.projector.all_finite()) {
    throw NumericError("gradients: non-finite intermediate");
  }
  for (const Matrix& g : grad.prototypes)
    if (!g.all_finite()) throw NumericError("gradients: non-finite intermediate");
  if (loss_out) *loss_out = mean;
  return grad;
}

Gradients gradients(const DecoderParams& params, std::span<const Sample> batch,
                    const TrainConfig& cfg) {
  check_batch(params, batch);
  return gradients_with_plans(params, batch, solve_plans(params, batch, cfg.sinkhorn, cfg.plan));
}

TrainResult train(const TrainingSet& data, const TrainConfig& cfg) {
  cfg.validate();
  data.validate();
  const std::size_t d_in = data.samples.front().features.cols();
  if (data.samples.front().features.rows() != cfg.num_prompts) {
    throw ConfigError("train: samples carry " + std::to_string(data.samples.front().features.rows()) +
                      " prompts but P=" + std::to_string(cfg.num_prompts));
  }

  Rng rng(cfg.seed);
  TrainResult result;
  result.params = init_params(d_in, data.num_classes, cfg, rng);
  DecoderParams& params = result.params;

  AdamState w_state = AdamState::for_param(params.projector, cfg.adam);
  std::vector<AdamState> r_states;
  for (const Matrix& bank : params.prototypes) r_states.push_back(AdamState::for_param(bank, cfg.adam));

  auto apply = [&](const Gradients& g) {
    adam_step(params.projector, g.projector, w_state);
    for (std::size_t k = 0; k < params.prototypes.size(); ++k)
      adam_step(params.prototypes[k], g.prototypes[k], r_states[k]);
  };
  auto count_unconverged = [&](const PlanSet& plans) {
    for (const auto& per_sample : plans)
      for (const TransportPlan& p : per_sample)
        if (!p.converged) ++result.unconverged_plans;
  };

  const std::span<const Sample> all(data.samples);
  std::vector<std::size_t> order(all.size());
  std::iota(order.begin(), order.end(), 0);
  PlanSet cached;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.batch == BatchMode::kFullBatch) {
      if (!cfg.cache_plans || cached.empty()) {
        cached = solve_plans(params, all, cfg.sinkhorn, cfg.plan);
        count_unconverged(cached);
      }
      double epoch_loss = 0.0;
      Gradients g;
      try {
        g = gradients_with_plans(params, all, cached, &epoch_loss);
      } catch (const NumericError& e) {
        throw NumericError("training diverged at epoch " + std::to_string(epoch + 1) + ": " + e.what());
      }
      result.loss_trace.push_back(epoch_loss);
      apply(g);
    } else {
      std::shuffle(order.begin(), order.end(), rng);
      if (cfg.cache_plans && cached.empty()) {
        cached = solve_plans(params, all, cfg.sinkhorn, cfg.plan);
        count_unconverged(cached);
      }
      result.loss_trace.push_back(loss(params, all, cfg));
      for (std::size_t idx : order) {
        const std::span<const Sample> one = all.subspan(idx, 1);
        PlanSet plans;
        if (cfg.cache_plans) {
          plans.push_back(cached[idx]);
        } else {
          plans = solve_plans(params, one, cfg.sinkhorn, cfg.plan);
          count_unconverged(plans);
        }
        try {
          apply(gradients_with_plans(params, one, plans));
        } catch (const NumericError& e) {
          throw NumericError("training diverged at epoch " + std::to_string(epoch + 1) + ": " + e.what());
        }
      }
    }
    if (!std::isfinite(result.loss_trace.back())) {
      throw NumericError("training diverged at epoch " + std::to_string(epoch + 1) +
                         ": loss is not finite");
    }
  }
  return result;
}

std::size_t param_count(const TrainConfig& cfg, std::size_t d_in, std::size_t num_classes) {
  if (cfg.d_out == 0 || cfg.num_prototypes == 0 || d_in == 0 || num_classes == 0) {
    throw ConfigError("param_count: all dimensions must be >= 1");
  }
  return cfg.d_out * d_in + num_classes * cfg.num_prototypes * cfg.d_out;
}

double ot_accuracy(const DecoderParams& params, std::span<const Sample> samples,
                   const SinkhornConfig& sinkhorn, PlanKind plan) {
  if (samples.empty()) throw ConfigError("ot_accuracy: no samples");
  std::size_t correct = 0;
  for (const Sample& s : samples)
    if (argmax(class_scores_ot(params, s.features, sinkhorn, plan)) == s.label) ++correct;
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

void save_checkpoint(const std::string& dir, const DecoderParams& params, const TrainConfig& cfg) {
  StagedDirectory staged{fs::path(dir)};
  std::vector<float> protos;
  for (const Matrix& bank : params.prototypes) {
    const auto f = to_floats(bank.data());
    protos.insert(protos.end(), f.begin(), f.end());
  }
  nlohmann::json manifest = {
      {"format", "mpd-checkpoint"},
      {"version", 1},
      {"input_dim", params.input_dim()},
      {"output_dim", params.output_dim()},
      {"num_classes", params.num_classes()},
      {"num_prototypes", params.num_prototypes()},
      {"seed", cfg.seed},
      {"config", cfg},
      {"tensors",
       {{"projector", write_tensor(staged.path(), "projector.f32",
                                   {params.output_dim(), params.input_dim()},
                                   to_floats(params.projector.data()))},
        {"prototypes", write_tensor(staged.path(), "prototypes.f32",
                                    {params.num_classes(), params.num_prototypes(),
                                     params.output_dim()},
                                    protos)}}}};
  write_json_file(staged.path() / "checkpoint.json", manifest);
  staged.commit();
}

Checkpoint load_checkpoint(const std::string& dir, std::size_t expect_d_in,
                           std::size_t expect_classes) {
  const fs::path root(dir);
  const nlohmann::json manifest = read_json_file(root / "checkpoint.json");
  Checkpoint ck;
  std::size_t d_in = 0, d_out = 0, n = 0, q = 0;
  nlohmann::json tensors;
  try {
    if (manifest.at("format").get<std::string>() != "mpd-checkpoint") {
      throw DataError(dir + ": not a checkpoint");
    }
    if (manifest.at("version").get<int>() != 1) throw DataError(dir + ": unsupported checkpoint version");
    d_in = manifest.at("input_dim").get<std::size_t>();
    d_out = manifest.at("output_dim").get<std::size_t>();
    n = manifest.at("num_classes").get<std::size_t>();
    q = manifest.at("num_prototypes").get<std::size_t>();
    ck.config = manifest.at("config").get<TrainConfig>();
    tensors = manifest.at("tensors");
  } catch (const nlohmann::json::exception& e) {
    throw DataError(dir + ": malformed checkpoint manifest: " + e.what());
  }
  if (d_in == 0 || d_out == 0 || n == 0 || q == 0) throw DataError(dir + ": zero dimension in checkpoint");
  if (ck.config.d_out != d_out || ck.config.num_prototypes != q) {
    throw DataError(dir + ": config echo disagrees with stored dimensions");
  }
  if (expect_d_in != 0 && expect_d_in != d_in) {
    throw DataError(dir + ": checkpoint expects d_in=" + std::to_string(d_in) + ", data has " +
                    std::to_string(expect_d_in));
  }
  if (expect_classes != 0 && expect_classes != n) {
    throw DataError(dir + ": checkpoint has " + std::to_string(n) + " classes, data has " +
                    std::to_string(expect_classes));
  }
  const auto w = read_tensor(root, tensors.at("projector"), {d_out, d_in});
  const auto r = read_tensor(root, tensors.at("prototypes"), {n, q, d_out});
  ck.params.projector = Matrix(d_out, d_in, std::vector<double>(w.begin(), w.end()));
  for (std::size_t k = 0; k < n; ++k) {
    const auto first = r.begin() + static_cast<std::ptrdiff_t>(k * q * d_out);
    ck.params.prototypes.emplace_back(q, d_out,
                                      std::vector<double>(first, first + static_cast<std::ptrdiff_t>(q * d_out)));
  }
  return ck;
}

}  // namespace mpd
