#include "mpd/config.hpp"

#include <string>

#include "mpd/errors.hpp"

namespace mpd {

using nlohmann::json;

namespace {

template <typename T>
void read_opt(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

BatchMode parse_batch(const std::string& s) {
  if (s == "full") return BatchMode::kFullBatch;
  if (s == "per-sample" || s == "per_sample") return BatchMode::kPerSample;
  throw ConfigError("unknown batch mode '" + s + "'");
}

}  // namespace

void to_json(json& j, const SinkhornConfig& c) {
  j = {{"lambda", c.lambda},
       {"threshold", c.threshold},
       {"max_iters", c.max_iters},
       {"marginal_tol", c.marginal_tol},
       {"log_domain", c.log_domain}};
}

void from_json(const json& j, SinkhornConfig& c) {
  read_opt(j, "lambda", c.lambda);
  read_opt(j, "threshold", c.threshold);
  read_opt(j, "max_iters", c.max_iters);
  read_opt(j, "marginal_tol", c.marginal_tol);
  read_opt(j, "log_domain", c.log_domain);
}

void to_json(json& j, const AdamSettings& c) {
  j = {{"lr", c.lr}, {"beta1", c.beta1}, {"beta2", c.beta2}, {"eps", c.eps}};
}

void from_json(const json& j, AdamSettings& c) {
  read_opt(j, "lr", c.lr);
  read_opt(j, "beta1", c.beta1);
  read_opt(j, "beta2", c.beta2);
  read_opt(j, "eps", c.eps);
}

void to_json(json& j, const TrainConfig& c) {
  j = {{"epochs", c.epochs},
       {"d_out", c.d_out},
       {"Q", c.num_prototypes},
       {"P", c.num_prompts},
       {"sinkhorn", c.sinkhorn},
       {"plan", std::string(to_string(c.plan))},
       {"adam", c.adam},
       {"batch", c.batch == BatchMode::kFullBatch ? "full" : "per-sample"},
       {"cache_plans", c.cache_plans},
       {"prototype_init_std", c.prototype_init_std},
       {"seed", c.seed}};
}

void from_json(const json& j, TrainConfig& c) {
  read_opt(j, "epochs", c.epochs);
  read_opt(j, "d_out", c.d_out);
  read_opt(j, "Q", c.num_prototypes);
  read_opt(j, "P", c.num_prompts);
  if (j.contains("sinkhorn")) from_json(j.at("sinkhorn"), c.sinkhorn);
  if (j.contains("adam")) from_json(j.at("adam"), c.adam);
  std::string s;
  if (j.contains("plan")) {
    read_opt(j, "plan", s);
    c.plan = parse_plan_kind(s);
  }
  if (j.contains("batch")) {
    read_opt(j, "batch", s);
    c.batch = parse_batch(s);
  }
  read_opt(j, "cache_plans", c.cache_plans);
  read_opt(j, "prototype_init_std", c.prototype_init_std);
  read_opt(j, "seed", c.seed);
}

void to_json(json& j, const JointConfig& c) {
  j = {{"beta", c.beta}, {"beta_rule", std::string(to_string(c.rule))}};
}

void from_json(const json& j, JointConfig& c) {
  read_opt(j, "beta", c.beta);
  if (j.contains("beta_rule")) {
    std::string s;
    read_opt(j, "beta_rule", s);
    c.rule = parse_beta_rule(s);
  }
}

}  // namespace mpd
