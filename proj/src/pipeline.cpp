#include "mpd/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "mpd/config.hpp"
#include "mpd/errors.hpp"
#include "mpd/tensor_io.hpp"

namespace mpd {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string resolve_path(const std::string& p, const fs::path& base) {
  if (p.empty() || base.empty() || fs::path(p).is_absolute()) return p;
  return (base / p).lexically_normal().string();
}

void require_existing(const std::string& path, const char* what) {
  if (path.empty()) throw ConfigError(std::string(what) + " path is not set");
  if (!fs::exists(path)) throw ConfigError(std::string(what) + " '" + path + "' does not exist");
}

json summary_json(const SeedSummary& s) {
  return {{"mean", s.mean}, {"std", s.stddev}, {"seeds", s.count}};
}

std::size_t training_shots(const RunConfig& cfg, const FeaturePack& eval_pack) {
  if (!cfg.train_pack.empty() && fs::exists(cfg.train_pack)) {
    const json doc = read_json_file(fs::path(cfg.train_pack) / "manifest.json");
    return doc.value("shots", std::size_t{0});
  }
  return eval_pack.manifest.shots;
}

void ensure_dir(const std::string& dir) {
  if (!dir.empty()) fs::create_directories(dir);
}

std::string fmt_num(double x, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, x);
  return buf;
}

// Trains one seed in memory and returns its selected-path accuracy triple.
struct TripleAccuracy {
  double fused = 0.0, ot_only = 0.0, cal_only = 0.0;
};

TripleAccuracy train_and_score(const RunConfig& cfg, TrainConfig tcfg, std::uint64_t seed,
                               const FeaturePack& train_pack, const FeaturePack& eval_pack,
                               const VerbalizerSpec& verbalizer) {
  tcfg.seed = seed;
  tcfg.num_prompts = train_pack.num_prompts();
  const TrainResult trained = train(pack_training_set(train_pack), tcfg);
  const auto scored = score_pack(trained.params, eval_pack, verbalizer, tcfg.sinkhorn, cfg.eval_plan);
  const std::size_t shots = train_pack.manifest.shots;
  TripleAccuracy acc;
  acc.fused = fused_path(scored, cfg.joint, shots, Ablation::kNone).accuracy;
  acc.ot_only = ot_only_path(scored).accuracy;
  acc.cal_only = calibration_only_path(scored, cfg.joint.effective_beta(shots)).accuracy;
  return acc;
}

std::vector<double> parse_numbers(const std::vector<std::string>& values) {
  std::vector<double> out;
  for (const auto& v : values) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(v, &used));
      if (used != v.size()) throw std::invalid_argument(v);
    } catch (const std::exception&) {
      throw ConfigError("sweep value '" + v + "' is not a number");
    }
  }
  return out;
}

std::string subset_label(const std::vector<std::size_t>& subset) {
  std::string s;
  for (std::size_t i = 0; i < subset.size(); ++i) {
    if (i) s += "+";
    s += std::to_string(subset[i] + 1);
  }
  return s;
}

std::vector<std::size_t> parse_subset(const std::string& label, std::size_t p) {
  std::vector<std::size_t> out;
  std::stringstream ss(label);
  std::string part;
  while (std::getline(ss, part, '+')) {
    const double idx = parse_numbers({part}).front();
    if (idx < 1 || idx > static_cast<double>(p) || idx != std::floor(idx)) {
      throw ConfigError("prompt subset '" + label + "' names a prompt outside 1.." + std::to_string(p));
    }
    out.push_back(static_cast<std::size_t>(idx) - 1);
  }
  if (out.empty()) throw ConfigError("empty prompt subset");
  return out;
}

}  // namespace

Ablation parse_ablation(std::string_view name) {
  if (name == "none") return Ablation::kNone;
  if (name == "no-cal") return Ablation::kNoCalibration;
  if (name == "no-ot") return Ablation::kNoOt;
  throw ConfigError("unknown ablation '" + std::string(name) + "'");
}

std::string_view to_string(Ablation a) {
  switch (a) {
    case Ablation::kNone: return "none";
    case Ablation::kNoCalibration: return "no-cal";
    case Ablation::kNoOt: return "no-ot";
  }
  return "?";
}

void RunConfig::validate(Role role) const {
  train.validate();
  joint.validate();
  if (seeds.empty()) throw ConfigError("seed list is empty");
  if (role == Role::kTrain || role == Role::kSweep) require_existing(train_pack, "train pack");
  if (role == Role::kEval || role == Role::kSweep) require_existing(eval_pack, "eval pack");
  if (checkpoint_dir.empty()) throw ConfigError("checkpoint_dir is not set");
  if (!verbalizer.empty() && role != Role::kTrain) require_existing(verbalizer, "verbalizer");
}

void to_json(json& j, const RunConfig& c) {
  j = {{"train_pack", c.train_pack},
       {"eval_pack", c.eval_pack},
       {"checkpoint_dir", c.checkpoint_dir},
       {"report_dir", c.report_dir},
       {"verbalizer", c.verbalizer},
       {"seeds", c.seeds},
       {"train", c.train},
       {"joint", c.joint},
       {"eval", {{"plan", std::string(to_string(c.eval_plan))}, {"ablate", std::string(to_string(c.ablate))}}}};
}

RunConfig run_config_from_json(const json& j, const fs::path& base_dir) {
  RunConfig c;
  try {
    c.train_pack = resolve_path(j.value("train_pack", std::string{}), base_dir);
    c.eval_pack = resolve_path(j.value("eval_pack", std::string{}), base_dir);
    c.checkpoint_dir = resolve_path(j.value("checkpoint_dir", std::string{}), base_dir);
    c.report_dir = resolve_path(j.value("report_dir", std::string{}), base_dir);
    c.verbalizer = resolve_path(j.value("verbalizer", std::string{}), base_dir);
    if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (j.contains("train")) c.train = j.at("train").get<TrainConfig>();
    if (j.contains("joint")) c.joint = j.at("joint").get<JointConfig>();
    if (j.contains("eval")) {
      const auto& e = j.at("eval");
      if (e.contains("plan")) c.eval_plan = parse_plan_kind(e.at("plan").get<std::string>());
      if (e.contains("ablate")) c.ablate = parse_ablation(e.at("ablate").get<std::string>());
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed run config: ") + e.what());
  }
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  json doc;
  try {
    doc = read_json_file(path);
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  return run_config_from_json(doc, path.parent_path());
}

std::string checkpoint_path(const RunConfig& cfg, std::uint64_t seed) {
  return (fs::path(cfg.checkpoint_dir) / ("seed-" + std::to_string(seed))).string();
}

VerbalizerSpec cmd_expand(const std::string& table_dir, const std::string& verbalizer_path,
                          const std::string& out_path, std::optional<std::size_t> k) {
  VerbalizerSpec spec = load_verbalizer(verbalizer_path);
  if (k) spec.expansion_size = *k;
  const EmbeddingTable table = load_embedding_table(table_dir);
  resolve_verbalizer(spec, &table);
  save_verbalizer(out_path, spec);
  return spec;
}

json pack_report_json(const PackReport& report) {
  json issues = json::array();
  for (const auto& i : report.issues) issues.push_back({{"kind", i.kind}, {"message", i.message}});
  return {{"ok", report.ok()}, {"records", report.records}, {"class_counts", report.class_counts},
          {"issues", issues}};
}

PackReport cmd_validate(const std::string& pack_path) {
  return validate_pack(read_pack(pack_path, /*strict=*/false));
}

VerbalizerSpec resolve_run_verbalizer(const RunConfig& cfg, const FeaturePack& pack) {
  VerbalizerSpec spec;
  if (!cfg.verbalizer.empty()) {
    spec = load_verbalizer(cfg.verbalizer);
    if (!spec.frozen()) {
      if (spec.expand) {
        throw ConfigError("verbalizer " + cfg.verbalizer + " is not expanded; run `mpd expand` first");
      }
      resolve_verbalizer(spec, nullptr);
    }
  } else {
    spec.expand = false;
    spec.expansion_size = 1;
    for (std::size_t k = 0; k < pack.num_classes(); ++k) {
      ClassWords c;
      c.name = pack.manifest.class_names[k];
      c.seed_words = pack.manifest.label_words.at(k);
      spec.classes.push_back(std::move(c));
    }
    resolve_verbalizer(spec, nullptr);
  }
  if (spec.num_classes() != pack.num_classes()) {
    throw DataError("verbalizer has " + std::to_string(spec.num_classes()) + " classes, pack has " +
                    std::to_string(pack.num_classes()));
  }
  if (spec.axis_tokens() != pack.manifest.label_tokens) {
    throw DataError("verbalizer label-word axis does not match the pack's label_tokens");
  }
  return spec;
}

std::vector<SeedTraining> cmd_train(const RunConfig& cfg) {
  cfg.validate(RunConfig::Role::kTrain);
  const FeaturePack pack = read_pack(cfg.train_pack);
  if (pack.manifest.split != "train") throw DataError(cfg.train_pack + " is not a train split pack");
  const TrainingSet data = pack_training_set(pack);
  if (pack.num_prompts() != cfg.train.num_prompts) {
    throw ConfigError("config P=" + std::to_string(cfg.train.num_prompts) + " but pack has " +
                      std::to_string(pack.num_prompts()) + " prompts");
  }

  std::vector<SeedTraining> out;
  json seeds = json::array();
  for (std::uint64_t seed : cfg.seeds) {
    TrainConfig tcfg = cfg.train;
    tcfg.seed = seed;
    const TrainResult result = train(data, tcfg);
    SeedTraining st;
    st.seed = seed;
    st.checkpoint = checkpoint_path(cfg, seed);
    st.loss_trace = result.loss_trace;
    st.unconverged_plans = result.unconverged_plans;
    st.train_accuracy = ot_accuracy(result.params, data.samples, tcfg.sinkhorn, tcfg.plan);
    save_checkpoint(st.checkpoint, result.params, tcfg);
    seeds.push_back({{"seed", seed},
                     {"checkpoint", st.checkpoint},
                     {"loss_trace", st.loss_trace},
                     {"train_accuracy", st.train_accuracy},
                     {"unconverged_plans", st.unconverged_plans},
                     {"trainable_params", result.params.trainable_count()}});
    out.push_back(std::move(st));
  }
  if (!cfg.report_dir.empty()) {
    ensure_dir(cfg.report_dir);
    write_json_file(fs::path(cfg.report_dir) / "train.json",
                    {{"command", "train"}, {"config", cfg}, {"seeds", seeds}});
  }
  return out;
}

std::vector<ScoredSample> score_pack(const DecoderParams& params, const FeaturePack& pack,
                                     const VerbalizerSpec& verbalizer, const SinkhornConfig& sinkhorn,
                                     PlanKind plan) {
  const Matrix empty = pack.empty_matrix();
  std::vector<ScoredSample> out;
  out.reserve(pack.records.size());
  for (std::size_t i = 0; i < pack.records.size(); ++i) {
    ScoredSample s;
    s.ot = class_scores_ot(params, pack.features_of(i), sinkhorn, plan);
    s.cal = calibrated_class_scores(pack.scores_of(i), empty, verbalizer);
    s.gold = pack.records[i].label;
    out.push_back(std::move(s));
  }
  return out;
}

namespace {

PathResult finish(std::vector<Vector> scores, const std::vector<ScoredSample>& scored) {
  PathResult r;
  r.scores = std::move(scores);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < r.scores.size(); ++i) {
    r.predictions.push_back(argmax(r.scores[i]));
    if (r.predictions.back() == scored[i].gold) ++correct;
  }
  r.accuracy = r.scores.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(r.scores.size());
  return r;
}

}  // namespace

PathResult ot_only_path(const std::vector<ScoredSample>& scored) {
  std::vector<Vector> scores;
  for (const auto& s : scored) scores.push_back(s.ot);
  return finish(std::move(scores), scored);
}

PathResult calibration_only_path(const std::vector<ScoredSample>& scored, double beta) {
  std::vector<Vector> scores;
  for (const auto& s : scored) {
    Vector v = s.cal;
    for (double& x : v) x = beta * x;
    scores.push_back(std::move(v));
  }
  return finish(std::move(scores), scored);
}

PathResult fused_path(const std::vector<ScoredSample>& scored, const JointConfig& joint,
                      std::size_t shots, Ablation ablate) {
  if (ablate == Ablation::kNoCalibration) return ot_only_path(scored);
  std::vector<Vector> scores;
  for (const auto& s : scored) {
    if (ablate == Ablation::kNoOt) {
      const Vector zeros(s.ot.size(), 0.0);
      scores.push_back(fuse(zeros, s.cal, joint, shots).fused);
    } else {
      scores.push_back(fuse(s.ot, s.cal, joint, shots).fused);
    }
  }
  return finish(std::move(scores), scored);
}

EvalReport cmd_eval(const RunConfig& cfg) {
  cfg.validate(RunConfig::Role::kEval);
  const FeaturePack pack = read_pack(cfg.eval_pack);
  const VerbalizerSpec verbalizer = resolve_run_verbalizer(cfg, pack);
  const std::size_t shots = training_shots(cfg, pack);

  EvalReport report;
  report.beta = cfg.joint.effective_beta(shots);
  std::vector<double> sel, fused, ot, cal;
  json seeds = json::array();
  for (std::uint64_t seed : cfg.seeds) {
    const Checkpoint ck = load_checkpoint(checkpoint_path(cfg, seed), pack.hidden_dim, pack.num_classes());
    const auto scored = score_pack(ck.params, pack, verbalizer, ck.config.sinkhorn, cfg.eval_plan);
    SeedEvaluation ev;
    ev.seed = seed;
    ev.selected = fused_path(scored, cfg.joint, shots, cfg.ablate);
    ev.fused_accuracy = fused_path(scored, cfg.joint, shots, Ablation::kNone).accuracy;
    ev.ot_only_accuracy = ot_only_path(scored).accuracy;
    ev.cal_only_accuracy = calibration_only_path(scored, report.beta).accuracy;
    sel.push_back(ev.selected.accuracy);
    fused.push_back(ev.fused_accuracy);
    ot.push_back(ev.ot_only_accuracy);
    cal.push_back(ev.cal_only_accuracy);

    std::vector<std::size_t> gold;
    for (const auto& s : scored) gold.push_back(s.gold);
    const Evaluation counts = evaluate(ev.selected.predictions, gold, pack.num_classes());
    seeds.push_back({{"seed", seed},
                     {"accuracy", ev.selected.accuracy},
                     {"confusion", counts.confusion},
                     {"ablation",
                      {{"fused", ev.fused_accuracy},
                       {"ot_only", ev.ot_only_accuracy},
                       {"cal_only", ev.cal_only_accuracy}}},
                     {"predictions", ev.selected.predictions},
                     {"scores", ev.selected.scores}});
    report.seeds.push_back(std::move(ev));
  }
  report.selected = summarize_seeds(sel);
  report.fused = summarize_seeds(fused);
  report.ot_only = summarize_seeds(ot);
  report.cal_only = summarize_seeds(cal);
  report.document = {{"command", "eval"},
                     {"dataset", pack.manifest.dataset},
                     {"config", cfg},
                     {"shots", shots},
                     {"beta", report.beta},
                     {"summary",
                      {{"accuracy", summary_json(report.selected)},
                       {"fused", summary_json(report.fused)},
                       {"ot_only", summary_json(report.ot_only)},
                       {"cal_only", summary_json(report.cal_only)}}},
                     {"seeds", seeds}};
  if (!cfg.report_dir.empty()) {
    ensure_dir(cfg.report_dir);
    write_json_file(fs::path(cfg.report_dir) / "eval.json", report.document);
    std::ofstream txt(fs::path(cfg.report_dir) / "eval.txt");
    txt << "dataset " << pack.manifest.dataset << "  plan " << to_string(cfg.eval_plan) << "  ablate "
        << to_string(cfg.ablate) << "  beta " << fmt_num(report.beta) << "\n"
        << "variant      mean     std\n"
        << "selected   " << fmt_num(report.selected.mean) << "  " << fmt_num(report.selected.stddev) << "\n"
        << "fused      " << fmt_num(report.fused.mean) << "  " << fmt_num(report.fused.stddev) << "\n"
        << "ot-only    " << fmt_num(report.ot_only.mean) << "  " << fmt_num(report.ot_only.stddev) << "\n"
        << "cal-only   " << fmt_num(report.cal_only.mean) << "  " << fmt_num(report.cal_only.stddev) << "\n";
  }
  return report;
}

SweepAxis parse_sweep_axis(std::string_view name) {
  if (name == "beta") return SweepAxis::kBeta;
  if (name == "Q" || name == "q") return SweepAxis::kPrototypes;
  if (name == "P" || name == "p") return SweepAxis::kPrompts;
  if (name == "prompt-subset") return SweepAxis::kPromptSubset;
  throw ConfigError("unknown sweep axis '" + std::string(name) + "'");
}

std::string_view to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::kBeta: return "beta";
    case SweepAxis::kPrototypes: return "Q";
    case SweepAxis::kPrompts: return "P";
    case SweepAxis::kPromptSubset: return "prompt-subset";
  }
  return "?";
}

std::vector<SweepRow> cmd_sweep(const RunConfig& cfg, SweepAxis axis, const std::vector<std::string>& values) {
  cfg.validate(RunConfig::Role::kSweep);
  const FeaturePack train_pack = read_pack(cfg.train_pack);
  const FeaturePack eval_pack = read_pack(cfg.eval_pack);
  const VerbalizerSpec verbalizer = resolve_run_verbalizer(cfg, eval_pack);
  const std::size_t shots = train_pack.manifest.shots;
  const std::size_t p = train_pack.num_prompts();
  if (eval_pack.num_prompts() != p) throw DataError("train and eval packs disagree on P");

  std::vector<SweepRow> rows;
  auto add_row = [&](std::string label, const std::vector<TripleAccuracy>& per_seed) {
    std::vector<double> f, o, c;
    for (const auto& a : per_seed) {
      f.push_back(a.fused);
      o.push_back(a.ot_only);
      c.push_back(a.cal_only);
    }
    rows.push_back({std::move(label), summarize_seeds(f), summarize_seeds(o), summarize_seeds(c)});
  };

  if (axis == SweepAxis::kBeta) {
    std::vector<std::string> labels = values;
    if (labels.empty()) labels = {"0", "0.25", "1/K", "1", "4"};
    std::vector<double> betas;
    for (const auto& l : labels) {
      betas.push_back(l == "1/K" ? 1.0 / static_cast<double>(shots) : parse_numbers({l}).front());
    }
    std::vector<std::vector<ScoredSample>> scored;
    for (std::uint64_t seed : cfg.seeds) {
      const Checkpoint ck =
          load_checkpoint(checkpoint_path(cfg, seed), eval_pack.hidden_dim, eval_pack.num_classes());
      scored.push_back(score_pack(ck.params, eval_pack, verbalizer, ck.config.sinkhorn, cfg.eval_plan));
    }
    for (std::size_t i = 0; i < betas.size(); ++i) {
      JointConfig joint{betas[i], BetaRule::kFixed};
      std::vector<TripleAccuracy> per_seed;
      for (const auto& s : scored) {
        per_seed.push_back({fused_path(s, joint, shots, Ablation::kNone).accuracy, ot_only_path(s).accuracy,
                            calibration_only_path(s, betas[i]).accuracy});
      }
      add_row(labels[i], per_seed);
    }
  } else if (axis == SweepAxis::kPrototypes) {
    std::vector<std::string> labels = values;
    if (labels.empty()) labels = {"1", "2", "3", "4", "5"};
    for (const auto& l : labels) {
      const double q = parse_numbers({l}).front();
      if (q < 1 || q != std::floor(q)) throw ConfigError("Q sweep value '" + l + "' must be a positive integer");
      TrainConfig tcfg = cfg.train;
      tcfg.num_prototypes = static_cast<std::size_t>(q);
      std::vector<TripleAccuracy> per_seed;
      for (std::uint64_t seed : cfg.seeds)
        per_seed.push_back(train_and_score(cfg, tcfg, seed, train_pack, eval_pack, verbalizer));
      add_row(l, per_seed);
    }
  } else {
    std::vector<std::vector<std::size_t>> subsets;
    if (!values.empty()) {
      for (const auto& v : values) {
        if (axis == SweepAxis::kPrompts) {
          const double n = parse_numbers({v}).front();
          if (n < 1 || n > static_cast<double>(p) || n != std::floor(n)) {
            throw ConfigError("P sweep value '" + v + "' must be in 1.." + std::to_string(p));
          }
          std::vector<std::size_t> s(static_cast<std::size_t>(n));
          for (std::size_t j = 0; j < s.size(); ++j) s[j] = j;
          subsets.push_back(s);
        } else {
          subsets.push_back(parse_subset(v, p));
        }
      }
    } else if (axis == SweepAxis::kPrompts) {
      for (std::size_t n = 1; n <= p; ++n) {
        std::vector<std::size_t> s(n);
        for (std::size_t j = 0; j < n; ++j) s[j] = j;
        subsets.push_back(s);
      }
    } else {
      if (p > 12) throw ConfigError("prompt-subset sweep over more than 12 prompts needs explicit values");
      for (std::size_t mask = 1; mask < (std::size_t{1} << p); ++mask) {
        std::vector<std::size_t> s;
        for (std::size_t j = 0; j < p; ++j)
          if (mask & (std::size_t{1} << j)) s.push_back(j);
        subsets.push_back(s);
      }
    }
    for (const auto& subset : subsets) {
      const FeaturePack tr = select_prompts(train_pack, subset);
      const FeaturePack ev = select_prompts(eval_pack, subset);
      std::vector<TripleAccuracy> per_seed;
      for (std::uint64_t seed : cfg.seeds)
        per_seed.push_back(train_and_score(cfg, cfg.train, seed, tr, ev, verbalizer));
      add_row(axis == SweepAxis::kPrompts ? std::to_string(subset.size()) : subset_label(subset), per_seed);
    }
  }

  if (!cfg.report_dir.empty()) {
    ensure_dir(cfg.report_dir);
    json table = json::array();
    for (const auto& r : rows) {
      table.push_back({{"value", r.value},
                       {"fused", summary_json(r.fused)},
                       {"ot_only", summary_json(r.ot_only)},
                       {"cal_only", summary_json(r.cal_only)}});
    }
    write_json_file(fs::path(cfg.report_dir) / ("sweep-" + std::string(to_string(axis)) + ".json"),
                    {{"command", "sweep"}, {"axis", to_string(axis)}, {"config", cfg}, {"rows", table}});
  }
  return rows;
}

std::string format_sweep_table(SweepAxis axis, const std::vector<SweepRow>& rows) {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof line, "%-14s %8s %8s %8s %8s\n", std::string(to_string(axis)).c_str(), "fused",
                "std", "ot-only", "cal-only");
  out << line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%-14s %8.4f %8.4f %8.4f %8.4f\n", r.value.c_str(), r.fused.mean,
                  r.fused.stddev, r.ot_only.mean, r.cal_only.mean);
    out << line;
  }
  return out.str();
}

}  // namespace mpd
