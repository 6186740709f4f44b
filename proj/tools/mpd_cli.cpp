// mpd: command-line entry point for the multi-prompt decoder.
//
//   mpd expand   --table DIR --verbalizer FILE --out FILE [--k N]
//   mpd validate PACK
//   mpd train    [--config FILE] [overrides]
//   mpd eval     [--config FILE] [overrides] [--beta B] [--beta-rule R] [--plan P] [--ablate A]
//   mpd sweep    [--config FILE] [overrides] --axis {beta|Q|P|prompt-subset} [--values v1,v2]
//
// Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric divergence,
// 5 transport error.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mpd/config.hpp"
#include "mpd/errors.hpp"
#include "mpd/pipeline.hpp"

namespace {

struct Overrides {
  std::string config;
  std::optional<std::string> train_pack, eval_pack, checkpoint_dir, report_dir, verbalizer;
  std::optional<std::vector<std::uint64_t>> seeds;
  std::optional<std::size_t> epochs, q, p, d_out;
  std::optional<double> lr, lambda;
  std::optional<std::string> train_plan;
};

struct EvalOverrides {
  std::optional<double> beta;
  std::optional<std::string> beta_rule, plan, ablate;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("-c,--config", o.config, "run configuration (JSON)");
  cmd->add_option("--train-pack", o.train_pack, "training feature pack directory");
  cmd->add_option("--eval-pack", o.eval_pack, "evaluation feature pack directory");
  cmd->add_option("--checkpoint-dir", o.checkpoint_dir, "directory holding seed-<n> checkpoints");
  cmd->add_option("--report-dir", o.report_dir, "directory for JSON/text reports");
  cmd->add_option("--verbalizer", o.verbalizer, "frozen verbalizer document");
  cmd->add_option("--seeds", o.seeds, "seed list")->delimiter(',');
  cmd->add_option("--epochs", o.epochs, "training epochs");
  cmd->add_option("--prototypes,-Q", o.q, "prototypes per class");
  cmd->add_option("--prompts,-P", o.p, "prompts per sample (must match the packs)");
  cmd->add_option("--d-out", o.d_out, "projected dimension");
  cmd->add_option("--lr", o.lr, "Adam learning rate");
  cmd->add_option("--lambda", o.lambda, "Sinkhorn entropic regularizer");
  cmd->add_option("--train-plan", o.train_plan, "transport plan used in training: sinkhorn|uniform|cosine");
}

void add_eval(CLI::App* cmd, EvalOverrides& e) {
  cmd->add_option("--beta", e.beta, "weight of calibrated class scores");
  cmd->add_option("--beta-rule", e.beta_rule, "fixed|inverse_shots");
  cmd->add_option("--plan", e.plan, "transport plan at evaluation: sinkhorn|uniform|cosine");
  cmd->add_option("--ablate", e.ablate, "none|no-cal|no-ot");
}

mpd::RunConfig resolve(const Overrides& o, const EvalOverrides* e) {
  mpd::RunConfig cfg = o.config.empty() ? mpd::RunConfig{} : mpd::load_run_config(o.config);
  if (o.train_pack) cfg.train_pack = *o.train_pack;
  if (o.eval_pack) cfg.eval_pack = *o.eval_pack;
  if (o.checkpoint_dir) cfg.checkpoint_dir = *o.checkpoint_dir;
  if (o.report_dir) cfg.report_dir = *o.report_dir;
  if (o.verbalizer) cfg.verbalizer = *o.verbalizer;
  if (o.seeds) cfg.seeds = *o.seeds;
  if (o.epochs) cfg.train.epochs = *o.epochs;
  if (o.q) cfg.train.num_prototypes = *o.q;
  if (o.p) cfg.train.num_prompts = *o.p;
  if (o.d_out) cfg.train.d_out = *o.d_out;
  if (o.lr) cfg.train.adam.lr = *o.lr;
  if (o.lambda) cfg.train.sinkhorn.lambda = *o.lambda;
  if (o.train_plan) cfg.train.plan = mpd::parse_plan_kind(*o.train_plan);
  if (e) {
    if (e->beta) {
      cfg.joint.beta = *e->beta;
      if (!e->beta_rule) cfg.joint.rule = mpd::BetaRule::kFixed;
    }
    if (e->beta_rule) cfg.joint.rule = mpd::parse_beta_rule(*e->beta_rule);
    if (e->plan) cfg.eval_plan = mpd::parse_plan_kind(*e->plan);
    if (e->ablate) cfg.ablate = mpd::parse_ablation(*e->ablate);
  }
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-prompt decoder for black-box text encoders"};
  app.require_subcommand(1);

  std::string table_dir, verbalizer_in, verbalizer_out;
  std::optional<std::size_t> expand_k;
  auto* expand = app.add_subcommand("expand", "expand label words from an embedding table");
  expand->add_option("--table", table_dir, "embedding table directory")->required();
  expand->add_option("--verbalizer", verbalizer_in, "verbalizer document with seed words")->required();
  expand->add_option("--out", verbalizer_out, "output path for the frozen verbalizer")->required();
  expand->add_option("--k", expand_k, "expanded words per class");

  std::string pack_path;
  auto* validate = app.add_subcommand("validate", "check a feature pack");
  validate->add_option("pack", pack_path, "feature pack directory")->required();

  Overrides train_o;
  auto* train = app.add_subcommand("train", "train one decoder per seed");
  add_common(train, train_o);

  Overrides eval_o;
  EvalOverrides eval_e;
  auto* eval = app.add_subcommand("eval", "evaluate trained decoders");
  add_common(eval, eval_o);
  add_eval(eval, eval_e);

  Overrides sweep_o;
  EvalOverrides sweep_e;
  std::string axis;
  std::vector<std::string> values;
  auto* sweep = app.add_subcommand("sweep", "sweep one hyperparameter");
  add_common(sweep, sweep_o);
  add_eval(sweep, sweep_e);
  sweep->add_option("--axis", axis, "beta|Q|P|prompt-subset")->required();
  sweep->add_option("--values", values, "axis values")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(mpd::ExitCode::kConfig);
  }

  try {
    if (*expand) {
      const auto spec = mpd::cmd_expand(table_dir, verbalizer_in, verbalizer_out, expand_k);
      for (const auto& c : spec.classes) {
        std::cout << c.name << ":";
        for (const auto& w : c.words) std::cout << " " << w.token << "(" << w.weight << ")";
        std::cout << "\n";
      }
      std::cout << "wrote " << verbalizer_out << "\n";
    } else if (*validate) {
      const auto report = mpd::cmd_validate(pack_path);
      std::cout << mpd::pack_report_json(report).dump(2) << "\n";
      if (!report.ok()) return static_cast<int>(mpd::ExitCode::kData);
    } else if (*train) {
      const mpd::RunConfig cfg = resolve(train_o, nullptr);
      const auto runs = mpd::cmd_train(cfg);
      for (const auto& r : runs) {
        std::cout << "seed " << r.seed;
        if (!r.loss_trace.empty()) std::cout << "  loss " << r.loss_trace.front() << " -> " << r.loss_trace.back();
        std::cout << "  train acc "
                  << r.train_accuracy << "  -> " << r.checkpoint << "\n";
      }
    } else if (*eval) {
      const mpd::RunConfig cfg = resolve(eval_o, &eval_e);
      const auto report = mpd::cmd_eval(cfg);
      std::cout << "accuracy " << report.selected.mean << " +- " << report.selected.stddev << " over "
                << report.selected.count << " seeds (ablate " << mpd::to_string(cfg.ablate) << ", beta "
                << report.beta << ")\n"
                << "  fused " << report.fused.mean << "  ot-only " << report.ot_only.mean << "  cal-only "
                << report.cal_only.mean << "\n";
    } else if (*sweep) {
      const mpd::RunConfig cfg = resolve(sweep_o, &sweep_e);
      const auto a = mpd::parse_sweep_axis(axis);
      std::cout << mpd::format_sweep_table(a, mpd::cmd_sweep(cfg, a, values));
    }
  } catch (const mpd::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.code());
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(mpd::ExitCode::kData);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(mpd::ExitCode::kData);
  }
  return 0;
}
