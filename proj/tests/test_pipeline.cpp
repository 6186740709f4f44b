#include <doctest.h>

#include <fstream>

#include "mpd/errors.hpp"
#include "mpd/pipeline.hpp"
#include "mpd/tensor_io.hpp"
#include "testkit.hpp"

namespace fs = std::filesystem;
using mpd::Ablation;
using mpd::RunConfig;

namespace {

struct Workspace {
  testkit::ScratchDir dir;
  RunConfig cfg;

  Workspace() {
    testkit::TaskShape shape;
    shape.held_out_per_class = 20;
    const auto task = testkit::gaussian_task(shape, 101);
    mpd::write_pack(dir / "train", testkit::make_pack(task.train.samples, 2, 4, "train", 1));
    mpd::write_pack(dir / "eval", testkit::make_pack(task.held_out, 2, 4, "test", 2));
    cfg.train_pack = dir / "train";
    cfg.eval_pack = dir / "eval";
    cfg.checkpoint_dir = dir / "ck";
    cfg.report_dir = dir / "reports";
    cfg.seeds = {13, 21};
    cfg.train.d_out = 16;
    cfg.train.epochs = 10;
  }
};

}  // namespace

TEST_CASE("ablation names") {
  CHECK(mpd::parse_ablation("no-cal") == Ablation::kNoCalibration);
  CHECK(mpd::parse_ablation("no-ot") == Ablation::kNoOt);
  CHECK(mpd::to_string(Ablation::kNone) == "none");
  CHECK_THROWS_AS(mpd::parse_ablation("no-everything"), mpd::ConfigError);
}

TEST_CASE("run config json resolves paths against the file") {
  testkit::ScratchDir dir;
  fs::create_directories(dir.path() / "cfg");
  std::ofstream(dir.path() / "cfg" / "run.json") << R"({
    "train_pack": "../packs/train", "eval_pack": "/abs/eval", "checkpoint_dir": "ck",
    "seeds": [1, 2], "train": {"Q": 4, "epochs": 3},
    "joint": {"beta": 0.5, "beta_rule": "fixed"},
    "eval": {"plan": "uniform", "ablate": "no-ot"}})";
  const RunConfig cfg = mpd::load_run_config(dir.path() / "cfg" / "run.json");
  CHECK(cfg.train_pack == (dir.path() / "packs" / "train").string());
  CHECK(cfg.eval_pack == "/abs/eval");
  CHECK(cfg.checkpoint_dir == (dir.path() / "cfg" / "ck").string());
  CHECK(cfg.seeds == std::vector<std::uint64_t>{1, 2});
  CHECK(cfg.train.num_prototypes == 4);
  CHECK(cfg.joint.rule == mpd::BetaRule::kFixed);
  CHECK(cfg.eval_plan == mpd::PlanKind::kUniform);
  CHECK(cfg.ablate == Ablation::kNoOt);
  CHECK(mpd::checkpoint_path(cfg, 7) == (fs::path(cfg.checkpoint_dir) / "seed-7").string());

  const RunConfig again = mpd::run_config_from_json(nlohmann::json(cfg));
  CHECK(nlohmann::json(again) == nlohmann::json(cfg));

  std::ofstream(dir.path() / "bad.json") << R"({"seeds": "many"})";
  CHECK_THROWS_AS(mpd::load_run_config(dir.path() / "bad.json"), mpd::ConfigError);
  CHECK_THROWS_AS(mpd::load_run_config(dir.path() / "missing.json"), mpd::ConfigError);
}

TEST_CASE("train then eval with every ablation") {
  Workspace ws;
  const auto runs = mpd::cmd_train(ws.cfg);
  REQUIRE(runs.size() == 2);
  for (const auto& r : runs) {
    CHECK(fs::exists(fs::path(r.checkpoint) / "checkpoint.json"));
    CHECK(r.train_accuracy == 1.0);
  }
  const auto train_doc = mpd::read_json_file(fs::path(ws.cfg.report_dir) / "train.json");
  CHECK(train_doc.at("config").at("train").at("epochs") == 10);

  const auto full = mpd::cmd_eval(ws.cfg);
  CHECK(full.beta == 0.25);
  CHECK(full.selected.count == 2);
  CHECK(full.fused.mean == full.selected.mean);
  CHECK(fs::exists(fs::path(ws.cfg.report_dir) / "eval.txt"));
  const auto doc = mpd::read_json_file(fs::path(ws.cfg.report_dir) / "eval.json");
  CHECK(doc.at("seeds").size() == 2);
  CHECK(doc.at("seeds")[0].at("predictions").size() == 40);
  CHECK(doc.at("config").at("eval").at("ablate") == "none");

  // Independent recomputation of each path from the stored checkpoints.
  const auto pack = mpd::read_pack(ws.cfg.eval_pack);
  const auto verbalizer = mpd::resolve_run_verbalizer(ws.cfg, pack);
  for (std::size_t i = 0; i < ws.cfg.seeds.size(); ++i) {
    const auto ck = mpd::load_checkpoint(mpd::checkpoint_path(ws.cfg, ws.cfg.seeds[i]));
    const auto scored = mpd::score_pack(ck.params, pack, verbalizer, ck.config.sinkhorn, mpd::PlanKind::kSinkhorn);

    RunConfig zero_beta = ws.cfg;
    zero_beta.joint = {0.0, mpd::BetaRule::kFixed};
    const auto ot_path = mpd::ot_only_path(scored);
    CHECK(mpd::cmd_eval(zero_beta).seeds[i].selected.scores == ot_path.scores);

    RunConfig no_cal = ws.cfg;
    no_cal.ablate = Ablation::kNoCalibration;
    CHECK(mpd::cmd_eval(no_cal).seeds[i].selected.scores == ot_path.scores);

    RunConfig no_ot = ws.cfg;
    no_ot.ablate = Ablation::kNoOt;
    CHECK(mpd::cmd_eval(no_ot).seeds[i].selected.scores == mpd::calibration_only_path(scored, 0.25).scores);
  }
}

TEST_CASE("checkpoints are byte-identical across reruns") {
  Workspace ws;
  ws.cfg.seeds = {5};
  mpd::cmd_train(ws.cfg);
  const fs::path ck = mpd::checkpoint_path(ws.cfg, 5);
  const auto w1 = testkit::read_bytes(ck / "projector.f32");
  const auto r1 = testkit::read_bytes(ck / "prototypes.f32");
  const auto m1 = testkit::read_bytes(ck / "checkpoint.json");
  mpd::cmd_train(ws.cfg);
  CHECK(testkit::read_bytes(ck / "projector.f32") == w1);
  CHECK(testkit::read_bytes(ck / "prototypes.f32") == r1);
  CHECK(testkit::read_bytes(ck / "checkpoint.json") == m1);
}

TEST_CASE("beta sweep reuses checkpoints and its zero row is the no-cal result") {
  Workspace ws;
  mpd::cmd_train(ws.cfg);
  const auto rows = mpd::cmd_sweep(ws.cfg, mpd::SweepAxis::kBeta);
  REQUIRE(rows.size() == 5);
  CHECK(rows[0].value == "0");
  CHECK(rows[2].value == "1/K");

  RunConfig no_cal = ws.cfg;
  no_cal.ablate = Ablation::kNoCalibration;
  const auto report = mpd::cmd_eval(no_cal);
  CHECK(rows[0].fused.mean == report.selected.mean);
  CHECK(rows[0].fused.stddev == report.selected.stddev);

  RunConfig default_beta = ws.cfg;
  CHECK(rows[2].fused.mean == mpd::cmd_eval(default_beta).fused.mean);
  CHECK(fs::exists(fs::path(ws.cfg.report_dir) / "sweep-beta.json"));
  CHECK(mpd::format_sweep_table(mpd::SweepAxis::kBeta, rows).find("1/K") != std::string::npos);
}

TEST_CASE("prototype and prompt sweeps retrain in memory") {
  Workspace ws;
  ws.cfg.seeds = {13};
  ws.cfg.train.epochs = 3;
  const auto q_rows = mpd::cmd_sweep(ws.cfg, mpd::SweepAxis::kPrototypes, {"1", "2"});
  CHECK(q_rows.size() == 2);
  const auto p_rows = mpd::cmd_sweep(ws.cfg, mpd::SweepAxis::kPrompts);
  CHECK(p_rows.size() == 3);
  CHECK(p_rows[0].value == "1");
  const auto s_rows = mpd::cmd_sweep(ws.cfg, mpd::SweepAxis::kPromptSubset);
  CHECK(s_rows.size() == 7);
  CHECK_THROWS_AS(mpd::cmd_sweep(ws.cfg, mpd::SweepAxis::kPrototypes, {"1.5"}), mpd::ConfigError);
  CHECK_THROWS_AS(mpd::cmd_sweep(ws.cfg, mpd::SweepAxis::kPrompts, {"4"}), mpd::ConfigError);
  CHECK_THROWS_AS(mpd::parse_sweep_axis("lr"), mpd::ConfigError);
}

TEST_CASE("configuration and data errors surface with their codes") {
  Workspace ws;
  RunConfig missing = ws.cfg;
  missing.train_pack = ws.dir / "nope";
  CHECK_THROWS_AS(mpd::cmd_train(missing), mpd::ConfigError);

  RunConfig wrong_p = ws.cfg;
  wrong_p.train.num_prompts = 2;
  CHECK_THROWS_AS(mpd::cmd_train(wrong_p), mpd::ConfigError);

  RunConfig eval_as_train = ws.cfg;
  eval_as_train.train_pack = ws.cfg.eval_pack;
  CHECK_THROWS_AS(mpd::cmd_train(eval_as_train), mpd::DataError);

  // No checkpoints yet.
  CHECK_THROWS_AS(mpd::cmd_eval(ws.cfg), mpd::DataError);

  mpd::VerbalizerSpec spec;
  spec.expand = false;
  spec.classes = {{"a", {"other0"}, {}}, {"b", {"word1"}, {}}};
  mpd::save_verbalizer(ws.dir / "v.json", spec);
  RunConfig bad_axis = ws.cfg;
  bad_axis.verbalizer = ws.dir / "v.json";
  const auto pack = mpd::read_pack(ws.cfg.eval_pack);
  CHECK_THROWS_AS(mpd::resolve_run_verbalizer(bad_axis, pack), mpd::DataError);
}

TEST_CASE("expand writes a frozen verbalizer") {
  testkit::ScratchDir dir;
  mpd::save_embedding_table(dir / "table",
                            mpd::EmbeddingTable({"bad", "poor", "good", "great"},
                                                mpd::Matrix{{1, 0}, {0.9, 0.2}, {-1, 0}, {-0.9, 0.1}}));
  mpd::VerbalizerSpec spec;
  spec.classes = {{"negative", {"bad"}, {}}, {"positive", {"good"}, {}}};
  mpd::save_verbalizer(dir / "seed.json", spec);
  const auto out = mpd::cmd_expand(dir / "table", dir / "seed.json", dir / "frozen.json", 2);
  CHECK(out.axis_tokens() == std::vector<std::string>{"bad", "poor", "good", "great"});
  CHECK(mpd::load_verbalizer(dir / "frozen.json").frozen());
}

TEST_CASE("validate reports instead of throwing") {
  testkit::ScratchDir dir;
  testkit::TaskShape shape;
  const auto task = testkit::gaussian_task(shape, 3);
  auto pack = testkit::make_pack(task.train.samples, 2, 4, "train", 3);
  pack.records.pop_back();
  mpd::write_pack(dir / "p", pack);
  const auto report = mpd::cmd_validate(dir / "p");
  CHECK_FALSE(report.ok());
  const auto doc = mpd::pack_report_json(report);
  CHECK(doc.at("ok") == false);
  CHECK(doc.at("class_counts") == std::vector<std::size_t>{4, 3});
}
