// Copyright 2026 The colt5 Authors
// SPDX-License-Identifier: Apache-2.0
//
// End-to-end tests of the command-line driver: each case spawns the real
// binary (path injected by the build) and inspects its files, exit codes,
// and stderr. The driving invariant is reproducibility — identical
// invocations must produce byte-identical artifacts.

#include <sys/wait.h>

#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "colt5/analysis.hpp"
#include "colt5/costmodel.hpp"
#include "colt5/run_config.hpp"

using namespace colt5;
namespace fs = std::filesystem;

namespace {

struct RunResult {
  int exit_code = -1;
  std::string out, err;
};

std::string slurp_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

/// Scratch directory shared by all cases in this file; wiped once at load.
const fs::path& work_dir() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "colt5_cli_tests";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

RunResult run_cli(const std::string& argv_tail) {
  static int counter = 0;
  const fs::path out_file = work_dir() / ("stdout." + std::to_string(counter));
  const fs::path err_file = work_dir() / ("stderr." + std::to_string(counter));
  ++counter;
  const std::string cmd = std::string(COLT5_CLI_PATH) + " " + argv_tail + " > " +
                          out_file.string() + " 2> " + err_file.string();
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp_text(out_file);
  r.err = slurp_text(err_file);
  return r;
}

/// Small-but-real run configuration: two encoder layers over length-64
/// key-value inputs, sized so a training run takes about a second.
const fs::path& base_config() {
  static const fs::path path = [] {
    RunConfig cfg;
    cfg.model.num_layers = 2;
    cfg.model.decoder_layers = 1;
    cfg.model.d = 32;
    cfg.model.vocab_size = 64;
    cfg.model.ffn_base_hidden = 64;
    cfg.model.heads_total = 4;
    cfg.model.heads_light = 1;
    cfg.model.heads_heavy = 3;
    cfg.model.head_dim = 8;
    cfg.model.window_radius = 8;
    cfg.model.m_fraction = Rational(1, 8);
    cfg.model.rel_bias_buckets = 8;
    cfg.model.rel_bias_max_distance = 32;
    cfg.task.task = TaskKind::kKvRetrieval;
    cfg.task.n = 64;
    cfg.task.vocab_size = 64;
    cfg.task.num_pairs = 4;
    cfg.task.span_len = 2;
    cfg.task.seed = 7;
    cfg.flops.n = 16384;
    cfg.flops.d = 768;
    cfg.steps = 6;
    cfg.batch_size = 4;
    cfg.train_examples = 32;
    cfg.eval_examples = 8;
    cfg.seed = 3;
    fs::path p = work_dir() / "base_config.json";
    save_run_config(cfg, p.string());
    return p;
  }();
  return path;
}

std::size_t count_lines(const fs::path& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    if (!line.empty()) ++n;
  }
  return n;
}

}  // namespace

TEST_CASE("cli gen-data writes deterministic datasets", "[cli]") {
  const fs::path a = work_dir() / "data_a", b = work_dir() / "data_b";
  REQUIRE(run_cli("gen-data --config " + base_config().string() + " --out " + a.string())
              .exit_code == 0);
  REQUIRE(run_cli("gen-data --config " + base_config().string() + " --out " + b.string())
              .exit_code == 0);
  CHECK(slurp_text(a / "train.jsonl") == slurp_text(b / "train.jsonl"));
  CHECK(slurp_text(a / "eval.jsonl") == slurp_text(b / "eval.jsonl"));
  CHECK(count_lines(a / "train.jsonl") == 32);
  CHECK(count_lines(a / "eval.jsonl") == 8);

  const nlohmann::json meta = nlohmann::json::parse(slurp_text(a / "dataset.json"));
  CHECK(meta.at("train_examples") == 32);
  CHECK(meta.at("eval_first_index") == 32);
  CHECK(task_spec_from_json(meta.at("task")).n == 64);

  // Examples on disk match direct library generation, including the held-out
  // index offset for the eval split.
  const RunConfig cfg = load_run_config(base_config().string());
  const std::vector<SynthExample> eval_set = read_jsonl((a / "eval.jsonl").string());
  REQUIRE(eval_set.size() == 8);
  const SynthExample want = gen_example(cfg.task, 32);
  CHECK(eval_set[0].input == want.input);
  CHECK(eval_set[0].target == want.target);
  CHECK(eval_set[0].labels == want.labels);
}

TEST_CASE("cli flops matches the library cost model", "[cli]") {
  const fs::path out = work_dir() / "flops.json";
  const RunResult r = run_cli("flops --kind longt5 --n 16384 --d 768 --json --out " + out.string());
  REQUIRE(r.exit_code == 0);

  CostQuery query;
  query.kind = ModelKind::LongT5;
  query.n = 16384;
  query.d = 768;
  const nlohmann::json want = cost_report_json(flops_layer(query));
  CHECK(nlohmann::json::parse(r.out) == want);
  CHECK(nlohmann::json::parse(slurp_text(out)) == want);

  // Text mode goes to stdout and carries the family name and the total.
  const RunResult text = run_cli("flops --kind t5 --n 16384 --d 768");
  REQUIRE(text.exit_code == 0);
  CHECK(text.out.find("model: t5") != std::string::npos);
  CHECK(text.out.find("total") != std::string::npos);

  // The config file's flops section supplies defaults for omitted flags.
  const RunResult from_cfg = run_cli("flops --config " + base_config().string() + " --json");
  REQUIRE(from_cfg.exit_code == 0);
  CHECK(nlohmann::json::parse(from_cfg.out).at("model_kind") == "colt5");
  CHECK(nlohmann::json::parse(from_cfg.out).at("n") == 16384);
}

TEST_CASE("cli train/eval/analyze pipeline produces consistent artifacts", "[cli][pipeline]") {
  const fs::path run = work_dir() / "run";
  const fs::path eval_dir = work_dir() / "eval";
  const fs::path analysis = work_dir() / "analysis";

  REQUIRE(run_cli("train --config " + base_config().string() + " --out " + run.string())
              .exit_code == 0);
  REQUIRE(fs::exists(run / "checkpoint.bin"));

  // metrics.jsonl: one record per step whose default timestamp is a logical
  // clock (examples processed), not wall time.
  std::ifstream metrics(run / "metrics.jsonl");
  std::string line;
  std::size_t steps = 0;
  double first_loss = 0.0, last_loss = 0.0;
  while (std::getline(metrics, line)) {
    const nlohmann::json rec = nlohmann::json::parse(line);
    ++steps;
    CHECK(rec.at("step") == steps);
    CHECK(rec.at("timestamp") == steps * 4);
    last_loss = rec.at("loss").get<double>();
    if (steps == 1) first_loss = last_loss;
  }
  CHECK(steps == 6);
  CHECK(first_loss > 0.0);
  CHECK(last_loss < first_loss);  // six steps is enough to move off init

  // --wall-clock swaps in real time (and is excluded from replay identity).
  const fs::path wall = work_dir() / "run_wall";
  REQUIRE(run_cli("train --config " + base_config().string() + " --steps 2 --wall-clock --out " +
                  wall.string())
              .exit_code == 0);
  std::ifstream wall_metrics(wall / "metrics.jsonl");
  REQUIRE(std::getline(wall_metrics, line));
  CHECK(nlohmann::json::parse(line).at("timestamp").get<std::uint64_t>() > 1700000000ULL);

  // The resolved config is strict-parseable and records the derived seed.
  const RunConfig resolved = load_run_config((run / "config.json").string());
  CHECK(resolved.seed == 3);
  CHECK(resolved.model.seed != 0);

  const RunResult ev = run_cli("eval --config " + base_config().string() + " --checkpoint " +
                               (run / "checkpoint.bin").string() + " --out " + eval_dir.string());
  REQUIRE(ev.exit_code == 0);
  const nlohmann::json report = nlohmann::json::parse(slurp_text(eval_dir / "eval.json"));
  CHECK(report.at("examples") == 8);
  CHECK(report.at("exact_match").get<double>() >= 0.0);
  CHECK(report.at("exact_match").get<double>() <= 1.0);
  CHECK(report.at("token_accuracy").get<double>() >= 0.0);
  CHECK(report.at("token_accuracy").get<double>() <= 1.0);
  CHECK(report.at("mean_loss").get<double>() > 0.0);
  CHECK(count_lines(eval_dir / "traces.jsonl") == 8);

  REQUIRE(run_cli("analyze --traces " + (eval_dir / "traces.jsonl").string() + " --out " +
                  analysis.string())
              .exit_code == 0);
  for (const char* name :
       {"proportions.json", "proportions.csv", "correlations.json", "correlations.csv",
        "heat.html"}) {
    INFO(name);
    CHECK(fs::exists(analysis / name));
  }
  CHECK(slurp_text(analysis / "proportions.csv").rfind("layer,router,question,answer,other", 0) ==
        0);
  const nlohmann::json corr = nlohmann::json::parse(slurp_text(analysis / "correlations.json"));
  CHECK(corr.at("layers").size() == 2);

  // The heat map self-parses back to one weight row per token, one entry
  // per rendered layer (both encoder layers by default).
  const auto heat = parse_token_heat(slurp_text(analysis / "heat.html"));
  REQUIRE(heat.size() == 64);
  CHECK(heat[0].size() == 2);

  // Evaluating the same checkpoint twice is byte-identical.
  const fs::path eval2 = work_dir() / "eval2";
  REQUIRE(run_cli("eval --config " + base_config().string() + " --checkpoint " +
                  (run / "checkpoint.bin").string() + " --out " + eval2.string())
              .exit_code == 0);
  CHECK(slurp_text(eval_dir / "eval.json") == slurp_text(eval2 / "eval.json"));
  CHECK(slurp_text(eval_dir / "traces.jsonl") == slurp_text(eval2 / "traces.jsonl"));

  // Training from an exported dataset file matches in-memory generation.
  const fs::path data_dir = work_dir() / "data_for_train";
  REQUIRE(run_cli("gen-data --config " + base_config().string() + " --out " + data_dir.string())
              .exit_code == 0);
  const fs::path run_from_file = work_dir() / "run_from_file";
  REQUIRE(run_cli("train --config " + base_config().string() + " --data " +
                  (data_dir / "train.jsonl").string() + " --out " + run_from_file.string())
              .exit_code == 0);
  CHECK(slurp_text(run / "checkpoint.bin") == slurp_text(run_from_file / "checkpoint.bin"));
}

TEST_CASE("cli training replays byte-identically across runs and thread counts", "[cli]") {
  const fs::path a = work_dir() / "replay_a", b = work_dir() / "replay_b",
                 c = work_dir() / "replay_c";
  const std::string base =
      "train --config " + base_config().string() + " --steps 4 --out ";
  REQUIRE(run_cli(base + a.string()).exit_code == 0);
  REQUIRE(run_cli(base + b.string()).exit_code == 0);
  REQUIRE(run_cli(base + c.string() + " --threads 3").exit_code == 0);
  CHECK(slurp_text(a / "checkpoint.bin") == slurp_text(b / "checkpoint.bin"));
  CHECK(slurp_text(a / "metrics.jsonl") == slurp_text(b / "metrics.jsonl"));
  CHECK(slurp_text(a / "checkpoint.bin") == slurp_text(c / "checkpoint.bin"));
  CHECK(slurp_text(a / "metrics.jsonl") == slurp_text(c / "metrics.jsonl"));

  // A different master seed changes the model but not the dataset.
  const fs::path d = work_dir() / "replay_d";
  REQUIRE(run_cli(base + d.string() + " --seed 99").exit_code == 0);
  CHECK(slurp_text(a / "checkpoint.bin") != slurp_text(d / "checkpoint.bin"));
  const RunConfig cfg_a = load_run_config((a / "config.json").string());
  const RunConfig cfg_d = load_run_config((d / "config.json").string());
  CHECK(cfg_a.model.seed != cfg_d.model.seed);
}

TEST_CASE("cli ablation overrides are accepted and recorded", "[cli]") {
  struct Case {
    const char* flag;
    const char* dir;
  };
  const Case cases[] = {{"--routing static", "abl_static"},
                        {"--attn v=q", "abl_vq"},
                        {"--attn v=all", "abl_vall"},
                        {"--cross mha", "abl_mha"}};
  for (const Case& c : cases) {
    INFO(c.flag);
    const fs::path out = work_dir() / c.dir;
    REQUIRE(run_cli("train --config " + base_config().string() + " --steps 2 " + c.flag +
                    " --out " + out.string())
                .exit_code == 0);
    const RunConfig resolved = load_run_config((out / "config.json").string());
    if (std::string(c.flag) == "--routing static") {
      CHECK(resolved.model.routing == RoutingStrategy::kStatic);
    } else if (std::string(c.flag) == "--attn v=q") {
      CHECK(resolved.model.attn_override == AttnOverride::kVEqualsQ);
    } else if (std::string(c.flag) == "--attn v=all") {
      CHECK(resolved.model.attn_override == AttnOverride::kVAll);
    } else {
      CHECK(resolved.model.cross_attention == CrossAttnKind::kMultiHead);
    }
  }

  // Routing/attention overrides also apply at evaluation time (same shapes).
  const fs::path run = work_dir() / "abl_eval_base";
  REQUIRE(run_cli("train --config " + base_config().string() + " --steps 2 --out " + run.string())
              .exit_code == 0);
  const fs::path ev = work_dir() / "abl_eval_static";
  REQUIRE(run_cli("eval --config " + base_config().string() + " --checkpoint " +
                  (run / "checkpoint.bin").string() + " --routing static --attn v=q --out " +
                  ev.string())
              .exit_code == 0);
  CHECK(fs::exists(ev / "eval.json"));
}

TEST_CASE("cli reports machine-readable errors with typed exit codes", "[cli][errors]") {
  // Unknown config key: parse error, exit 2.
  const fs::path bad = work_dir() / "bad_config.json";
  std::ofstream(bad) << "{\"model\": {\"bogus_key\": 3}}";
  RunResult r = run_cli("train --config " + bad.string() + " --out " + (work_dir() / "x").string());
  CHECK(r.exit_code == 2);
  nlohmann::json err = nlohmann::json::parse(r.err);
  CHECK(err.at("error").at("type") == "parse");
  CHECK(err.at("error").at("message").get<std::string>().find("bogus_key") != std::string::npos);

  // Missing files: path error, exit 3.
  r = run_cli("train --config missing.json --out " + (work_dir() / "x").string());
  CHECK(r.exit_code == 3);
  CHECK(nlohmann::json::parse(r.err).at("error").at("type") == "path");
  r = run_cli("analyze --traces missing.jsonl --out " + (work_dir() / "x").string());
  CHECK(r.exit_code == 3);

  // Malformed trace file: parse error with file:line context, exit 2.
  const fs::path traces = work_dir() / "bad_traces.jsonl";
  std::ofstream(traces) << "{\"n\": 4}\n";
  r = run_cli("analyze --traces " + traces.string() + " --out " + (work_dir() / "x").string());
  CHECK(r.exit_code == 2);
  CHECK(nlohmann::json::parse(r.err).at("error").at("message").get<std::string>().find(":1:") !=
        std::string::npos);

  // Contract violations (valid JSON, impossible request): exit 4.
  const fs::path tiny = work_dir() / "tiny_batch.json";
  RunConfig cfg = load_run_config(base_config().string());
  cfg.batch_size = 64;  // larger than train_examples = 32
  cfg.train_examples = 32;
  save_run_config(cfg, tiny.string());
  r = run_cli("train --config " + tiny.string() + " --out " + (work_dir() / "x").string());
  CHECK(r.exit_code == 4);
  CHECK(nlohmann::json::parse(r.err).at("error").at("type") == "contract");

  // Unknown enum value for an override flag.
  r = run_cli("train --config " + base_config().string() + " --routing sometimes --out " +
              (work_dir() / "x").string());
  CHECK(r.exit_code == 2);
}
