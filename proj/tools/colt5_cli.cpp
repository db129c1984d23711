// Copyright 2026 The colt5 Authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line driver: dataset export, training, evaluation, analytic FLOPs
// reports, and routing-trace analysis. Every run is a pure function of its
// configuration and seed — outputs contain no wall-clock timestamps, so a
// repeated run is byte-identical (metrics use the count of examples
// processed as a logical clock instead).
//
// Machine-readable failures: library errors are reported on stderr as one
// JSON object {"error":{"type":...,"message":...}} with the exit code mapped
// from the error type (2 = malformed input, 3 = missing/unwritable path,
// 4 = any other library error).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "colt5/analysis.hpp"
#include "colt5/costmodel.hpp"
#include "colt5/model.hpp"
#include "colt5/run_config.hpp"
#include "colt5/tasks.hpp"

namespace {

using colt5::AdamW;
using colt5::CostQuery;
using colt5::Example;
using colt5::Model;
using colt5::RoutingTrace;
using colt5::RunConfig;
using colt5::SynthExample;
using colt5::TaskSpec;

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> steps;
  std::optional<std::size_t> batch_size;
  std::optional<std::string> routing;
  std::optional<std::string> attn;
  std::optional<std::string> cross;
  std::optional<std::size_t> threads;
  std::string data_path;        // optional JSONL dataset to use instead of generating
  std::string checkpoint_path;  // eval only
};

std::filesystem::path ensure_out_dir(const std::string& dir) {
  std::filesystem::path p(dir);
  std::error_code ec;
  std::filesystem::create_directories(p, ec);
  if (ec) throw colt5::PathError("cannot create output directory '" + dir + "': " + ec.message());
  return p;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw colt5::PathError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw colt5::PathError("write to '" + path.string() + "' failed");
}

std::size_t resolve_threads(const std::optional<std::size_t>& flag) {
  if (flag) return std::max<std::size_t>(1, *flag);
  if (const char* env = std::getenv("COLT_NUM_THREADS")) {
    try {
      std::size_t pos = 0;
      const unsigned long v = std::stoul(env, &pos);
      if (pos != std::string(env).size() || v == 0) throw std::invalid_argument("");
      return v;
    } catch (const std::exception&) {
      throw colt5::ParseError(std::string("COLT_NUM_THREADS: '") + env +
                              "' is not a positive integer");
    }
  }
  return 1;
}

/// Applies command-line overrides to the model section. Cross-attention kind
/// changes parameter shapes, so `allow_cross` is false wherever a trained
/// checkpoint has to stay loadable.
void apply_overrides(colt5::ModelConfig& mc, const CommonArgs& args, bool allow_cross) {
  if (args.routing) mc.routing = colt5::routing_strategy_from_string(*args.routing);
  if (args.attn) mc.attn_override = colt5::attn_override_from_string(*args.attn);
  if (args.cross) {
    if (!allow_cross) {
      throw colt5::ContractError(
          "--cross changes parameter shapes and can only be set at training time");
    }
    mc.cross_attention = colt5::cross_attn_from_string(*args.cross);
  }
}

RunConfig load_config(const CommonArgs& args) {
  if (args.config_path.empty()) throw colt5::ContractError("--config is required");
  RunConfig cfg = colt5::load_run_config(args.config_path);
  if (args.seed) cfg.seed = *args.seed;
  if (args.steps) cfg.steps = *args.steps;
  if (args.batch_size) cfg.batch_size = *args.batch_size;
  cfg.validate();
  return cfg;
}

std::vector<SynthExample> load_or_generate(const RunConfig& cfg, const std::string& data_path,
                                           std::uint64_t first_index, std::size_t count) {
  if (!data_path.empty()) return colt5::read_jsonl(data_path);
  std::vector<SynthExample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(colt5::gen_example(cfg.task, first_index + i));
  return out;
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

int cmd_gen_data(const CommonArgs& args) {
  RunConfig cfg = load_config(args);
  const auto out = ensure_out_dir(args.out_dir);
  colt5::write_jsonl(load_or_generate(cfg, "", 0, cfg.train_examples), (out / "train.jsonl").string());
  colt5::write_jsonl(load_or_generate(cfg, "", cfg.train_examples, cfg.eval_examples),
                     (out / "eval.jsonl").string());
  nlohmann::json meta;
  meta["task"] = colt5::task_spec_to_json(cfg.task);
  meta["train_examples"] = cfg.train_examples;
  meta["eval_examples"] = cfg.eval_examples;
  meta["eval_first_index"] = cfg.train_examples;
  write_text(out / "dataset.json", meta.dump(2) + "\n");
  std::cout << "wrote " << cfg.train_examples << " train / " << cfg.eval_examples
            << " eval examples to " << out.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

int cmd_train(const CommonArgs& args, bool wall_clock) {
  RunConfig cfg = load_config(args);
  apply_overrides(cfg.model, args, /*allow_cross=*/true);
  cfg.validate();
  const auto out = ensure_out_dir(args.out_dir);
  const std::size_t threads = resolve_threads(args.threads);

  // Independent deterministic streams: "init" seeds the parameters,
  // "shuffle" orders the batches. The dataset itself is a pure function of
  // the task section, so changing --seed re-initializes the model without
  // touching the data.
  colt5::SeedSplitter split(cfg.seed);
  colt5::ModelConfig mc = cfg.model;
  mc.seed = split.stream("init").next_u64();
  Model model = Model::init(mc);

  std::vector<SynthExample> data = load_or_generate(cfg, args.data_path, 0, cfg.train_examples);
  if (data.empty()) throw colt5::ContractError("train: empty dataset");
  if (cfg.batch_size > data.size()) {
    throw colt5::ContractError("train: batch_size " + std::to_string(cfg.batch_size) +
                               " exceeds dataset size " + std::to_string(data.size()));
  }

  AdamW optimizer;
  colt5::Rng shuffle_rng = split.stream("shuffle");
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t pos = order.size();  // force a shuffle before the first batch

  std::ofstream metrics(out / "metrics.jsonl", std::ios::trunc);
  if (!metrics) throw colt5::PathError("cannot open metrics.jsonl for writing");

  const std::size_t report_every = std::max<std::size_t>(1, cfg.steps / 10);
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    if (pos + cfg.batch_size > order.size()) {
      shuffle_rng.shuffle(order);
      pos = 0;
    }
    std::vector<Example> batch;
    batch.reserve(cfg.batch_size);
    for (std::size_t b = 0; b < cfg.batch_size; ++b, ++pos) {
      batch.push_back({data[order[pos]].input, data[order[pos]].target});
    }
    const double loss = colt5::train_step(model, batch, optimizer, nullptr, threads);
    // Default timestamp is a logical clock (examples processed) so that
    // same-seed runs stay byte-identical; --wall-clock opts into real time
    // and out of that guarantee.
    const std::uint64_t stamp =
        wall_clock ? static_cast<std::uint64_t>(std::chrono::duration_cast<std::chrono::seconds>(
                                                    std::chrono::system_clock::now().time_since_epoch())
                                                    .count())
                   : step * cfg.batch_size;
    metrics << nlohmann::json{{"step", step}, {"loss", loss}, {"timestamp", stamp}}.dump() << '\n';
    if (step % report_every == 0 || step == cfg.steps) {
      std::cout << "step " << step << "/" << cfg.steps << "  loss " << loss << "\n";
    }
  }
  if (!metrics) throw colt5::PathError("write to metrics.jsonl failed");

  // Persist the fully resolved configuration (incl. the derived model seed)
  // next to the weights so the run can be reproduced from the directory.
  RunConfig resolved = cfg;
  resolved.model = mc;
  colt5::save_run_config(resolved, (out / "config.json").string());
  colt5::save_checkpoint(model, (out / "checkpoint.bin").string(), cfg.steps, &optimizer);
  std::cout << "checkpoint: " << (out / "checkpoint.bin").string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

int cmd_eval(const CommonArgs& args) {
  RunConfig cfg = load_config(args);
  if (args.checkpoint_path.empty()) throw colt5::ContractError("--checkpoint is required");
  const auto out = ensure_out_dir(args.out_dir);

  colt5::LoadedCheckpoint loaded = colt5::load_checkpoint(args.checkpoint_path);
  Model& model = loaded.model;
  apply_overrides(model.config, args, /*allow_cross=*/false);

  std::vector<SynthExample> data =
      load_or_generate(cfg, args.data_path, cfg.train_examples, cfg.eval_examples);
  if (data.empty()) throw colt5::ContractError("eval: empty dataset");

  std::vector<RoutingTrace> traces;
  std::vector<std::vector<int>> labels, tokens;
  double loss_sum = 0.0;
  std::size_t exact = 0, token_hits = 0, token_total = 0;
  for (const SynthExample& ex : data) {
    auto [states, trace] = colt5::encode(model, ex.input, /*training=*/false);

    // Teacher-forced token accuracy over the target positions.
    std::vector<int> dec_in;
    dec_in.push_back(static_cast<int>(model.config.pad_id));
    dec_in.insert(dec_in.end(), ex.target.begin(), ex.target.end() - 1);
    colt5::Tensor logits = colt5::decode_logits(model, states, dec_in);
    const std::size_t vocab = model.config.vocab_size;
    double nll = 0.0;
    for (std::size_t t = 0; t < ex.target.size(); ++t) {
      const double* row = logits.data().data() + t * vocab;
      std::size_t best = 0;
      double max_logit = row[0];
      for (std::size_t v = 1; v < vocab; ++v) {
        if (row[v] > row[best]) best = v;
        max_logit = std::max(max_logit, row[v]);
      }
      token_hits += static_cast<int>(best) == ex.target[t] ? 1 : 0;
      ++token_total;
      double denom = 0.0;
      for (std::size_t v = 0; v < vocab; ++v) denom += std::exp(row[v] - max_logit);
      nll += max_logit + std::log(denom) - row[static_cast<std::size_t>(ex.target[t])];
    }
    loss_sum += nll / static_cast<double>(ex.target.size());

    std::vector<int> greedy = colt5::decode_greedy(model, states, ex.target.size() + 4);
    exact += greedy == ex.target ? 1 : 0;

    traces.push_back(std::move(trace));
    labels.push_back(ex.labels);
    tokens.push_back(ex.input);
  }

  nlohmann::json report;
  report["examples"] = data.size();
  report["exact_match"] = static_cast<double>(exact) / static_cast<double>(data.size());
  report["token_accuracy"] = static_cast<double>(token_hits) / static_cast<double>(token_total);
  report["mean_loss"] = loss_sum / static_cast<double>(data.size());
  write_text(out / "eval.json", report.dump(2) + "\n");
  colt5::write_traces(traces, labels, (out / "traces.jsonl").string(), tokens);
  std::cout << report.dump() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// flops
// ---------------------------------------------------------------------------

int cmd_flops(const CommonArgs& args, const std::optional<std::string>& kind,
              const std::optional<std::int64_t>& n, const std::optional<std::int64_t>& d,
              const std::optional<std::int64_t>& w, bool as_json, const std::string& out_file) {
  CostQuery query;
  if (!args.config_path.empty()) query = colt5::load_run_config(args.config_path).flops;
  if (kind) query.kind = colt5::model_kind_from_string(*kind);
  if (n) query.n = *n;
  if (d) query.d = *d;
  if (w) query.w = *w;
  const colt5::CostReport report = colt5::flops_layer(query);
  const nlohmann::json j = colt5::cost_report_json(report);
  if (!out_file.empty()) write_text(out_file, j.dump(2) + "\n");
  if (as_json) {
    std::cout << j.dump(2) << "\n";
  } else {
    std::cout << colt5::cost_report_text(report);
  }
  return 0;
}

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------

int cmd_analyze(const std::string& traces_path, const std::string& out_dir,
                const std::vector<std::size_t>& layer_ids, const std::string& router) {
  const auto out = ensure_out_dir(out_dir);
  std::vector<colt5::TraceRecord> records = colt5::read_traces(traces_path);
  if (records.empty()) throw colt5::ContractError("analyze: no trace records in " + traces_path);

  std::vector<RoutingTrace> traces;
  std::vector<std::vector<int>> labels;
  for (auto& rec : records) {
    traces.push_back(std::move(rec.trace));
    labels.push_back(std::move(rec.labels));
  }

  const colt5::ProportionReport props = colt5::routed_proportion(traces, labels, /*per_layer=*/true);
  write_text(out / "proportions.json", colt5::proportion_report_json(props).dump(2) + "\n");
  write_text(out / "proportions.csv", colt5::proportion_report_csv(props));

  const colt5::CorrelationReport corr = colt5::router_correlation(traces);
  write_text(out / "correlations.json", colt5::correlation_report_json(corr).dump(2) + "\n");
  write_text(out / "correlations.csv", colt5::correlation_report_csv(corr));

  // Token heat map for the first record that carries its token ids.
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].tokens.empty()) continue;
    std::vector<std::size_t> ids = layer_ids;
    if (ids.empty()) {
      for (std::size_t l = 0; l < std::min<std::size_t>(3, traces[i].layers.size()); ++l) {
        ids.push_back(l);
      }
    }
    write_text(out / "heat.html", colt5::render_token_heat(traces[i], records[i].tokens, ids, router));
    break;
  }
  std::cout << "analysis written to " << out.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"colt5: conditional-computation transformer workbench"};
  app.require_subcommand(1);

  CommonArgs args;
  std::optional<std::string> flops_kind;
  std::optional<std::int64_t> flops_n, flops_d, flops_w;
  bool flops_json = false;
  std::string flops_out;
  std::string traces_path;
  std::vector<std::size_t> heat_layers;
  std::string heat_router = "ffn";

  auto add_common = [&](CLI::App* sub, bool needs_out) {
    sub->add_option("--config", args.config_path, "run configuration JSON");
    if (needs_out) sub->add_option("--out", args.out_dir, "output directory")->required();
  };
  auto add_model_overrides = [&](CLI::App* sub, bool with_cross) {
    sub->add_option("--routing", args.routing, "router override: learned|static");
    sub->add_option("--attn", args.attn, "attention override: default|v=q|v=all");
    if (with_cross) sub->add_option("--cross", args.cross, "cross-attention kind: mqa|mha");
  };

  CLI::App* gen = app.add_subcommand("gen-data", "write train/eval JSONL datasets");
  add_common(gen, true);

  CLI::App* train = app.add_subcommand("train", "train a model from scratch");
  add_common(train, true);
  bool wall_clock = false;
  train->add_option("--seed", args.seed, "master seed override");
  train->add_option("--steps", args.steps, "optimizer steps override");
  train->add_option("--batch", args.batch_size, "batch size override");
  train->add_option("--threads", args.threads, "worker threads (default $COLT_NUM_THREADS or 1)");
  train->add_option("--data", args.data_path, "train on this JSONL file instead of generating");
  train->add_flag("--wall-clock", wall_clock,
                  "real metric timestamps (forfeits byte-identical replay)");
  add_model_overrides(train, true);

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval, true);
  eval->add_option("--checkpoint", args.checkpoint_path, "checkpoint to load")->required();
  eval->add_option("--data", args.data_path, "evaluate on this JSONL file instead of generating");
  add_model_overrides(eval, false);

  CLI::App* flops = app.add_subcommand("flops", "analytic per-layer FLOPs report");
  add_common(flops, false);
  flops->add_option("--kind", flops_kind, "model family: t5|longt5|colt5");
  flops->add_option("--n", flops_n, "sequence length");
  flops->add_option("--d", flops_d, "model width");
  flops->add_option("--w", flops_w, "local attention window width");
  flops->add_flag("--json", flops_json, "print the JSON report instead of text");
  flops->add_option("--out", flops_out, "also write the JSON report to this file");

  CLI::App* analyze = app.add_subcommand("analyze", "summarize routing traces");
  analyze->add_option("--traces", traces_path, "traces.jsonl from eval")->required();
  analyze->add_option("--out", args.out_dir, "output directory")->required();
  analyze->add_option("--layers", heat_layers, "layer ids for the token heat map (up to 3)");
  analyze->add_option("--router", heat_router, "router for the heat map: ffn|query|kv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (gen->parsed()) return cmd_gen_data(args);
    if (train->parsed()) return cmd_train(args, wall_clock);
    if (eval->parsed()) return cmd_eval(args);
    if (flops->parsed()) {
      return cmd_flops(args, flops_kind, flops_n, flops_d, flops_w, flops_json, flops_out);
    }
    if (analyze->parsed()) return cmd_analyze(traces_path, args.out_dir, heat_layers, heat_router);
  } catch (const colt5::Error& e) {
    std::cerr << nlohmann::json{{"error", {{"type", e.code()}, {"message", e.what()}}}}.dump()
              << "\n";
    const std::string code = e.code();
    if (code == "parse" || code == "format") return 2;
    if (code == "path") return 3;
    return 4;
  }
  return 0;
}
