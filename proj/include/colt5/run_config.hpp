// Copyright 2026 The colt5 Authors
// SPDX-License-Identifier: Apache-2.0
//
// Run configuration shared by the command-line driver: a model section, a
// task section, an optional FLOPs-query section, and training-loop
// bookkeeping. Parsing is strict — unknown keys are errors — so a typo in a
// config file fails loudly instead of silently training the wrong model.

#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "colt5/costmodel.hpp"
#include "colt5/errors.hpp"
#include "colt5/model.hpp"
#include "colt5/tasks.hpp"

namespace colt5 {

inline nlohmann::json cost_query_to_json(const CostQuery& q) {
  nlohmann::json j;
  j["kind"] = to_string(q.kind);
  j["n"] = q.n;
  j["d"] = q.d;
  j["w"] = q.w;
  if (q.m) j["m"] = q.m->str();
  if (q.q) j["q"] = q.q->str();
  if (q.v) j["v"] = q.v->str();
  j["ffn_light_ratio"] = q.ffn_light_ratio.str();
  j["ffn_heavy_ratio"] = q.ffn_heavy_ratio.str();
  j["attn_light_ratio"] = q.attn_light_ratio.str();
  j["attn_heavy_ratio"] = q.attn_heavy_ratio.str();
  return j;
}

inline CostQuery cost_query_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ParseError("flops query: expected a JSON object");
  CostQuery q;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "kind") q.kind = model_kind_from_string(value.get<std::string>());
      else if (key == "n") q.n = value.get<std::int64_t>();
      else if (key == "d") q.d = value.get<std::int64_t>();
      else if (key == "w") q.w = value.get<std::int64_t>();
      else if (key == "m") q.m = Rational::parse(value.get<std::string>());
      else if (key == "q") q.q = Rational::parse(value.get<std::string>());
      else if (key == "v") q.v = Rational::parse(value.get<std::string>());
      else if (key == "ffn_light_ratio") q.ffn_light_ratio = Rational::parse(value.get<std::string>());
      else if (key == "ffn_heavy_ratio") q.ffn_heavy_ratio = Rational::parse(value.get<std::string>());
      else if (key == "attn_light_ratio") q.attn_light_ratio = Rational::parse(value.get<std::string>());
      else if (key == "attn_heavy_ratio") q.attn_heavy_ratio = Rational::parse(value.get<std::string>());
      else throw ParseError("flops query: unknown key '" + key + "'");
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("flops query: bad value for '" + key + "': " + e.what());
    } catch (const ContractError& e) {  // model_kind_from_string
      throw ParseError(std::string("flops query: ") + e.what());
    }
  }
  return q;
}

/// Everything one experiment needs. `seed` is the master seed: the driver
/// derives independent streams from it for model init, data generation, and
/// batch shuffling, so two runs with equal configs are bit-identical.
struct RunConfig {
  ModelConfig model;
  TaskSpec task;
  CostQuery flops;
  std::size_t steps = 200;
  std::size_t batch_size = 8;
  std::size_t train_examples = 256;
  std::size_t eval_examples = 64;
  std::uint64_t seed = 1;

  void validate() const {
    model.validate();
    task.validate();
    if (batch_size == 0) throw ContractError("run config: batch_size must be positive");
    if (train_examples == 0) throw ContractError("run config: train_examples must be positive");
    if (model.vocab_size < task.vocab_size) {
      throw ContractError("run config: model vocab_size " + std::to_string(model.vocab_size) +
                          " is smaller than task vocab_size " + std::to_string(task.vocab_size));
    }
  }
};

inline nlohmann::json run_config_to_json(const RunConfig& c) {
  nlohmann::json j;
  j["model"] = model_config_to_json(c.model);
  j["task"] = task_spec_to_json(c.task);
  j["flops"] = cost_query_to_json(c.flops);
  j["steps"] = c.steps;
  j["batch_size"] = c.batch_size;
  j["train_examples"] = c.train_examples;
  j["eval_examples"] = c.eval_examples;
  j["seed"] = c.seed;
  return j;
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ParseError("run config: expected a JSON object");
  RunConfig c;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "model") c.model = model_config_from_json(value);
      else if (key == "task") c.task = task_spec_from_json(value);
      else if (key == "flops") c.flops = cost_query_from_json(value);
      else if (key == "steps") c.steps = value.get<std::size_t>();
      else if (key == "batch_size") c.batch_size = value.get<std::size_t>();
      else if (key == "train_examples") c.train_examples = value.get<std::size_t>();
      else if (key == "eval_examples") c.eval_examples = value.get<std::size_t>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else throw ParseError("run config: unknown key '" + key + "'");
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("run config: bad value for '" + key + "': " + e.what());
    }
  }
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw PathError("cannot open '" + path + "' for reading");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": invalid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

inline void save_run_config(const RunConfig& c, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw PathError("cannot open '" + path + "' for writing");
  out << run_config_to_json(c).dump(2) << '\n';
  if (!out) throw PathError("write to '" + path + "' failed");
}

}  // namespace colt5
