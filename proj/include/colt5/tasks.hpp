// Copyright 2026 The colt5 Authors
// SPDX-License-Identifier: Apache-2.0
//
// Seeded synthetic long-input tasks. Both generators label every input token
// as question (the cue describing what to produce), answer (the tokens the
// target copies), or other, so routing behavior over token categories is
// directly measurable.

#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "colt5/errors.hpp"
#include "colt5/rng.hpp"

namespace colt5 {

enum class TaskKind { kCopySpan, kKvRetrieval };

inline std::string to_string(TaskKind t) {
  return t == TaskKind::kCopySpan ? "copy_span" : "kv_retrieval";
}
inline TaskKind task_kind_from_string(const std::string& s) {
  if (s == "copy_span") return TaskKind::kCopySpan;
  if (s == "kv_retrieval") return TaskKind::kKvRetrieval;
  throw ParseError("unknown task '" + s + "' (want copy_span|kv_retrieval)");
}

// Category labels, in the order they are serialized (0, 1, 2).
enum class TokenCategory : int { kQuestion = 0, kAnswer = 1, kOther = 2 };

struct SynthExample {
  std::vector<int> input;
  std::vector<int> target;  // ends with the eos id
  std::vector<int> labels;  // one TokenCategory value per input token
};

// Reserved token ids shared with the model: 0 pad, 1 eos. Ids 2 and 3 are the
// task markers (query/span-start and pair/span-end); payload ids start at 4.
constexpr int kPadToken = 0;
constexpr int kEosToken = 1;
constexpr int kMarkerA = 2;
constexpr int kMarkerB = 3;
constexpr int kFirstPayloadToken = 4;

struct TaskSpec {
  TaskKind task = TaskKind::kKvRetrieval;
  std::size_t n = 512;
  std::size_t vocab_size = 64;
  std::size_t num_pairs = 8;
  std::size_t span_len = 2;
  std::uint64_t seed = 0;

  void validate() const {
    if (span_len < 1) throw ContractError("task spec: span_len must be >= 1");
    if (vocab_size < kFirstPayloadToken + 3) {
      throw ContractError("task spec: vocab must hold reserved ids plus payload tokens");
    }
    if (task == TaskKind::kKvRetrieval) {
      // Query section (marker + key) plus all pairs must fit.
      const std::size_t used = 2 + num_pairs * (1 + span_len);
      if (num_pairs < 1) throw ContractError("task spec: kv_retrieval needs num_pairs >= 1");
      if (used > n) {
        throw ContractError("task spec: " + std::to_string(num_pairs) + " pairs of width " +
                            std::to_string(1 + span_len) + " plus the query need " +
                            std::to_string(used) + " tokens, n = " + std::to_string(n));
      }
      if (num_pairs > key_space()) {
        throw ContractError("task spec: " + std::to_string(num_pairs) +
                            " distinct keys exceed the key alphabet of " +
                            std::to_string(key_space()));
      }
    } else {
      if (span_len + 2 > n) {
        throw ContractError("task spec: span of " + std::to_string(span_len) +
                            " plus two markers does not fit in n = " + std::to_string(n));
      }
    }
  }

  // kv_retrieval partitions the payload alphabet into thirds — keys, values,
  // filler — so filler can never collide with an active key or value.
  std::size_t payload() const { return vocab_size - kFirstPayloadToken; }
  std::size_t key_space() const { return payload() / 3; }
  int key_token(std::size_t i) const { return kFirstPayloadToken + static_cast<int>(i); }
  int value_token(std::size_t i) const {
    return kFirstPayloadToken + static_cast<int>(key_space() + i);
  }
  int filler_token(std::size_t i) const {
    return kFirstPayloadToken + static_cast<int>(2 * key_space() + i);
  }
  std::size_t filler_space() const { return payload() - 2 * key_space(); }
};

inline nlohmann::json task_spec_to_json(const TaskSpec& s) {
  return nlohmann::json{{"task", to_string(s.task)}, {"n", s.n},
                        {"vocab_size", s.vocab_size}, {"num_pairs", s.num_pairs},
                        {"span_len", s.span_len},     {"seed", s.seed}};
}

inline TaskSpec task_spec_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ParseError("task spec: expected a JSON object");
  TaskSpec s;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "task") s.task = task_kind_from_string(value.get<std::string>());
      else if (key == "n") s.n = value.get<std::size_t>();
      else if (key == "vocab_size") s.vocab_size = value.get<std::size_t>();
      else if (key == "num_pairs") s.num_pairs = value.get<std::size_t>();
      else if (key == "span_len") s.span_len = value.get<std::size_t>();
      else if (key == "seed") s.seed = value.get<std::uint64_t>();
      else throw ParseError("task spec: unknown key '" + key + "'");
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("task spec: bad value for '" + key + "': " + e.what());
    }
  }
  return s;
}

namespace detail {

/// Sample `k` distinct indices from [0, space) — Fisher-Yates over a dense
/// index pool, deterministic in the Rng state.
inline std::vector<std::size_t> sample_distinct(Rng& rng, std::size_t space, std::size_t k) {
  std::vector<std::size_t> pool(space);
  for (std::size_t i = 0; i < space; ++i) pool[i] = i;
  for (std::size_t i = 0; i < k; ++i) {
    const auto j = i + static_cast<std::size_t>(
                           rng.uniform_int(0, static_cast<std::int64_t>(space - i) - 1));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  return pool;
}

}  // namespace detail

/// input = [query-marker, key] + the [key v1..v_span] pairs in shuffled order
/// + random filler tail. target = the queried key's value tokens + eos.
/// Labels: the two query tokens are question, the matching value tokens are
/// answer, all else other. The pair region grows with num_pairs, so specs can
/// push most pairs well past any local-attention horizon while keeping the
/// layout deterministic in the seed.
inline SynthExample gen_kv_retrieval(const TaskSpec& spec, std::uint64_t index) {
  spec.validate();
  if (spec.task != TaskKind::kKvRetrieval) {
    throw ContractError("gen_kv_retrieval called with a " + to_string(spec.task) + " spec");
  }
  SeedSplitter seeds(spec.seed);
  Rng rng = seeds.stream("example." + std::to_string(index));

  // sample_distinct yields the keys in a random permutation, so laying pairs
  // down in pool order already shuffles them.
  std::vector<std::size_t> keys = detail::sample_distinct(rng, spec.key_space(), spec.num_pairs);
  std::vector<std::vector<int>> values(spec.num_pairs);
  for (auto& v : values) {
    v.resize(spec.span_len);
    for (auto& t : v) {
      t = spec.value_token(static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<std::int64_t>(spec.key_space()) - 1)));
    }
  }
  const auto queried =
      static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(spec.num_pairs) - 1));

  SynthExample ex;
  ex.labels.assign(spec.n, static_cast<int>(TokenCategory::kOther));
  ex.input.assign(spec.n, 0);
  ex.input[0] = kMarkerA;
  ex.input[1] = spec.key_token(keys[queried]);
  ex.labels[0] = ex.labels[1] = static_cast<int>(TokenCategory::kQuestion);
  std::size_t at = 2;
  for (std::size_t p = 0; p < spec.num_pairs; ++p) {
    ex.input[at++] = spec.key_token(keys[p]);
    for (std::size_t j = 0; j < spec.span_len; ++j) {
      if (p == queried) ex.labels[at] = static_cast<int>(TokenCategory::kAnswer);
      ex.input[at++] = values[p][j];
    }
  }
  for (; at < spec.n; ++at) {
    ex.input[at] = spec.filler_token(static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(spec.filler_space()) - 1)));
  }
  ex.target = values[queried];
  ex.target.push_back(kEosToken);
  return ex;
}

/// Brute-force lookup: scan for the queried key beyond the question prefix
/// and read off the following value tokens. Sound because the key, value,
/// and filler alphabets are disjoint and keys are distinct within an
/// example. Proves the task is solvable from the input alone.
inline std::vector<int> kv_lookup_oracle(const std::vector<int>& input, const TaskSpec& spec) {
  if (input.size() != spec.n || input.size() < 2 || input[0] != kMarkerA) {
    throw ContractError("kv oracle: input is not a kv_retrieval example");
  }
  const int key = input[1];
  for (std::size_t at = 2; at + spec.span_len < input.size(); ++at) {
    if (input[at] == key) {
      std::vector<int> out(input.begin() + static_cast<std::ptrdiff_t>(at + 1),
                           input.begin() + static_cast<std::ptrdiff_t>(at + 1 + spec.span_len));
      out.push_back(kEosToken);
      return out;
    }
  }
  throw ContractError("kv oracle: queried key not found among the pairs");
}

/// Filler with one marked span: [filler..., marker-A, s1..s_span, marker-B,
/// filler...]. target = the span + eos; markers are question, span answer.
inline SynthExample gen_copy_span(const TaskSpec& spec, std::uint64_t index) {
  spec.validate();
  if (spec.task != TaskKind::kCopySpan) {
    throw ContractError("gen_copy_span called with a " + to_string(spec.task) + " spec");
  }
  SeedSplitter seeds(spec.seed);
  Rng rng = seeds.stream("example." + std::to_string(index));

  auto payload_token = [&]() {
    return kFirstPayloadToken + static_cast<int>(rng.uniform_int(
               0, static_cast<std::int64_t>(spec.payload()) - 1));
  };
  SynthExample ex;
  ex.input.resize(spec.n);
  ex.labels.assign(spec.n, static_cast<int>(TokenCategory::kOther));
  for (auto& t : ex.input) t = payload_token();
  const std::size_t start = static_cast<std::size_t>(
      rng.uniform_int(0, static_cast<std::int64_t>(spec.n - spec.span_len - 2)));
  ex.input[start] = kMarkerA;
  ex.labels[start] = static_cast<int>(TokenCategory::kQuestion);
  for (std::size_t j = 0; j < spec.span_len; ++j) {
    ex.labels[start + 1 + j] = static_cast<int>(TokenCategory::kAnswer);
    ex.target.push_back(ex.input[start + 1 + j]);
  }
  ex.input[start + 1 + spec.span_len] = kMarkerB;
  ex.labels[start + 1 + spec.span_len] = static_cast<int>(TokenCategory::kQuestion);
  ex.target.push_back(kEosToken);
  return ex;
}

/// Generates example `index` of the spec's deterministic stream.
inline SynthExample gen_example(const TaskSpec& spec, std::uint64_t index) {
  return spec.task == TaskKind::kKvRetrieval ? gen_kv_retrieval(spec, index)
                                             : gen_copy_span(spec, index);
}

inline std::vector<SynthExample> gen_dataset(const TaskSpec& spec, std::size_t count) {
  std::vector<SynthExample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(gen_example(spec, i));
  return out;
}

// ---------------------------------------------------------------------------
// Line-delimited JSON dataset files
// ---------------------------------------------------------------------------

inline void write_jsonl(const std::vector<SynthExample>& examples, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw PathError("cannot open '" + path + "' for writing");
  for (const auto& ex : examples) {
    out << nlohmann::json{{"input", ex.input}, {"target", ex.target}, {"labels", ex.labels}}
               .dump()
        << '\n';
  }
  if (!out) throw PathError("write to '" + path + "' failed");
}

inline std::vector<SynthExample> read_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw PathError("cannot open '" + path + "' for reading");
  std::vector<SynthExample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": invalid JSON: " + e.what());
    }
    if (!j.is_object()) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": expected an object");
    }
    SynthExample ex;
    for (const auto& [key, value] : j.items()) {
      try {
        if (key == "input") ex.input = value.get<std::vector<int>>();
        else if (key == "target") ex.target = value.get<std::vector<int>>();
        else if (key == "labels") ex.labels = value.get<std::vector<int>>();
        else throw ParseError(path + ":" + std::to_string(lineno) + ": unknown field '" + key + "'");
      } catch (const nlohmann::json::exception& e) {
        throw ParseError(path + ":" + std::to_string(lineno) + ": field '" + key + "': " + e.what());
      }
    }
    if (ex.input.empty() || ex.target.empty() || ex.labels.size() != ex.input.size()) {
      throw ParseError(path + ":" + std::to_string(lineno) +
                       ": record needs input, target, and one label per input token");
    }
    for (int l : ex.labels) {
      if (l < 0 || l > 2) {
        throw ParseError(path + ":" + std::to_string(lineno) + ": label " + std::to_string(l) +
                         " outside {0, 1, 2}");
      }
    }
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace colt5
