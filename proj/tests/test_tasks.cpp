// Copyright 2026 The colt5 Authors
// SPDX-License-Identifier: Apache-2.0

#include "colt5/tasks.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>

using namespace colt5;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(std::string p) : path(std::move(p)) {}
  ~TempFile() { std::remove(path.c_str()); }
};

std::vector<char> slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::array<std::size_t, 3> label_counts(const SynthExample& ex) {
  std::array<std::size_t, 3> counts{0, 0, 0};
  for (int l : ex.labels) {
    REQUIRE(l >= 0);
    REQUIRE(l <= 2);
    ++counts[static_cast<std::size_t>(l)];
  }
  return counts;
}

}  // namespace

TEST_CASE("kv_retrieval examples have the documented structure", "[tasks][kv]") {
  TaskSpec spec;
  spec.task = TaskKind::kKvRetrieval;
  spec.n = 64;
  spec.vocab_size = 64;
  spec.num_pairs = 5;
  spec.span_len = 2;
  spec.seed = 17;
  for (std::uint64_t idx = 0; idx < 50; ++idx) {
    SynthExample ex = gen_kv_retrieval(spec, idx);
    REQUIRE(ex.input.size() == spec.n);
    REQUIRE(ex.labels.size() == spec.n);
    REQUIRE(ex.target.size() == spec.span_len + 1);
    CHECK(ex.target.back() == kEosToken);
    CHECK(ex.input[0] == kMarkerA);

    auto counts = label_counts(ex);
    CHECK(counts[0] == 2);              // query marker + queried key
    CHECK(counts[1] == spec.span_len);  // exactly the value tokens
    CHECK(counts[0] + counts[1] + counts[2] == spec.n);
    CHECK(ex.labels[0] == static_cast<int>(TokenCategory::kQuestion));
    CHECK(ex.labels[1] == static_cast<int>(TokenCategory::kQuestion));

    // Answer-labeled positions reproduce the target, in order.
    std::vector<int> answer;
    for (std::size_t i = 0; i < spec.n; ++i) {
      if (ex.labels[i] == static_cast<int>(TokenCategory::kAnswer)) answer.push_back(ex.input[i]);
    }
    answer.push_back(kEosToken);
    CHECK(answer == ex.target);

    // Pairs are packed right after the question: each starts with a distinct
    // key-partition token followed by span_len value-partition tokens, and
    // everything after the pair region is filler.
    std::set<int> keys;
    std::size_t i = 2;
    for (std::size_t p = 0; p < spec.num_pairs; ++p) {
      CHECK(ex.input[i] >= spec.key_token(0));
      CHECK(ex.input[i] < spec.value_token(0));
      keys.insert(ex.input[i]);
      for (std::size_t j = 1; j <= spec.span_len; ++j) {
        CHECK(ex.input[i + j] >= spec.value_token(0));
        CHECK(ex.input[i + j] < spec.filler_token(0));
      }
      i += 1 + spec.span_len;
    }
    for (; i < spec.n; ++i) {
      CHECK(ex.input[i] >= spec.filler_token(0));
      CHECK(ex.input[i] < static_cast<int>(spec.vocab_size));
    }
    CHECK(keys.size() == spec.num_pairs);
    CHECK(keys.count(ex.input[1]) == 1);

    // The brute-force lookup solves every example exactly.
    CHECK(kv_lookup_oracle(ex.input, spec) == ex.target);
  }
}

TEST_CASE("kv_retrieval single pair with no filler", "[tasks][kv]") {
  TaskSpec spec;
  spec.task = TaskKind::kKvRetrieval;
  spec.span_len = 3;
  spec.num_pairs = 1;
  spec.n = 2 + 1 * (1 + 3);
  spec.vocab_size = 32;
  spec.seed = 5;
  SynthExample ex = gen_kv_retrieval(spec, 0);
  REQUIRE(ex.input.size() == spec.n);
  // input = [marker, key, key, v1, v2, v3]; target = (v1, v2, v3, eos)
  CHECK(ex.input[1] == ex.input[2]);
  CHECK(ex.target == std::vector<int>{ex.input[3], ex.input[4], ex.input[5], kEosToken});
}

TEST_CASE("copy_span examples mark and copy one span", "[tasks][copy]") {
  TaskSpec spec;
  spec.task = TaskKind::kCopySpan;
  spec.n = 40;
  spec.vocab_size = 48;
  spec.span_len = 4;
  spec.seed = 23;
  for (std::uint64_t idx = 0; idx < 50; ++idx) {
    SynthExample ex = gen_copy_span(spec, idx);
    REQUIRE(ex.input.size() == spec.n);
    REQUIRE(ex.target.size() == spec.span_len + 1);
    CHECK(ex.target.back() == kEosToken);

    const auto a = std::find(ex.input.begin(), ex.input.end(), kMarkerA);
    REQUIRE(a != ex.input.end());
    const auto start = static_cast<std::size_t>(a - ex.input.begin());
    CHECK(ex.input[start + 1 + spec.span_len] == kMarkerB);
    for (std::size_t j = 0; j < spec.span_len; ++j) {
      CHECK(ex.target[j] == ex.input[start + 1 + j]);
      CHECK(ex.labels[start + 1 + j] == static_cast<int>(TokenCategory::kAnswer));
    }
    auto counts = label_counts(ex);
    CHECK(counts[0] == 2);  // the two markers
    CHECK(counts[1] == spec.span_len);
    CHECK(counts[0] + counts[1] + counts[2] == spec.n);
  }

  // Degenerate: no filler at all — a pure copy task.
  TaskSpec tight = spec;
  tight.n = spec.span_len + 2;
  SynthExample ex = gen_copy_span(tight, 7);
  CHECK(ex.input.front() == kMarkerA);
  CHECK(ex.input.back() == kMarkerB);
  CHECK(std::vector<int>(ex.input.begin() + 1, ex.input.end() - 1) ==
        std::vector<int>(ex.target.begin(), ex.target.end() - 1));
}

TEST_CASE("generation is deterministic per (seed, index)", "[tasks][determinism]") {
  TaskSpec spec;
  spec.task = TaskKind::kKvRetrieval;
  spec.n = 48;
  spec.vocab_size = 64;
  spec.num_pairs = 4;
  spec.span_len = 2;
  spec.seed = 99;
  for (std::uint64_t idx : {0ULL, 3ULL, 17ULL}) {
    SynthExample a = gen_example(spec, idx);
    SynthExample b = gen_example(spec, idx);
    CHECK(a.input == b.input);
    CHECK(a.target == b.target);
    CHECK(a.labels == b.labels);
  }
  CHECK(gen_example(spec, 0).input != gen_example(spec, 1).input);
  TaskSpec reseeded = spec;
  reseeded.seed = 100;
  CHECK(gen_example(spec, 0).input != gen_example(reseeded, 0).input);

  TempFile f1("tasks_a.jsonl"), f2("tasks_b.jsonl");
  write_jsonl(gen_dataset(spec, 20), f1.path);
  write_jsonl(gen_dataset(spec, 20), f2.path);
  CHECK(slurp(f1.path) == slurp(f2.path));
}

TEST_CASE("task spec capacity violations", "[tasks][errors]") {
  TaskSpec spec;
  spec.task = TaskKind::kKvRetrieval;
  spec.n = 10;
  spec.vocab_size = 64;
  spec.num_pairs = 4;
  spec.span_len = 2;  // needs 2 + 4*3 = 14 > 10
  CHECK_THROWS_AS(spec.validate(), ContractError);

  spec.n = 512;
  spec.num_pairs = 30;  // key alphabet is (64-4)/3 = 20
  CHECK_THROWS_AS(spec.validate(), ContractError);

  TaskSpec tiny;
  tiny.task = TaskKind::kCopySpan;
  tiny.n = 4;
  tiny.span_len = 3;  // needs 5
  CHECK_THROWS_AS(tiny.validate(), ContractError);

  TaskSpec small_vocab;
  small_vocab.vocab_size = 5;
  CHECK_THROWS_AS(small_vocab.validate(), ContractError);

  TaskSpec wrong;
  wrong.task = TaskKind::kCopySpan;
  wrong.n = 16;
  CHECK_THROWS_AS(gen_kv_retrieval(wrong, 0), ContractError);
}

TEST_CASE("task spec JSON round-trips strictly", "[tasks][config]") {
  TaskSpec spec;
  spec.task = TaskKind::kCopySpan;
  spec.n = 128;
  spec.vocab_size = 96;
  spec.num_pairs = 6;
  spec.span_len = 5;
  spec.seed = 1234567;
  TaskSpec back = task_spec_from_json(task_spec_to_json(spec));
  CHECK(task_spec_to_json(back) == task_spec_to_json(spec));
  nlohmann::json j = task_spec_to_json(spec);
  j["span_length"] = 5;
  CHECK_THROWS_AS(task_spec_from_json(j), ParseError);
  CHECK_THROWS_AS(task_kind_from_string("sort"), ParseError);
}

TEST_CASE("dataset files round-trip and reject malformed lines", "[tasks][jsonl]") {
  TaskSpec spec;
  spec.task = TaskKind::kCopySpan;
  spec.n = 24;
  spec.vocab_size = 32;
  spec.span_len = 3;
  spec.seed = 8;
  std::vector<SynthExample> data = gen_dataset(spec, 12);

  TempFile f("tasks_roundtrip.jsonl");
  write_jsonl(data, f.path);
  std::vector<SynthExample> back = read_jsonl(f.path);
  REQUIRE(back.size() == data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    CHECK(back[i].input == data[i].input);
    CHECK(back[i].target == data[i].target);
    CHECK(back[i].labels == data[i].labels);
  }

  auto write_lines = [&](const std::string& body) {
    std::ofstream out(f.path, std::ios::trunc);
    out << body;
  };
  write_lines("{\"input\":[2,3],\"target\":[2,1],\"labels\":[0,1]}\nnot json\n");
  CHECK_THROWS_WITH(read_jsonl(f.path), Catch::Matchers::ContainsSubstring(":2:"));
  write_lines("{\"input\":[2,3],\"target\":[2,1],\"labels\":[0,1],\"extra\":true}\n");
  CHECK_THROWS_AS(read_jsonl(f.path), ParseError);
  write_lines("{\"input\":[2,3],\"target\":[2,1],\"labels\":[0,7]}\n");
  CHECK_THROWS_AS(read_jsonl(f.path), ParseError);
  write_lines("{\"input\":[2,3],\"target\":[2,1],\"labels\":[0]}\n");
  CHECK_THROWS_AS(read_jsonl(f.path), ParseError);
  CHECK_THROWS_AS(read_jsonl("missing_dataset.jsonl"), PathError);
}
