// Copyright 2026 The colt5 Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <cstdint>
#include <vector>

#include "colt5/costmodel.hpp"
#include "colt5/errors.hpp"
#include "colt5/rational.hpp"
#include "colt5/rng.hpp"

using colt5::CostQuery;
using colt5::CostReport;
using colt5::ModelKind;
using colt5::Rational;
using colt5::Rng;

TEST_CASE("rational arithmetic: normalization, comparison, overflow") {
  REQUIRE(Rational(2, 4) == Rational(1, 2));
  REQUIRE(Rational(-3, -6) == Rational(1, 2));
  REQUIRE(Rational(3, -6) == Rational(-1, 2));
  REQUIRE(Rational(1, 2) + Rational(1, 3) == Rational(5, 6));
  REQUIRE(Rational(7, 2) * Rational(4, 7) == Rational(2));
  REQUIRE(Rational(1, 3) < Rational(1, 2));
  REQUIRE(Rational(9, 8).as_double() == 1.125);
  REQUIRE(Rational(6, 3).is_integer());
  REQUIRE(Rational(6, 3).as_int() == 2);
  REQUIRE(Rational(5, 3).str() == "5/3");
  REQUIRE_THROWS_AS(Rational(1, 0), colt5::NumericError);
  REQUIRE_THROWS_AS(Rational(5, 3).as_int(), colt5::NumericError);
  REQUIRE_THROWS_AS(Rational(INT64_MAX) * Rational(3), colt5::NumericError);
  REQUIRE_THROWS_AS(Rational(1) / Rational(0), colt5::NumericError);
}

TEST_CASE("per-component layer costs evaluate exactly") {
  CostQuery unit;
  unit.n = 1;
  unit.d = 1;
  REQUIRE(colt5::flops_component("vanilla_attn", unit) == Rational(2));

  CostQuery big;
  big.n = 16384;
  big.d = 768;
  REQUIRE(colt5::flops_component("ffn", big).as_int() == 77'309'411'328);
  REQUIRE(colt5::flops_component("longt5_global", big).as_int() == 25'769'803'776);
  REQUIRE(colt5::flops_component("qkv_o_proj", big).as_int() ==
          4LL * 16384 * 768 * 768);
  REQUIRE(colt5::flops_component("longt5_local", big).as_int() ==
          2LL * 16384 * 255 * 768);

  REQUIRE_THROWS_AS(colt5::flops_component("nonsense", big), colt5::ContractError);
}

TEST_CASE("conditional feedforward cost splits light and heavy") {
  CostQuery q;
  q.n = 16;
  q.d = 4;
  q.m = Rational(1);
  auto f = colt5::flops_ffn_colt5(q);
  REQUIRE(f.light.as_int() == 1024);
  REQUIRE(f.heavy.as_int() == 512);
  REQUIRE(f.total().as_int() == 1536);
  REQUIRE(f.total() == Rational(3, 4) * colt5::flops_component("ffn", q));

  q.m = Rational(0);
  REQUIRE(colt5::flops_ffn_colt5(q).heavy == Rational(0));

  q.ffn_light_ratio = Rational(1);
  REQUIRE(colt5::flops_ffn_colt5(q).total() == colt5::flops_component("ffn", q));
}

TEST_CASE("conditional attention cost: exact fractions and reductions") {
  CostQuery q;
  q.n = 256;
  q.d = 32;
  auto a = colt5::flops_attn_colt5(q);
  REQUIRE(a.global_proj.as_int() == 73'728);  // (9/32) * 256 * 32^2
  REQUIRE(a.global_attn.as_int() == 24'576);  // (3/256) * 256^2 * 32

  CostQuery none = q;
  none.q = Rational(0);
  none.v = Rational(0);
  auto only_local = colt5::flops_attn_colt5(none);
  REQUIRE(only_local.global_proj == Rational(0));
  REQUIRE(only_local.global_attn == Rational(0));
  REQUIRE(only_local.total() == only_local.local_proj + only_local.local_attn);

  // All heads light and a window covering the whole sequence reduce the
  // light branch to dense attention plus its projections.
  CostQuery dense = q;
  dense.attn_light_ratio = Rational(1);
  dense.q = Rational(0);
  dense.v = Rational(0);
  dense.w = dense.n;
  auto red = colt5::flops_attn_colt5(dense);
  REQUIRE(red.local_proj == colt5::flops_component("qkv_o_proj", dense));
  REQUIRE(red.local_attn == colt5::flops_component("vanilla_attn", dense));
}

TEST_CASE("layer totals reproduce the published closed forms") {
  CostQuery q;
  q.n = 16384;
  q.d = 768;

  q.kind = ModelKind::T5;
  CostReport t5 = colt5::flops_layer(q);
  REQUIRE(t5.total.as_int() == 528'280'977'408);
  REQUIRE(t5.component("qkv_o_proj") + t5.component("ffn") == Rational(115'964'116'992));
  REQUIRE(t5.component("vanilla_attn") == Rational(412'316'860'416));

  q.kind = ModelKind::LongT5;
  CostReport lt5 = colt5::flops_layer(q);
  const Rational n(q.n), d(q.d);
  REQUIRE(lt5.total == Rational(12) * n * d * d + n * n * d / Rational(8));

  q.kind = ModelKind::CoLT5;
  CostReport c5 = colt5::flops_layer(q);
  REQUIRE(c5.rounded_total == Rational(29, 4) * n * d * d + n * n * d / Rational(84));
  REQUIRE(std::abs(c5.rounded_total.as_double() - 7.2515921e10) < 1e5);
  // The readable form drops the window term and rounds both fractions; at
  // these sizes it sits ~2.5% under the exact component sum.
  const double expected_gap =
      (c5.total - c5.rounded_total).as_double() / c5.total.as_double();
  REQUIRE(c5.rounded_rel_gap == std::abs(expected_gap));
  REQUIRE(c5.rounded_rel_gap < 0.03);

  CostQuery zero;
  zero.n = 0;
  zero.d = 768;
  for (ModelKind k : {ModelKind::T5, ModelKind::LongT5, ModelKind::CoLT5}) {
    zero.kind = k;
    REQUIRE(colt5::flops_layer(zero).total == Rational(0));
  }
}

TEST_CASE("total equals the sum of components for random queries") {
  Rng rng(211);
  for (int trial = 0; trial < 100; ++trial) {
    CostQuery q;
    q.kind = static_cast<ModelKind>(rng.uniform_int(0, 2));
    q.n = 16 * rng.uniform_int(1, 1024);
    q.d = 8 * rng.uniform_int(1, 128);
    CostReport r = colt5::flops_layer(q);
    Rational s(0);
    for (const auto& c : r.components) s += c.flops;
    REQUIRE(s == r.total);
  }
}

TEST_CASE("exact identities hold for every length divisible by 16") {
  Rng rng(223);
  for (int trial = 0; trial < 200; ++trial) {
    CostQuery q;
    q.n = 16 * rng.uniform_int(1, 4096);
    q.d = rng.uniform_int(1, 2048);
    const Rational n(q.n), d(q.d);

    auto f = colt5::flops_ffn_colt5(q);
    REQUIRE(f.total() / (Rational(8) * n * d * d) == Rational(3, 4));

    auto a = colt5::flops_attn_colt5(q);
    REQUIRE(a.global_proj / (n * d * d) == Rational(9, 32));
    REQUIRE(a.global_attn / (n * n * d) == Rational(3, 256));
  }
}

TEST_CASE("cost ordering: conditional < windowed < dense over a grid") {
  for (std::int64_t d : {64, 128, 256, 512, 768, 1024}) {
    for (std::int64_t mult : {1, 2, 4, 8, 16, 32}) {
      CostQuery q;
      q.n = d * mult;
      q.d = d;
      q.kind = ModelKind::CoLT5;
      const Rational colt5_total = colt5::flops_layer(q).total;
      q.kind = ModelKind::LongT5;
      const Rational longt5_total = colt5::flops_layer(q).total;
      q.kind = ModelKind::T5;
      const Rational t5_total = colt5::flops_layer(q).total;
      REQUIRE(colt5_total < longt5_total);
      REQUIRE(longt5_total < t5_total);
    }
  }
}

TEST_CASE("window size sum matches brute force and its closed form") {
  for (std::int64_t n = 1; n <= 40; ++n) {
    for (std::int64_t radius = 0; radius <= 12; ++radius) {
      std::int64_t brute = 0;
      for (std::int64_t i = 0; i < n; ++i) {
        const std::int64_t lo = std::max<std::int64_t>(0, i - radius);
        const std::int64_t hi = std::min<std::int64_t>(n - 1, i + radius);
        brute += hi - lo + 1;
      }
      REQUIRE(colt5::window_size_sum(n, radius) == brute);
      if (n > 2 * radius) {
        REQUIRE(brute == n * (2 * radius + 1) - radius * (radius + 1));
      }
    }
  }
}

TEST_CASE("cost reports render as JSON and aligned text") {
  CostQuery q;
  q.n = 256;
  q.d = 64;
  q.kind = ModelKind::CoLT5;
  CostReport r = colt5::flops_layer(q);

  auto j = colt5::cost_report_json(r);
  REQUIRE(j["model_kind"] == "colt5");
  REQUIRE(j["n"] == 256);
  REQUIRE(j["total_exact"].get<std::string>() == r.total.str());
  REQUIRE(j["components"].size() == r.components.size());

  const std::string text = colt5::cost_report_text(r);
  REQUIRE(text.find("ffn_light") != std::string::npos);
  REQUIRE(text.find("total") != std::string::npos);
  REQUIRE(text.find(r.total.str()) != std::string::npos);

  REQUIRE_THROWS_AS(r.component("does_not_exist"), colt5::ContractError);
}
