// Copyright 2026 The colt5 Authors
// SPDX-License-Identifier: Apache-2.0
//
// Analytic per-encoder-layer FLOPs (one multiply-add = one FLOP) and
// parameter accounting for the three model families. Everything is computed
// in exact rational arithmetic; rounding happens only when a report is
// rendered.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "colt5/errors.hpp"
#include "colt5/rational.hpp"

namespace colt5 {

enum class ModelKind { T5, LongT5, CoLT5 };

inline std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::T5: return "t5";
    case ModelKind::LongT5: return "longt5";
    case ModelKind::CoLT5: return "colt5";
  }
  throw ContractError("unknown model kind");
}

inline ModelKind model_kind_from_string(const std::string& s) {
  if (s == "t5") return ModelKind::T5;
  if (s == "longt5") return ModelKind::LongT5;
  if (s == "colt5") return ModelKind::CoLT5;
  throw ContractError("unknown model kind '" + s + "' (want t5|longt5|colt5)");
}

struct CostQuery {
  ModelKind kind = ModelKind::CoLT5;
  std::int64_t n = 0;
  std::int64_t d = 0;
  std::int64_t w = 255;  // light-branch window width (2*radius + 1)
  // Routed token counts; unset -> defaults m = n/16, q = m, v = 2m (kept as
  // exact rationals so the identities below hold for every n).
  std::optional<Rational> m, q, v;
  Rational ffn_light_ratio{1, 2};
  Rational ffn_heavy_ratio{4, 1};
  Rational attn_light_ratio{1, 4};
  Rational attn_heavy_ratio{3, 4};

  Rational routed_m() const { return m ? *m : Rational(n) / Rational(16); }
  Rational routed_q() const { return q ? *q : routed_m(); }
  Rational routed_v() const { return v ? *v : routed_m() * Rational(2); }

  void validate() const {
    if (n < 0 || d < 0 || w < 0) throw ContractError("cost query: negative size");
    if (routed_m() < Rational(0) || routed_q() < Rational(0) || routed_v() < Rational(0)) {
      throw ContractError("cost query: negative routed count");
    }
  }
};

struct CostItem {
  std::string name;
  Rational flops;
};

struct CostReport {
  ModelKind kind = ModelKind::CoLT5;
  std::int64_t n = 0, d = 0;
  std::vector<CostItem> components;
  Rational total{0};
  // Readable-fraction form of the layer total (7 1/4 nd^2 + n^2 d / 84 for
  // the conditional model; equal to `total` for the others) and its relative
  // gap from the exact value.
  Rational rounded_total{0};
  double rounded_rel_gap = 0.0;

  Rational component(const std::string& name) const {
    for (const auto& c : components) {
      if (c.name == name) return c.flops;
    }
    throw ContractError("cost report has no component '" + name + "'");
  }
};

/// Single-component encoder-layer costs: attention scores+values 2n^2*d,
/// fused QKV+output projections 4n*d^2, feedforward 8n*d^2, windowed local
/// attention 2n*w*d, and the pooled-global term n^2*d/8.
inline Rational flops_component(const std::string& component, const CostQuery& query) {
  query.validate();
  const Rational n(query.n), d(query.d), w(query.w);
  if (component == "vanilla_attn") return Rational(2) * n * n * d;
  if (component == "qkv_o_proj") return Rational(4) * n * d * d;
  if (component == "ffn") return Rational(8) * n * d * d;
  if (component == "longt5_local") return Rational(2) * n * w * d;
  if (component == "longt5_global") return n * n * d / Rational(8);
  throw ContractError("unknown FLOPs component '" + component + "'");
}

struct FfnFlops {
  Rational light{0}, heavy{0};
  Rational total() const { return light + heavy; }
};

/// Conditional feedforward: light = 8n*rL*d^2 over all tokens, heavy =
/// 8m*rH*d^2 over routed tokens. With the default ratios and m = n/16 the
/// total is exactly 3/4 of the dense 8n*d^2 baseline.
inline FfnFlops flops_ffn_colt5(const CostQuery& query) {
  query.validate();
  const Rational n(query.n), d(query.d);
  FfnFlops f;
  f.light = Rational(8) * n * query.ffn_light_ratio * d * d;
  f.heavy = Rational(8) * query.routed_m() * query.ffn_heavy_ratio * d * d;
  return f;
}

struct AttnFlops {
  Rational local_proj{0}, local_attn{0}, global_proj{0}, global_attn{0};
  Rational total() const { return local_proj + local_attn + global_proj + global_attn; }
};

/// Conditional attention: light branch projects all tokens at the light head
/// ratio and attends within the window; heavy branch projects and attends
/// only routed q/v tokens. With defaults, global_proj == (9/32) n*d^2 and
/// global_attn == (3/256) n^2*d exactly.
inline AttnFlops flops_attn_colt5(const CostQuery& query) {
  query.validate();
  const Rational n(query.n), d(query.d), w(query.w);
  const Rational q = query.routed_q(), v = query.routed_v();
  AttnFlops f;
  f.local_proj = Rational(4) * n * query.attn_light_ratio * d * d;
  f.local_attn = Rational(2) * n * w * query.attn_light_ratio * d;
  f.global_proj = Rational(2) * q * query.attn_heavy_ratio * d * d +
                  Rational(2) * v * query.attn_heavy_ratio * d * d;
  f.global_attn = Rational(2) * q * v * query.attn_heavy_ratio * d;
  return f;
}

/// Whole-encoder-layer totals per family. The dense baseline is
/// 12n*d^2 + 2n^2*d; the windowed/pooled variant is quoted in its readable
/// form 12n*d^2 + n^2*d/8 (the 2nwd window term is deliberately absent from
/// that form, w being a constant 255); the conditional model reports its
/// exact component sum alongside the readable form 7 1/4 n*d^2 + n^2*d/84.
inline CostReport flops_layer(const CostQuery& query) {
  query.validate();
  const Rational n(query.n), d(query.d);
  CostReport r;
  r.kind = query.kind;
  r.n = query.n;
  r.d = query.d;
  switch (query.kind) {
    case ModelKind::T5: {
      r.components.push_back({"qkv_o_proj", flops_component("qkv_o_proj", query)});
      r.components.push_back({"vanilla_attn", flops_component("vanilla_attn", query)});
      r.components.push_back({"ffn", flops_component("ffn", query)});
      break;
    }
    case ModelKind::LongT5: {
      r.components.push_back({"qkv_o_proj", flops_component("qkv_o_proj", query)});
      r.components.push_back({"longt5_global", flops_component("longt5_global", query)});
      r.components.push_back({"ffn", flops_component("ffn", query)});
      break;
    }
    case ModelKind::CoLT5: {
      const FfnFlops ffn = flops_ffn_colt5(query);
      const AttnFlops attn = flops_attn_colt5(query);
      r.components.push_back({"ffn_light", ffn.light});
      r.components.push_back({"ffn_heavy", ffn.heavy});
      r.components.push_back({"attn_local_proj", attn.local_proj});
      r.components.push_back({"attn_local_attn", attn.local_attn});
      r.components.push_back({"attn_global_proj", attn.global_proj});
      r.components.push_back({"attn_global_attn", attn.global_attn});
      break;
    }
  }
  for (const auto& c : r.components) r.total = r.total + c.flops;
  if (query.kind == ModelKind::CoLT5) {
    r.rounded_total = Rational(29, 4) * n * d * d + n * n * d / Rational(84);
    if (r.total != Rational(0)) {
      r.rounded_rel_gap = std::abs((r.total - r.rounded_total).as_double() / r.total.as_double());
    }
  } else {
    r.rounded_total = r.total;
    r.rounded_rel_gap = 0.0;
  }
  return r;
}

/// Exact sum of per-token window sizes for a window of the given radius:
/// interior tokens see 2r+1 positions, the r tokens at each end see fewer.
/// Runtime counters in the attention layer match this exactly.
inline std::int64_t window_size_sum(std::int64_t n, std::int64_t radius) {
  std::int64_t total = 0;
  const std::int64_t w = 2 * radius + 1;
  if (n > 2 * radius) {
    total = (n - 2 * radius) * w;  // interior
    // Each end contributes (r+1+radius-1)+... : positions i<r see i+radius+1.
    for (std::int64_t i = 0; i < radius; ++i) total += 2 * (i + radius + 1);
  } else {
    for (std::int64_t i = 0; i < n; ++i) {
      const std::int64_t lo = std::max<std::int64_t>(0, i - radius);
      const std::int64_t hi = std::min<std::int64_t>(n - 1, i + radius);
      total += hi - lo + 1;
    }
  }
  return total;
}

// ---------------------------------------------------------------------------
// Report rendering
// ---------------------------------------------------------------------------

inline nlohmann::json cost_report_json(const CostReport& r) {
  nlohmann::json j;
  j["model_kind"] = to_string(r.kind);
  j["n"] = r.n;
  j["d"] = r.d;
  nlohmann::json comps = nlohmann::json::array();
  for (const auto& c : r.components) {
    comps.push_back({{"name", c.name},
                     {"flops_exact", c.flops.str()},
                     {"flops", c.flops.as_double()}});
  }
  j["components"] = comps;
  j["total_exact"] = r.total.str();
  j["total"] = r.total.as_double();
  j["rounded_form_exact"] = r.rounded_total.str();
  j["rounded_form"] = r.rounded_total.as_double();
  j["rounded_form_rel_gap"] = r.rounded_rel_gap;
  return j;
}

inline std::string cost_report_text(const CostReport& r) {
  std::ostringstream os;
  os << "model: " << to_string(r.kind) << "  n=" << r.n << "  d=" << r.d << "\n";
  std::size_t name_w = 5;
  for (const auto& c : r.components) name_w = std::max(name_w, c.name.size());
  for (const auto& c : r.components) {
    os << "  " << std::left << std::setw(static_cast<int>(name_w)) << c.name << "  "
       << std::right << std::setw(20) << c.flops.str() << "\n";
  }
  os << "  " << std::left << std::setw(static_cast<int>(name_w)) << "total" << "  "
     << std::right << std::setw(20) << r.total.str() << "\n";
  os << "  readable-fraction form: " << r.rounded_total.str()
     << "  (relative gap " << std::scientific << std::setprecision(3) << r.rounded_rel_gap
     << ")\n";
  return os.str();
}

}  // namespace colt5
