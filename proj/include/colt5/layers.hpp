// Copyright 2026 The colt5 Authors
// SPDX-License-Identifier: Apache-2.0
//
// Layer mechanisms: conditional feedforward (light on all tokens, heavy on
// routed tokens), conditional attention (windowed light branch plus routed
// all-to-all heavy branch), and multi-query cross-attention with an
// incremental decode cache. Every sublayer is pre-normalized; residual adds
// happen in the composing ops, mirroring the update equations
//   X_i = X_i + FFd_light(X_i) + w_i * FFd_heavy(X_i)
//   X_i = X_i + A_light(X_i, X) + w_i^q * A_heavy(X_i, w^kv X).

#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "colt5/errors.hpp"
#include "colt5/rational.hpp"
#include "colt5/rng.hpp"
#include "colt5/routing.hpp"
#include "colt5/tensor.hpp"

namespace colt5 {

struct LayerConfig {
  std::size_t d = 64;
  std::size_t ffn_base_hidden = 128;  // dense-reference hidden size h
  Rational ffn_light_ratio{1, 2};
  Rational ffn_heavy_ratio{4, 1};
  std::size_t heads_total = 4;
  std::size_t heads_light = 1;
  std::size_t heads_heavy = 3;
  std::size_t head_dim = 16;
  std::size_t window_radius = 127;
  std::size_t m = 0;  // routed feedforward tokens
  std::size_t q = 0;  // routed query tokens; 0 -> m
  std::size_t v = 0;  // routed key-value tokens; 0 -> 2m
  bool gated_ffn = true;            // two input projections (gated) vs plain
  bool kv_scale_values_only = false;  // scale V rows only, not the K/V input
  std::size_t rel_bias_buckets = 32;
  std::size_t rel_bias_max_distance = 128;

  std::size_t window_width() const { return 2 * window_radius + 1; }
  std::size_t q_count() const { return q != 0 ? q : m; }
  std::size_t v_count() const { return v != 0 ? v : 2 * m; }

  std::size_t ffn_light_hidden() const { return scaled_hidden(ffn_light_ratio); }
  std::size_t ffn_heavy_hidden() const { return scaled_hidden(ffn_heavy_ratio); }

  void validate() const {
    if (d == 0 || head_dim == 0 || ffn_base_hidden == 0) {
      throw ContractError("layer config: zero dimension");
    }
    if (heads_light + heads_heavy != heads_total) {
      throw ContractError("layer config: heads_light + heads_heavy = " +
                          std::to_string(heads_light + heads_heavy) + " != heads_total = " +
                          std::to_string(heads_total));
    }
    if (heads_light == 0 || heads_heavy == 0) {
      throw ContractError("layer config: each attention branch needs at least one head");
    }
    (void)ffn_light_hidden();
    (void)ffn_heavy_hidden();
  }

 private:
  std::size_t scaled_hidden(const Rational& ratio) const {
    const Rational h = ratio * Rational(static_cast<std::int64_t>(ffn_base_hidden));
    if (!h.is_integer() || h.as_int() < 1) {
      throw ContractError("layer config: ffn ratio " + ratio.str() + " of hidden " +
                          std::to_string(ffn_base_hidden) + " is not a positive integer");
    }
    return static_cast<std::size_t>(h.as_int());
  }
};

// ---------------------------------------------------------------------------
// Relative-position bucketing (32 buckets, max distance 128): half the
// buckets for each sign in bidirectional mode, half of those exact, the rest
// logarithmically spaced up to max_distance.
// ---------------------------------------------------------------------------
inline int relative_bucket(std::int64_t rel, bool bidirectional, std::size_t num_buckets,
                           std::size_t max_distance) {
  int bucket = 0;
  std::int64_t buckets = static_cast<std::int64_t>(num_buckets);
  if (bidirectional) {
    buckets /= 2;
    if (rel > 0) bucket += static_cast<int>(buckets);
    rel = std::llabs(rel);
  } else {
    rel = rel < 0 ? -rel : 0;
  }
  const std::int64_t max_exact = buckets / 2;
  if (rel < max_exact) return bucket + static_cast<int>(rel);
  const double log_ratio = std::log(static_cast<double>(rel) / static_cast<double>(max_exact)) /
                           std::log(static_cast<double>(max_distance) /
                                    static_cast<double>(max_exact));
  const std::int64_t large =
      max_exact + static_cast<std::int64_t>(log_ratio * static_cast<double>(buckets - max_exact));
  return bucket + static_cast<int>(std::min(large, buckets - 1));
}

/// Bias rows for every in-window offset: offset t - i ranges over
/// [-radius, radius], producing a [w x heads] tensor gathered (differentiably)
/// from the learned bucket table.
template <class S>
TensorT<S> window_bias(const TensorT<S>& bucket_table, int radius, const LayerConfig& cfg) {
  std::vector<int> ids;
  ids.reserve(2 * static_cast<std::size_t>(radius) + 1);
  for (std::int64_t rel = -radius; rel <= radius; ++rel) {
    ids.push_back(relative_bucket(rel, /*bidirectional=*/true, cfg.rel_bias_buckets,
                                  cfg.rel_bias_max_distance));
  }
  return gather_rows(bucket_table, ids);
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

template <class S>
struct FFNBranchParamsT {
  TensorT<S> wi;  // [d x hidden]
  TensorT<S> wg;  // [d x hidden], gated variant only
  TensorT<S> wo;  // [hidden x d]
};

template <class S>
struct ConditionalFFNParamsT {
  TensorT<S> norm_scale;  // [d]
  FFNBranchParamsT<S> light, heavy;

  static ConditionalFFNParamsT init(Rng& rng, const LayerConfig& cfg) {
    cfg.validate();
    ConditionalFFNParamsT p;
    p.norm_scale = TensorT<S>::full({cfg.d}, S(1)).set_requires_grad(true);
    auto branch = [&](std::size_t hidden) {
      FFNBranchParamsT<S> b;
      const double in_std = 1.0 / std::sqrt(static_cast<double>(cfg.d));
      const double out_std = 1.0 / std::sqrt(static_cast<double>(hidden));
      b.wi = TensorT<S>::randn(rng, {cfg.d, hidden}, in_std).set_requires_grad(true);
      if (cfg.gated_ffn) {
        b.wg = TensorT<S>::randn(rng, {cfg.d, hidden}, in_std).set_requires_grad(true);
      }
      b.wo = TensorT<S>::randn(rng, {hidden, cfg.d}, out_std).set_requires_grad(true);
      return b;
    };
    p.light = branch(cfg.ffn_light_hidden());
    p.heavy = branch(cfg.ffn_heavy_hidden());
    return p;
  }

  template <class F>
  void for_each_param(F&& f) {
    f("norm_scale", norm_scale);
    f("light.wi", light.wi);
    if (light.wg.defined()) f("light.wg", light.wg);
    f("light.wo", light.wo);
    f("heavy.wi", heavy.wi);
    if (heavy.wg.defined()) f("heavy.wg", heavy.wg);
    f("heavy.wo", heavy.wo);
  }
};

template <class S>
struct ConditionalAttnParamsT {
  TensorT<S> norm_scale;                  // [d]
  TensorT<S> wq_l, wk_l, wv_l;            // [d x heads_light*head_dim]
  TensorT<S> wo_l;                        // [heads_light*head_dim x d]
  TensorT<S> rel_bias;                    // [buckets x heads_light]
  TensorT<S> wq_h, wk_h, wv_h;            // [d x heads_heavy*head_dim]
  TensorT<S> wo_h;                        // [heads_heavy*head_dim x d]

  static ConditionalAttnParamsT init(Rng& rng, const LayerConfig& cfg) {
    cfg.validate();
    ConditionalAttnParamsT p;
    const double in_std = 1.0 / std::sqrt(static_cast<double>(cfg.d));
    const std::size_t wl = cfg.heads_light * cfg.head_dim;
    const std::size_t wh = cfg.heads_heavy * cfg.head_dim;
    p.norm_scale = TensorT<S>::full({cfg.d}, S(1)).set_requires_grad(true);
    p.wq_l = TensorT<S>::randn(rng, {cfg.d, wl}, in_std).set_requires_grad(true);
    p.wk_l = TensorT<S>::randn(rng, {cfg.d, wl}, in_std).set_requires_grad(true);
    p.wv_l = TensorT<S>::randn(rng, {cfg.d, wl}, in_std).set_requires_grad(true);
    p.wo_l = TensorT<S>::randn(rng, {wl, cfg.d}, 1.0 / std::sqrt(static_cast<double>(wl)))
                 .set_requires_grad(true);
    p.rel_bias = TensorT<S>::zeros({cfg.rel_bias_buckets, cfg.heads_light});
    p.rel_bias.set_requires_grad(true);
    p.wq_h = TensorT<S>::randn(rng, {cfg.d, wh}, in_std).set_requires_grad(true);
    p.wk_h = TensorT<S>::randn(rng, {cfg.d, wh}, in_std).set_requires_grad(true);
    p.wv_h = TensorT<S>::randn(rng, {cfg.d, wh}, in_std).set_requires_grad(true);
    p.wo_h = TensorT<S>::randn(rng, {wh, cfg.d}, 1.0 / std::sqrt(static_cast<double>(wh)))
                 .set_requires_grad(true);
    return p;
  }

  template <class F>
  void for_each_param(F&& f) {
    f("norm_scale", norm_scale);
    f("light.wq", wq_l);
    f("light.wk", wk_l);
    f("light.wv", wv_l);
    f("light.wo", wo_l);
    f("light.rel_bias", rel_bias);
    f("heavy.wq", wq_h);
    f("heavy.wk", wk_h);
    f("heavy.wv", wv_h);
    f("heavy.wo", wo_h);
  }
};

using ConditionalFFNParams = ConditionalFFNParamsT<double>;
using ConditionalAttnParams = ConditionalAttnParamsT<double>;

// ---------------------------------------------------------------------------
// Feedforward
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> ffn_branch(const TensorT<S>& x, const FFNBranchParamsT<S>& p, bool gated) {
  if (gated) {
    if (!p.wg.defined()) {
      throw ContractError("ffn_branch: gated call on a branch initialized without a gate");
    }
    return matmul(mul(gelu(matmul(x, p.wi)), matmul(x, p.wg)), p.wo);
  }
  return matmul(gelu(matmul(x, p.wi)), p.wo);
}

namespace detail {

/// Routing weights of the selected rows, as a length-k_sel vector.
template <class S>
TensorT<S> selected_weights(const RoutingDecisionT<S>& decision) {
  const std::size_t n = decision.weights.numel();
  TensorT<S> col = reshape(decision.weights, {n, 1});
  TensorT<S> sel = gather_rows(col, decision.selected);
  return reshape(sel, {decision.selected.size()});
}

}  // namespace detail

/// X + light(norm(X)) + w_i * heavy(norm(X_i)) on the routed set. The heavy
/// branch runs only on gathered rows, so its cost scales with the selection
/// size, and unselected rows receive an exactly-zero heavy contribution.
template <class S>
TensorT<S> conditional_ffn(const TensorT<S>& x, const ConditionalFFNParamsT<S>& params,
                           const RoutingDecisionT<S>& decision, const LayerConfig& cfg) {
  const std::size_t n = x.shape()[0];
  if (decision.weights.numel() != n) {
    throw ContractError("conditional_ffn: decision length " +
                        std::to_string(decision.weights.numel()) + " != sequence length " +
                        std::to_string(n));
  }
  TensorT<S> normed = rms_norm(x, params.norm_scale);
  TensorT<S> out = add(x, ffn_branch(normed, params.light, cfg.gated_ffn));
  if (decision.selected.empty()) return out;
  TensorT<S> gathered = gather_rows(normed, decision.selected);
  TensorT<S> heavy = ffn_branch(gathered, params.heavy, cfg.gated_ffn);
  TensorT<S> scaled = scale_rows(heavy, detail::selected_weights(decision));
  return add(out, scatter_add_rows(TensorT<S>::zeros({n, x.shape()[1]}),
                                   decision.selected, scaled));
}

// ---------------------------------------------------------------------------
// Attention
// ---------------------------------------------------------------------------

/// Light branch: windowed attention over heads_light with relative-position
/// bias. Returns the branch output (no residual).
template <class S>
TensorT<S> light_attention(const TensorT<S>& x, const ConditionalAttnParamsT<S>& params,
                           const LayerConfig& cfg) {
  TensorT<S> normed = rms_norm(x, params.norm_scale);
  TensorT<S> q = matmul(normed, params.wq_l);
  TensorT<S> k = matmul(normed, params.wk_l);
  TensorT<S> v = matmul(normed, params.wv_l);
  TensorT<S> bias = window_bias(params.rel_bias, static_cast<int>(cfg.window_radius), cfg);
  TensorT<S> core = local_attention_core(q, k, v, bias, static_cast<int>(cfg.window_radius),
                                         cfg.heads_light);
  return matmul(core, params.wo_l);
}

/// Dense multi-head attention over explicit per-head K/V tensors; shared by
/// the heavy branch and by cross-attention (where MQA passes the same K/V to
/// every head). Optional per-head additive logit bias and causal mask (the
/// mask is applied after the bias, so masked positions stay masked).
template <class S>
TensorT<S> multihead_core(const TensorT<S>& q, const std::vector<TensorT<S>>& k_heads,
                          const std::vector<TensorT<S>>& v_heads, std::size_t head_dim,
                          bool causal = false,
                          const std::vector<TensorT<S>>* bias_heads = nullptr) {
  const std::size_t heads = k_heads.size();
  if (bias_heads != nullptr && bias_heads->size() != heads) {
    throw DimensionError("multihead_core: " + std::to_string(bias_heads->size()) +
                         " bias heads for " + std::to_string(heads) + " attention heads");
  }
  const S scale = S(1) / static_cast<S>(std::sqrt(static_cast<double>(head_dim)));
  std::vector<TensorT<S>> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    TensorT<S> qh = col_slice(q, h * head_dim, (h + 1) * head_dim);
    TensorT<S> logits = smul(matmul(qh, transpose(k_heads[h])), scale);
    if (bias_heads != nullptr) logits = add(logits, (*bias_heads)[h]);
    if (causal) {
      const std::size_t t = logits.shape()[0], s = logits.shape()[1];
      std::vector<std::uint8_t> future(t * s, 0);
      for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = i + 1; j < s; ++j) future[i * s + j] = 1;
      logits = masked_fill(logits, future, S(-1e30));
    }
    outs.push_back(matmul(softmax(logits, 1), v_heads[h]));
  }
  return concat_cols(outs);
}

/// Heavy branch: routed queries attend over routed, weight-scaled key-value
/// tokens; the result is scaled by the query weights and scattered back.
/// Returns the branch contribution (zero rows off the routed query set).
template <class S>
TensorT<S> heavy_attention(const TensorT<S>& x, const ConditionalAttnParamsT<S>& params,
                           const RoutingDecisionT<S>& q_decision,
                           const RoutingDecisionT<S>& kv_decision, const LayerConfig& cfg) {
  const std::size_t n = x.shape()[0];
  if (q_decision.weights.numel() != n || kv_decision.weights.numel() != n) {
    throw ContractError("heavy_attention: decision length does not match sequence length");
  }
  if (q_decision.selected.empty() || kv_decision.selected.empty()) {
    throw ContractError("heavy_attention: empty query or key-value selection");
  }
  TensorT<S> normed = rms_norm(x, params.norm_scale);

  TensorT<S> kv_rows = gather_rows(normed, kv_decision.selected);
  TensorT<S> w_kv = detail::selected_weights(kv_decision);
  TensorT<S> k, v;
  if (cfg.kv_scale_values_only) {
    k = matmul(kv_rows, params.wk_h);
    v = matmul(scale_rows(kv_rows, w_kv), params.wv_h);
  } else {
    TensorT<S> scaled_rows = scale_rows(kv_rows, w_kv);
    k = matmul(scaled_rows, params.wk_h);
    v = matmul(scaled_rows, params.wv_h);
  }

  TensorT<S> q = matmul(gather_rows(normed, q_decision.selected), params.wq_h);
  std::vector<TensorT<S>> k_heads, v_heads;
  for (std::size_t h = 0; h < cfg.heads_heavy; ++h) {
    k_heads.push_back(col_slice(k, h * cfg.head_dim, (h + 1) * cfg.head_dim));
    v_heads.push_back(col_slice(v, h * cfg.head_dim, (h + 1) * cfg.head_dim));
  }
  TensorT<S> core = multihead_core(q, k_heads, v_heads, cfg.head_dim);
  TensorT<S> out = scale_rows(matmul(core, params.wo_h), detail::selected_weights(q_decision));
  return scatter_add_rows(TensorT<S>::zeros({n, x.shape()[1]}), q_decision.selected, out);
}

/// Full attention sublayer: X + light + heavy (heavy optionally disabled).
template <class S>
TensorT<S> conditional_attention(const TensorT<S>& x, const ConditionalAttnParamsT<S>& params,
                                 const RoutingDecisionT<S>& q_decision,
                                 const RoutingDecisionT<S>& kv_decision, const LayerConfig& cfg,
                                 bool heavy_enabled = true) {
  TensorT<S> out = add(x, light_attention(x, params, cfg));
  if (!heavy_enabled) return out;
  return add(out, heavy_attention(x, params, q_decision, kv_decision, cfg));
}

// ---------------------------------------------------------------------------
// Cross-attention (decoder side): all query heads share one K head and one V
// head in multi-query mode; the multi-head toggle gives each query head its
// own K/V slice.
// ---------------------------------------------------------------------------

template <class S>
struct CrossAttnParamsT {
  TensorT<S> wq;  // [d x heads*head_dim]
  TensorT<S> wk;  // [d x head_dim] (multi-query) or [d x heads*head_dim]
  TensorT<S> wv;  // same shape rule as wk
  TensorT<S> wo;  // [heads*head_dim x d]
  bool multi_head = false;

  static CrossAttnParamsT init(Rng& rng, std::size_t d, std::size_t heads, std::size_t head_dim,
                               bool multi_head_kv) {
    CrossAttnParamsT p;
    const double in_std = 1.0 / std::sqrt(static_cast<double>(d));
    const std::size_t qw = heads * head_dim;
    const std::size_t kw = multi_head_kv ? heads * head_dim : head_dim;
    p.wq = TensorT<S>::randn(rng, {d, qw}, in_std).set_requires_grad(true);
    p.wk = TensorT<S>::randn(rng, {d, kw}, in_std).set_requires_grad(true);
    p.wv = TensorT<S>::randn(rng, {d, kw}, in_std).set_requires_grad(true);
    p.wo = TensorT<S>::randn(rng, {qw, d}, 1.0 / std::sqrt(static_cast<double>(qw)))
               .set_requires_grad(true);
    p.multi_head = multi_head_kv;
    return p;
  }

  template <class F>
  void for_each_param(F&& f) {
    f("wq", wq);
    f("wk", wk);
    f("wv", wv);
    f("wo", wo);
  }
};

using CrossAttnParams = CrossAttnParamsT<double>;

/// Precomputed encoder-side keys/values, reused across decode steps.
template <class S>
struct CrossAttnCacheT {
  TensorT<S> k, v;
};

template <class S>
CrossAttnCacheT<S> cross_attention_cache(const TensorT<S>& encoder_state,
                                         const CrossAttnParamsT<S>& params) {
  return {matmul(encoder_state, params.wk), matmul(encoder_state, params.wv)};
}

template <class S>
TensorT<S> cross_attention_with_cache(const TensorT<S>& decoder_state,
                                      const CrossAttnCacheT<S>& cache,
                                      const CrossAttnParamsT<S>& params, std::size_t heads,
                                      std::size_t head_dim) {
  TensorT<S> q = matmul(decoder_state, params.wq);
  std::vector<TensorT<S>> k_heads, v_heads;
  for (std::size_t h = 0; h < heads; ++h) {
    if (params.multi_head) {
      k_heads.push_back(col_slice(cache.k, h * head_dim, (h + 1) * head_dim));
      v_heads.push_back(col_slice(cache.v, h * head_dim, (h + 1) * head_dim));
    } else {
      k_heads.push_back(cache.k);
      v_heads.push_back(cache.v);
    }
  }
  return matmul(multihead_core(q, k_heads, v_heads, head_dim), params.wo);
}

/// One-shot form: computes the encoder cache and applies it.
template <class S>
TensorT<S> mqa_cross_attention(const TensorT<S>& decoder_state, const TensorT<S>& encoder_state,
                               const CrossAttnParamsT<S>& params, std::size_t heads,
                               std::size_t head_dim) {
  return cross_attention_with_cache(decoder_state, cross_attention_cache(encoder_state, params),
                                    params, heads, head_dim);
}

}  // namespace colt5
