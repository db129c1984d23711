// Copyright 2026 The colt5 Authors
// SPDX-License-Identifier: Apache-2.0
//
// Seq2seq assembly: a conditional-computation encoder (three routers per
// layer feeding conditional attention and feedforward), a dense decoder with
// causal self-attention and multi-query cross-attention, greedy decoding with
// incremental caches, a training step with an AdamW-style optimizer, an
// analytic parameter count, and a versioned binary checkpoint format.

#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "colt5/costmodel.hpp"
#include "colt5/errors.hpp"
#include "colt5/layers.hpp"
#include "colt5/rational.hpp"
#include "colt5/rng.hpp"
#include "colt5/routing.hpp"
#include "colt5/tensor.hpp"

namespace colt5 {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

enum class RoutingStrategy { kLearned, kStatic };
enum class AttnOverride { kDefault, kVEqualsQ, kVAll };
enum class CrossAttnKind { kMultiQuery, kMultiHead };

inline std::string to_string(RoutingStrategy s) {
  return s == RoutingStrategy::kLearned ? "learned" : "static";
}
inline std::string to_string(AttnOverride o) {
  switch (o) {
    case AttnOverride::kDefault: return "default";
    case AttnOverride::kVEqualsQ: return "v=q";
    default: return "v=all";
  }
}
inline std::string to_string(CrossAttnKind k) {
  return k == CrossAttnKind::kMultiQuery ? "mqa" : "mha";
}

inline RoutingStrategy routing_strategy_from_string(const std::string& s) {
  if (s == "learned") return RoutingStrategy::kLearned;
  if (s == "static") return RoutingStrategy::kStatic;
  throw ParseError("unknown routing strategy '" + s + "' (want learned|static)");
}
inline AttnOverride attn_override_from_string(const std::string& s) {
  if (s == "default") return AttnOverride::kDefault;
  if (s == "v=q") return AttnOverride::kVEqualsQ;
  if (s == "v=all") return AttnOverride::kVAll;
  throw ParseError("unknown attention override '" + s + "' (want default|v=q|v=all)");
}
inline CrossAttnKind cross_attn_from_string(const std::string& s) {
  if (s == "mqa") return CrossAttnKind::kMultiQuery;
  if (s == "mha") return CrossAttnKind::kMultiHead;
  throw ParseError("unknown cross-attention kind '" + s + "' (want mqa|mha)");
}

struct ModelConfig {
  std::size_t num_layers = 2;      // encoder layers
  std::size_t decoder_layers = 0;  // 0 -> same as num_layers
  std::size_t d = 64;
  std::size_t vocab_size = 512;
  std::size_t ffn_base_hidden = 256;  // dense-reference hidden; decoder FFN size
  Rational ffn_light_ratio{1, 2};
  Rational ffn_heavy_ratio{4, 1};
  std::size_t heads_total = 4;
  std::size_t heads_light = 1;
  std::size_t heads_heavy = 3;
  std::size_t head_dim = 16;
  std::size_t window_radius = 127;
  Rational m_fraction{1, 16};  // routed FFN tokens as a fraction of n
  Rational q_fraction{0};      // routed queries; 0 -> m_fraction
  Rational v_fraction{0};      // routed key-values; 0 -> 2 * m_fraction
  bool gated_ffn = true;
  bool kv_scale_values_only = false;
  std::size_t rel_bias_buckets = 32;
  std::size_t rel_bias_max_distance = 128;
  SoftTopKConfig topk;
  RoutingStrategy routing = RoutingStrategy::kLearned;
  AttnOverride attn_override = AttnOverride::kDefault;
  CrossAttnKind cross_attention = CrossAttnKind::kMultiQuery;
  std::uint64_t seed = 0;
  std::size_t pad_id = 0;
  std::size_t eos_id = 1;

  std::size_t effective_decoder_layers() const {
    return decoder_layers != 0 ? decoder_layers : num_layers;
  }

  /// Routed token count for one fraction at a given length: round-half-up,
  /// clamped to [1, n].
  static std::size_t routed_count(std::size_t n, const Rational& fraction) {
    const Rational scaled = fraction * Rational(static_cast<std::int64_t>(n));
    const std::int64_t rounded = (2 * scaled.num() + scaled.den()) / (2 * scaled.den());
    return std::min(n, static_cast<std::size_t>(std::max<std::int64_t>(1, rounded)));
  }

  /// LayerConfig for sequence length n, with m/q/v resolved from fractions
  /// and the attention override applied.
  LayerConfig layer_config(std::size_t n) const {
    LayerConfig lc;
    lc.d = d;
    lc.ffn_base_hidden = ffn_base_hidden;
    lc.ffn_light_ratio = ffn_light_ratio;
    lc.ffn_heavy_ratio = ffn_heavy_ratio;
    lc.heads_total = heads_total;
    lc.heads_light = heads_light;
    lc.heads_heavy = heads_heavy;
    lc.head_dim = head_dim;
    lc.window_radius = window_radius;
    lc.gated_ffn = gated_ffn;
    lc.kv_scale_values_only = kv_scale_values_only;
    lc.rel_bias_buckets = rel_bias_buckets;
    lc.rel_bias_max_distance = rel_bias_max_distance;
    lc.m = routed_count(n, m_fraction);
    lc.q = routed_count(n, q_fraction.num() != 0 ? q_fraction : m_fraction);
    switch (attn_override) {
      case AttnOverride::kVEqualsQ:
        lc.v = lc.q;
        break;
      case AttnOverride::kVAll:
        lc.v = n;
        break;
      default:
        lc.v = v_fraction.num() != 0 ? routed_count(n, v_fraction)
                                     : std::min(n, 2 * lc.m);
    }
    return lc;
  }

  void validate() const {
    if (num_layers == 0) throw ContractError("model config: num_layers must be >= 1");
    if (vocab_size < 2) throw ContractError("model config: vocab must hold pad and eos");
    if (pad_id >= vocab_size || eos_id >= vocab_size || pad_id == eos_id) {
      throw ContractError("model config: pad/eos ids invalid for vocab size " +
                          std::to_string(vocab_size));
    }
    if (m_fraction <= Rational(0) || m_fraction > Rational(1)) {
      throw ContractError("model config: m_fraction must lie in (0, 1]");
    }
    topk.validate();
    layer_config(16).validate();  // surfaces head/hidden inconsistencies early
  }
};

inline nlohmann::json model_config_to_json(const ModelConfig& c) {
  nlohmann::json j;
  j["num_layers"] = c.num_layers;
  j["decoder_layers"] = c.decoder_layers;
  j["d"] = c.d;
  j["vocab_size"] = c.vocab_size;
  j["ffn_base_hidden"] = c.ffn_base_hidden;
  j["ffn_light_ratio"] = c.ffn_light_ratio.str();
  j["ffn_heavy_ratio"] = c.ffn_heavy_ratio.str();
  j["heads_total"] = c.heads_total;
  j["heads_light"] = c.heads_light;
  j["heads_heavy"] = c.heads_heavy;
  j["head_dim"] = c.head_dim;
  j["window_radius"] = c.window_radius;
  j["m_fraction"] = c.m_fraction.str();
  j["q_fraction"] = c.q_fraction.str();
  j["v_fraction"] = c.v_fraction.str();
  j["gated_ffn"] = c.gated_ffn;
  j["kv_scale_values_only"] = c.kv_scale_values_only;
  j["rel_bias_buckets"] = c.rel_bias_buckets;
  j["rel_bias_max_distance"] = c.rel_bias_max_distance;
  j["topk_epsilon"] = c.topk.epsilon;
  j["topk_iterations"] = c.topk.iterations;
  j["train_expansion"] = c.topk.train_expansion.str();
  j["routing"] = to_string(c.routing);
  j["attn_override"] = to_string(c.attn_override);
  j["cross_attention"] = to_string(c.cross_attention);
  j["seed"] = c.seed;
  j["pad_id"] = c.pad_id;
  j["eos_id"] = c.eos_id;
  return j;
}

/// Strict inverse of model_config_to_json: every key must be known, values
/// must have the right JSON type. Unknown keys are parse errors so stale or
/// misspelled configurations fail loudly.
inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ParseError("model config: expected a JSON object");
  ModelConfig c;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "num_layers") c.num_layers = value.get<std::size_t>();
      else if (key == "decoder_layers") c.decoder_layers = value.get<std::size_t>();
      else if (key == "d") c.d = value.get<std::size_t>();
      else if (key == "vocab_size") c.vocab_size = value.get<std::size_t>();
      else if (key == "ffn_base_hidden") c.ffn_base_hidden = value.get<std::size_t>();
      else if (key == "ffn_light_ratio") c.ffn_light_ratio = Rational::parse(value.get<std::string>());
      else if (key == "ffn_heavy_ratio") c.ffn_heavy_ratio = Rational::parse(value.get<std::string>());
      else if (key == "heads_total") c.heads_total = value.get<std::size_t>();
      else if (key == "heads_light") c.heads_light = value.get<std::size_t>();
      else if (key == "heads_heavy") c.heads_heavy = value.get<std::size_t>();
      else if (key == "head_dim") c.head_dim = value.get<std::size_t>();
      else if (key == "window_radius") c.window_radius = value.get<std::size_t>();
      else if (key == "m_fraction") c.m_fraction = Rational::parse(value.get<std::string>());
      else if (key == "q_fraction") c.q_fraction = Rational::parse(value.get<std::string>());
      else if (key == "v_fraction") c.v_fraction = Rational::parse(value.get<std::string>());
      else if (key == "gated_ffn") c.gated_ffn = value.get<bool>();
      else if (key == "kv_scale_values_only") c.kv_scale_values_only = value.get<bool>();
      else if (key == "rel_bias_buckets") c.rel_bias_buckets = value.get<std::size_t>();
      else if (key == "rel_bias_max_distance") c.rel_bias_max_distance = value.get<std::size_t>();
      else if (key == "topk_epsilon") c.topk.epsilon = value.get<double>();
      else if (key == "topk_iterations") c.topk.iterations = value.get<int>();
      else if (key == "train_expansion") c.topk.train_expansion = Rational::parse(value.get<std::string>());
      else if (key == "routing") c.routing = routing_strategy_from_string(value.get<std::string>());
      else if (key == "attn_override") c.attn_override = attn_override_from_string(value.get<std::string>());
      else if (key == "cross_attention") c.cross_attention = cross_attn_from_string(value.get<std::string>());
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "pad_id") c.pad_id = value.get<std::size_t>();
      else if (key == "eos_id") c.eos_id = value.get<std::size_t>();
      else throw ParseError("model config: unknown key '" + key + "'");
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("model config: bad value for '" + key + "': " + e.what());
    }
  }
  return c;
}

// ---------------------------------------------------------------------------
// Routing trace
// ---------------------------------------------------------------------------

struct RouterRecord {
  std::vector<int> selected;
  std::vector<double> weights;  // full length-n soft weight vector
  double lambda = 0.0;
  bool full = false;
  std::size_t k_target = 0;
};

struct LayerTrace {
  RouterRecord ffn, query, kv;

  const RouterRecord& router(const std::string& name) const {
    if (name == "ffn") return ffn;
    if (name == "query") return query;
    if (name == "kv") return kv;
    throw ContractError("unknown router '" + name + "' (want ffn|query|kv)");
  }
};

struct RoutingTrace {
  std::size_t n = 0;
  std::vector<LayerTrace> layers;
};

namespace detail {

template <class S>
RouterRecord record_decision(const RoutingDecisionT<S>& d) {
  RouterRecord r;
  r.selected = d.selected;
  r.weights.assign(d.weights.data().begin(), d.weights.data().end());
  r.lambda = d.lambda;
  r.full = d.full;
  r.k_target = d.k_target;
  return r;
}

inline FrozenRouting to_frozen(const RouterRecord& r) {
  return FrozenRouting{r.selected, r.lambda, r.full, r.k_target};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

template <class S>
struct EncoderLayerParamsT {
  RouterT<S> ffn_router, query_router, kv_router;
  ConditionalAttnParamsT<S> attn;
  ConditionalFFNParamsT<S> ffn;
};

template <class S>
struct DecoderLayerParamsT {
  TensorT<S> self_norm;                    // [d]
  TensorT<S> wq, wk, wv, wo;               // dense causal self-attention
  TensorT<S> self_bias;                    // [buckets x heads_total]
  TensorT<S> cross_norm;                   // [d]
  CrossAttnParamsT<S> cross;
  TensorT<S> ffn_norm;                     // [d]
  FFNBranchParamsT<S> ffn;                 // dense, hidden = ffn_base_hidden
};

template <class S>
struct ModelT {
  ModelConfig config;
  TensorT<S> embedding;  // [vocab x d], shared by encoder and decoder inputs
  std::vector<EncoderLayerParamsT<S>> encoder;
  TensorT<S> encoder_norm;  // [d]
  std::vector<DecoderLayerParamsT<S>> decoder;
  TensorT<S> decoder_norm;  // [d]
  TensorT<S> lm_head;       // [d x vocab], untied from the embedding

  static ModelT init(const ModelConfig& config) {
    config.validate();
    ModelT m;
    m.config = config;
    SeedSplitter seeds(config.seed);
    {
      Rng rng = seeds.stream("embedding");
      m.embedding = TensorT<S>::randn(rng, {config.vocab_size, config.d},
                                      1.0 / std::sqrt(static_cast<double>(config.d)))
                        .set_requires_grad(true);
    }
    const LayerConfig lc = config.layer_config(16);
    for (std::size_t l = 0; l < config.num_layers; ++l) {
      Rng rng = seeds.stream("encoder." + std::to_string(l));
      EncoderLayerParamsT<S> layer;
      layer.ffn_router = RouterT<S>::init(rng, config.d);
      layer.query_router = RouterT<S>::init(rng, config.d);
      layer.kv_router = RouterT<S>::init(rng, config.d);
      layer.attn = ConditionalAttnParamsT<S>::init(rng, lc);
      layer.ffn = ConditionalFFNParamsT<S>::init(rng, lc);
      m.encoder.push_back(std::move(layer));
    }
    m.encoder_norm = TensorT<S>::full({config.d}, S(1)).set_requires_grad(true);
    const std::size_t width = config.heads_total * config.head_dim;
    const double in_std = 1.0 / std::sqrt(static_cast<double>(config.d));
    for (std::size_t l = 0; l < config.effective_decoder_layers(); ++l) {
      Rng rng = seeds.stream("decoder." + std::to_string(l));
      DecoderLayerParamsT<S> layer;
      layer.self_norm = TensorT<S>::full({config.d}, S(1)).set_requires_grad(true);
      layer.wq = TensorT<S>::randn(rng, {config.d, width}, in_std).set_requires_grad(true);
      layer.wk = TensorT<S>::randn(rng, {config.d, width}, in_std).set_requires_grad(true);
      layer.wv = TensorT<S>::randn(rng, {config.d, width}, in_std).set_requires_grad(true);
      layer.wo = TensorT<S>::randn(rng, {width, config.d},
                                   1.0 / std::sqrt(static_cast<double>(width)))
                     .set_requires_grad(true);
      layer.self_bias = TensorT<S>::zeros({config.rel_bias_buckets, config.heads_total});
      layer.self_bias.set_requires_grad(true);
      layer.cross_norm = TensorT<S>::full({config.d}, S(1)).set_requires_grad(true);
      layer.cross = CrossAttnParamsT<S>::init(
          rng, config.d, config.heads_total, config.head_dim,
          config.cross_attention == CrossAttnKind::kMultiHead);
      layer.ffn_norm = TensorT<S>::full({config.d}, S(1)).set_requires_grad(true);
      const std::size_t h = config.ffn_base_hidden;
      layer.ffn.wi = TensorT<S>::randn(rng, {config.d, h}, in_std).set_requires_grad(true);
      if (config.gated_ffn) {
        layer.ffn.wg = TensorT<S>::randn(rng, {config.d, h}, in_std).set_requires_grad(true);
      }
      layer.ffn.wo = TensorT<S>::randn(rng, {h, config.d},
                                       1.0 / std::sqrt(static_cast<double>(h)))
                         .set_requires_grad(true);
      m.decoder.push_back(std::move(layer));
    }
    m.decoder_norm = TensorT<S>::full({config.d}, S(1)).set_requires_grad(true);
    {
      Rng rng = seeds.stream("lm_head");
      m.lm_head = TensorT<S>::randn(rng, {config.d, config.vocab_size}, in_std)
                      .set_requires_grad(true);
    }
    return m;
  }

  /// Visits every parameter with a stable, checkpoint-compatible name.
  template <class F>
  void for_each_param(F&& f) {
    f("embedding", embedding);
    for (std::size_t l = 0; l < encoder.size(); ++l) {
      const std::string p = "encoder." + std::to_string(l) + ".";
      auto& layer = encoder[l];
      f(p + "ffn_router.u", layer.ffn_router.u);
      f(p + "query_router.u", layer.query_router.u);
      f(p + "kv_router.u", layer.kv_router.u);
      layer.attn.for_each_param(
          [&](const std::string& name, TensorT<S>& t) { f(p + "attn." + name, t); });
      layer.ffn.for_each_param(
          [&](const std::string& name, TensorT<S>& t) { f(p + "ffn." + name, t); });
    }
    f("encoder_norm", encoder_norm);
    for (std::size_t l = 0; l < decoder.size(); ++l) {
      const std::string p = "decoder." + std::to_string(l) + ".";
      auto& layer = decoder[l];
      f(p + "self_norm", layer.self_norm);
      f(p + "self.wq", layer.wq);
      f(p + "self.wk", layer.wk);
      f(p + "self.wv", layer.wv);
      f(p + "self.wo", layer.wo);
      f(p + "self.rel_bias", layer.self_bias);
      f(p + "cross_norm", layer.cross_norm);
      layer.cross.for_each_param(
          [&](const std::string& name, TensorT<S>& t) { f(p + "cross." + name, t); });
      f(p + "ffn_norm", layer.ffn_norm);
      f(p + "ffn.wi", layer.ffn.wi);
      if (layer.ffn.wg.defined()) f(p + "ffn.wg", layer.ffn.wg);
      f(p + "ffn.wo", layer.ffn.wo);
    }
    f("decoder_norm", decoder_norm);
    f("lm_head", lm_head);
  }
};

using Model = ModelT<double>;

// ---------------------------------------------------------------------------
// Encoder forward
// ---------------------------------------------------------------------------

namespace detail {

template <class S>
void check_token_ids(const std::vector<int>& tokens, std::size_t vocab) {
  if (tokens.empty()) throw ContractError("encode: empty token sequence");
  for (int id : tokens) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw VocabError("token id " + std::to_string(id) + " outside vocabulary [0, " +
                       std::to_string(vocab) + ")");
    }
  }
}

/// Routes over the valid (non-padding) positions only; padding rows can never
/// be selected and always carry weight zero. Equivalent to assigning padding
/// scores of -inf, without poisoning the dual bisection bracket.
template <class S>
RoutingDecisionT<S> route_masked(const TensorT<S>& x, const RouterT<S>& router, std::size_t k,
                                 bool training, const SoftTopKConfig& cfg,
                                 const std::vector<int>& valid) {
  const std::size_t n = x.shape()[0];
  if (valid.size() == n) {
    return route(x, router, std::min(k, n), training, cfg);
  }
  RoutingDecisionT<S> decision;
  if (valid.empty()) {
    decision.weights = TensorT<S>::zeros({n});
    decision.raw_scores = TensorT<S>::zeros({n});
    decision.k_target = 0;
    return decision;
  }
  TensorT<S> xv = gather_rows(x, valid);
  RoutingDecisionT<S> sub = route(xv, router, std::min(k, valid.size()), training, cfg);
  decision.selected.reserve(sub.selected.size());
  for (int i : sub.selected) {
    decision.selected.push_back(valid[static_cast<std::size_t>(i)]);
  }
  const std::size_t nv = valid.size();
  decision.weights = reshape(
      scatter_add_rows(TensorT<S>::zeros({n, 1}), valid, reshape(sub.weights, {nv, 1})), {n});
  decision.raw_scores = reshape(
      scatter_add_rows(TensorT<S>::zeros({n, 1}), valid, reshape(sub.raw_scores, {nv, 1})), {n});
  decision.k_target = sub.k_target;
  decision.lambda = sub.lambda;
  decision.full = sub.full;
  return decision;
}

}  // namespace detail

/// Runs the conditional encoder stack over one token sequence. When `frozen`
/// is given, the selection sets and dual thresholds of a previous trace are
/// replayed, making the forward pass a smooth function of the parameters.
template <class S>
std::pair<TensorT<S>, RoutingTrace> encode(const ModelT<S>& model, const std::vector<int>& tokens,
                                           bool training, const RoutingTrace* frozen = nullptr) {
  detail::check_token_ids<S>(tokens, model.config.vocab_size);
  const std::size_t n = tokens.size();
  if (frozen != nullptr &&
      (frozen->n != n || frozen->layers.size() != model.encoder.size())) {
    throw ContractError("encode: frozen trace shape does not match this input");
  }
  const LayerConfig lc = model.config.layer_config(n);
  std::vector<int> valid;
  for (std::size_t i = 0; i < n; ++i) {
    if (static_cast<std::size_t>(tokens[i]) != model.config.pad_id) {
      valid.push_back(static_cast<int>(i));
    }
  }

  RoutingTrace trace;
  trace.n = n;
  TensorT<S> x = gather_rows(model.embedding, tokens);
  for (std::size_t l = 0; l < model.encoder.size(); ++l) {
    const auto& layer = model.encoder[l];
    auto decide = [&](const RouterT<S>& router, std::size_t k,
                      const RouterRecord* rec) -> RoutingDecisionT<S> {
      if (rec != nullptr) return route_frozen(x, router, detail::to_frozen(*rec), model.config.topk);
      if (model.config.routing == RoutingStrategy::kStatic) return route_static_blocks(x, k);
      return detail::route_masked(x, router, k, training, model.config.topk, valid);
    };
    const LayerTrace* fl = frozen != nullptr ? &frozen->layers[l] : nullptr;
    RoutingDecisionT<S> qd = decide(layer.query_router, lc.q_count(), fl ? &fl->query : nullptr);
    RoutingDecisionT<S> kvd = decide(layer.kv_router, lc.v_count(), fl ? &fl->kv : nullptr);
    const bool heavy_on = !qd.selected.empty() && !kvd.selected.empty();
    x = conditional_attention(x, layer.attn, qd, kvd, lc, heavy_on);
    RoutingDecisionT<S> fd = decide(layer.ffn_router, lc.m, fl ? &fl->ffn : nullptr);
    x = conditional_ffn(x, layer.ffn, fd, lc);
    LayerTrace lt;
    lt.ffn = detail::record_decision(fd);
    lt.query = detail::record_decision(qd);
    lt.kv = detail::record_decision(kvd);
    trace.layers.push_back(std::move(lt));
  }
  return {rms_norm(x, model.encoder_norm), std::move(trace)};
}

// ---------------------------------------------------------------------------
// Decoder forward
// ---------------------------------------------------------------------------

namespace detail {

/// Per-head [tq x tk] causal relative-position bias, gathered differentiably
/// from the layer's bucket table. `query_offset` is the absolute position of
/// the first query row (nonzero during incremental decoding).
template <class S>
std::vector<TensorT<S>> causal_bias_heads(const TensorT<S>& table, std::size_t tq, std::size_t tk,
                                          std::size_t query_offset, const ModelConfig& cfg) {
  std::vector<int> ids;
  ids.reserve(tq * tk);
  for (std::size_t i = 0; i < tq; ++i) {
    for (std::size_t j = 0; j < tk; ++j) {
      const std::int64_t rel = static_cast<std::int64_t>(j) -
                               static_cast<std::int64_t>(i + query_offset);
      ids.push_back(relative_bucket(rel, /*bidirectional=*/false, cfg.rel_bias_buckets,
                                    cfg.rel_bias_max_distance));
    }
  }
  TensorT<S> flat = gather_rows(table, ids);  // [tq*tk x heads]
  std::vector<TensorT<S>> heads;
  heads.reserve(cfg.heads_total);
  for (std::size_t h = 0; h < cfg.heads_total; ++h) {
    heads.push_back(reshape(col_slice(flat, h, h + 1), {tq, tk}));
  }
  return heads;
}

template <class S>
std::vector<TensorT<S>> head_slices(const TensorT<S>& t, std::size_t heads, std::size_t dh) {
  std::vector<TensorT<S>> out;
  out.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) out.push_back(col_slice(t, h * dh, (h + 1) * dh));
  return out;
}

}  // namespace detail

/// Teacher-forced decoder pass: returns [t x vocab] logits for the whole
/// decoder input at once (causal self-attention via masking).
template <class S>
TensorT<S> decode_logits(const ModelT<S>& model, const TensorT<S>& encoder_states,
                         const std::vector<int>& decoder_inputs) {
  detail::check_token_ids<S>(decoder_inputs, model.config.vocab_size);
  const std::size_t t = decoder_inputs.size();
  const std::size_t heads = model.config.heads_total, dh = model.config.head_dim;
  TensorT<S> x = gather_rows(model.embedding, decoder_inputs);
  for (const auto& layer : model.decoder) {
    {
      TensorT<S> normed = rms_norm(x, layer.self_norm);
      TensorT<S> q = matmul(normed, layer.wq);
      auto kh = detail::head_slices(matmul(normed, layer.wk), heads, dh);
      auto vh = detail::head_slices(matmul(normed, layer.wv), heads, dh);
      auto bias = detail::causal_bias_heads<S>(layer.self_bias, t, t, 0, model.config);
      TensorT<S> core = multihead_core(q, kh, vh, dh, /*causal=*/true, &bias);
      x = add(x, matmul(core, layer.wo));
    }
    {
      TensorT<S> normed = rms_norm(x, layer.cross_norm);
      x = add(x, mqa_cross_attention(normed, encoder_states, layer.cross, heads, dh));
    }
    x = add(x, ffn_branch(rms_norm(x, layer.ffn_norm), layer.ffn, model.config.gated_ffn));
  }
  return matmul(rms_norm(x, model.decoder_norm), model.lm_head);
}

/// Incremental greedy decoding with per-layer key/value caches. Returns the
/// generated ids, including the end-of-sequence id if one was produced. When
/// `logits_out` is given, the per-step vocabulary logits are appended to it.
template <class S>
std::vector<int> decode_greedy(const ModelT<S>& model, const TensorT<S>& encoder_states,
                               std::size_t max_len,
                               std::vector<std::vector<S>>* logits_out = nullptr) {
  const std::size_t heads = model.config.heads_total, dh = model.config.head_dim;
  const std::size_t width = heads * dh;
  std::vector<CrossAttnCacheT<S>> cross;
  cross.reserve(model.decoder.size());
  for (const auto& layer : model.decoder) {
    cross.push_back(cross_attention_cache(encoder_states, layer.cross));
  }
  std::vector<std::vector<S>> k_cache(model.decoder.size()), v_cache(model.decoder.size());

  std::vector<int> out;
  int prev = static_cast<int>(model.config.pad_id);  // decoder start token
  for (std::size_t step = 0; step < max_len; ++step) {
    TensorT<S> x = gather_rows(model.embedding, std::vector<int>{prev});
    for (std::size_t l = 0; l < model.decoder.size(); ++l) {
      const auto& layer = model.decoder[l];
      {
        TensorT<S> normed = rms_norm(x, layer.self_norm);
        TensorT<S> q = matmul(normed, layer.wq);
        TensorT<S> k_row = matmul(normed, layer.wk);
        TensorT<S> v_row = matmul(normed, layer.wv);
        k_cache[l].insert(k_cache[l].end(), k_row.data().begin(), k_row.data().end());
        v_cache[l].insert(v_cache[l].end(), v_row.data().begin(), v_row.data().end());
        const std::size_t tk = step + 1;
        TensorT<S> k_all = TensorT<S>::from_data({tk, width}, k_cache[l]);
        TensorT<S> v_all = TensorT<S>::from_data({tk, width}, v_cache[l]);
        auto bias = detail::causal_bias_heads<S>(layer.self_bias, 1, tk, step, model.config);
        TensorT<S> core = multihead_core(q, detail::head_slices(k_all, heads, dh),
                                         detail::head_slices(v_all, heads, dh), dh,
                                         /*causal=*/false, &bias);
        x = add(x, matmul(core, layer.wo));
      }
      {
        TensorT<S> normed = rms_norm(x, layer.cross_norm);
        x = add(x, cross_attention_with_cache(normed, cross[l], layer.cross, heads, dh));
      }
      x = add(x, ffn_branch(rms_norm(x, layer.ffn_norm), layer.ffn, model.config.gated_ffn));
    }
    TensorT<S> logits = matmul(rms_norm(x, model.decoder_norm), model.lm_head);
    if (logits_out != nullptr) {
      logits_out->emplace_back(logits.data().begin(), logits.data().end());
    }
    int best = 0;
    for (std::size_t idx = 1; idx < model.config.vocab_size; ++idx) {
      if (logits.data()[idx] > logits.data()[static_cast<std::size_t>(best)]) {
        best = static_cast<int>(idx);
      }
    }
    out.push_back(best);
    if (static_cast<std::size_t>(best) == model.config.eos_id) break;
    prev = best;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct Example {
  std::vector<int> input, target;
};

/// Decoupled adaptive optimizer with fixed learning rate and global-norm
/// gradient clipping; state is positional over the model's parameter order.
class AdamW {
 public:
  struct Hyper {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
    double clip_norm = 1.0;
  };

  AdamW() = default;
  explicit AdamW(Hyper hyper) : hyper_(hyper) {}

  const Hyper& hyper() const { return hyper_; }
  std::uint64_t step_count() const { return step_; }

  template <class S>
  void apply(std::vector<TensorT<S>>& params, std::vector<std::vector<double>>& grads) {
    if (params.size() != grads.size()) {
      throw ContractError("optimizer: " + std::to_string(grads.size()) + " gradients for " +
                          std::to_string(params.size()) + " parameters");
    }
    if (m_.empty()) {
      m_.resize(params.size());
      v_.resize(params.size());
      for (std::size_t i = 0; i < params.size(); ++i) {
        m_[i].assign(params[i].numel(), 0.0);
        v_[i].assign(params[i].numel(), 0.0);
      }
    }
    if (m_.size() != params.size()) {
      throw ContractError("optimizer: state size does not match parameter count");
    }
    double sq_norm = 0.0;
    for (const auto& g : grads) {
      for (double v : g) sq_norm += v * v;
    }
    const double norm = std::sqrt(sq_norm);
    const double scale = (hyper_.clip_norm > 0 && norm > hyper_.clip_norm)
                             ? hyper_.clip_norm / norm
                             : 1.0;
    ++step_;
    const double bc1 = 1.0 - std::pow(hyper_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(hyper_.beta2, static_cast<double>(step_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto vals = params[i].mutable_data();
      if (m_[i].size() != vals.size()) {
        throw DimensionError("optimizer: parameter " + std::to_string(i) + " changed size");
      }
      for (std::size_t e = 0; e < vals.size(); ++e) {
        const double g = grads[i][e] * scale;
        m_[i][e] = hyper_.beta1 * m_[i][e] + (1.0 - hyper_.beta1) * g;
        v_[i][e] = hyper_.beta2 * v_[i][e] + (1.0 - hyper_.beta2) * g * g;
        const double mhat = m_[i][e] / bc1;
        const double vhat = v_[i][e] / bc2;
        vals[e] -= hyper_.lr * (mhat / (std::sqrt(vhat) + hyper_.eps) +
                                hyper_.weight_decay * vals[e]);
      }
    }
  }

  // Checkpoint plumbing.
  std::vector<std::vector<double>>& moment1() { return m_; }
  std::vector<std::vector<double>>& moment2() { return v_; }
  void set_step_count(std::uint64_t s) { step_ = s; }

 private:
  Hyper hyper_;
  std::uint64_t step_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

/// Loss for one example under the current parameters; must be called with a
/// graph in scope if gradients are wanted. Teacher forcing: the decoder input
/// is the target shifted right behind the pad/start id.
template <class S>
TensorT<S> example_loss(const ModelT<S>& model, const Example& ex, bool training,
                        RoutingTrace* trace_out = nullptr,
                        const RoutingTrace* frozen = nullptr) {
  if (ex.target.empty()) throw ContractError("example: empty target");
  auto [states, trace] = encode(model, ex.input, training, frozen);
  if (trace_out != nullptr) *trace_out = std::move(trace);
  std::vector<int> dec_in;
  dec_in.reserve(ex.target.size());
  dec_in.push_back(static_cast<int>(model.config.pad_id));
  dec_in.insert(dec_in.end(), ex.target.begin(), ex.target.end() - 1);
  TensorT<S> logits = decode_logits(model, states, dec_in);
  return cross_entropy_logits(logits, ex.target);
}

/// One optimizer step over a batch: per-example forward/backward with
/// gradient accumulation, then a single clipped update. Returns mean loss.
/// Examples may be processed by up to `num_threads` workers; the result is
/// bitwise independent of the thread count because per-example gradients are
/// always accumulated in batch order.
template <class S>
double train_step(ModelT<S>& model, const std::vector<Example>& batch, AdamW& optimizer,
                  std::vector<RoutingTrace>* traces_out = nullptr, std::size_t num_threads = 1) {
  if (batch.empty()) throw ContractError("train_step: empty batch");
  std::vector<TensorT<S>> params;
  model.for_each_param([&](const std::string&, TensorT<S>& t) { params.push_back(t); });

  std::vector<double> losses(batch.size());
  std::vector<RoutingTrace> traces(batch.size());
  // Per-example gradients, indexed [example][param]; empty vector = no path.
  std::vector<std::vector<std::vector<double>>> per_example(batch.size());
  auto run_example = [&](std::size_t b) {
    GraphT<S> g;
    GraphScopeT<S> scope(g);
    TensorT<S> loss = example_loss(model, batch[b], /*training=*/true, &traces[b]);
    g.backward(loss);
    per_example[b].resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (!g.contains(params[i])) continue;  // e.g. a branch gated off this example
      TensorT<S> gt = g.grad(params[i]);
      per_example[b][i].assign(gt.data().begin(), gt.data().end());
    }
    losses[b] = loss.item();
  };

  const std::size_t workers = std::max<std::size_t>(1, std::min(num_threads, batch.size()));
  if (workers == 1) {
    for (std::size_t b = 0; b < batch.size(); ++b) run_example(b);
  } else {
    std::atomic<std::size_t> next{0};
    auto pump = [&] {
      for (std::size_t b = next.fetch_add(1); b < batch.size(); b = next.fetch_add(1)) {
        run_example(b);
      }
    };
    std::vector<std::thread> pool;
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(pump);
    pump();
    for (auto& t : pool) t.join();
  }

  std::vector<std::vector<double>> grads(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) grads[i].assign(params[i].numel(), 0.0);
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  double total_loss = 0.0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& g = per_example[b][i];
      for (std::size_t e = 0; e < g.size(); ++e) grads[i][e] += inv_b * g[e];
    }
    total_loss += losses[b];
    if (traces_out != nullptr) traces_out->push_back(std::move(traces[b]));
  }
  optimizer.apply(params, grads);
  return total_loss / static_cast<double>(batch.size());
}

// ---------------------------------------------------------------------------
// Analytic parameter count
// ---------------------------------------------------------------------------

struct ParamItem {
  std::string name;
  std::int64_t count = 0;
};

struct ParamReport {
  ModelKind kind = ModelKind::CoLT5;
  std::vector<ParamItem> components;
  std::int64_t total = 0;

  std::int64_t component(const std::string& name) const {
    for (const auto& c : components) {
      if (c.name == name) return c.count;
    }
    throw ContractError("parameter report has no component '" + name + "'");
  }
};

/// Closed-form parameter count for the configured architecture. For the
/// conditional model this matches the instantiated tensors exactly; the dense
/// kinds count a standard pre-norm encoder with one attention sublayer
/// (window/global attention reuses the same projections).
inline ParamReport count_params(const ModelConfig& config, ModelKind kind) {
  const std::int64_t d = static_cast<std::int64_t>(config.d);
  const std::int64_t vocab = static_cast<std::int64_t>(config.vocab_size);
  const std::int64_t h = static_cast<std::int64_t>(config.ffn_base_hidden);
  const std::int64_t heads = static_cast<std::int64_t>(config.heads_total);
  const std::int64_t dh = static_cast<std::int64_t>(config.head_dim);
  const std::int64_t buckets = static_cast<std::int64_t>(config.rel_bias_buckets);
  const std::int64_t enc_layers = static_cast<std::int64_t>(config.num_layers);
  const std::int64_t dec_layers = static_cast<std::int64_t>(config.effective_decoder_layers());
  const std::int64_t ffn_mats = config.gated_ffn ? 3 : 2;

  ParamReport report;
  report.kind = kind;
  auto put = [&](const std::string& name, std::int64_t count) {
    report.components.push_back({name, count});
    report.total += count;
  };

  put("embedding", vocab * d);
  put("lm_head", d * vocab);
  put("final_norms", 2 * d);

  std::int64_t enc_attn = 0, enc_ffn = 0, enc_routers = 0, enc_bias = 0;
  if (kind == ModelKind::CoLT5) {
    const std::int64_t wl = static_cast<std::int64_t>(config.heads_light) * dh;
    const std::int64_t wh = static_cast<std::int64_t>(config.heads_heavy) * dh;
    const LayerConfig lc = config.layer_config(16);
    enc_attn = (3 * d * wl + wl * d) + (3 * d * wh + wh * d);
    enc_ffn = ffn_mats * d * static_cast<std::int64_t>(lc.ffn_light_hidden()) +
              ffn_mats * d * static_cast<std::int64_t>(lc.ffn_heavy_hidden());
    enc_routers = 3 * d;
    enc_bias = buckets * static_cast<std::int64_t>(config.heads_light);
  } else {
    enc_attn = 4 * d * (heads * dh);
    enc_ffn = ffn_mats * d * h;
    enc_bias = buckets * heads;
  }
  put("encoder_attention", enc_layers * enc_attn);
  put("encoder_ffn", enc_layers * enc_ffn);
  put("encoder_routers", enc_layers * enc_routers);
  put("encoder_rel_bias", enc_layers * enc_bias);
  put("encoder_norms", enc_layers * 2 * d);

  const std::int64_t kv_width = (kind == ModelKind::CoLT5 &&
                                 config.cross_attention == CrossAttnKind::kMultiQuery)
                                    ? dh
                                    : heads * dh;
  const std::int64_t dec_self = 4 * d * (heads * dh);
  const std::int64_t dec_cross = d * (heads * dh) + 2 * d * kv_width + (heads * dh) * d;
  put("decoder_self_attention", dec_layers * dec_self);
  put("decoder_rel_bias", dec_layers * buckets * heads);
  put("decoder_cross_attention", dec_layers * dec_cross);
  put("decoder_ffn", dec_layers * ffn_mats * d * h);
  put("decoder_norms", dec_layers * 3 * d);
  return report;
}

// ---------------------------------------------------------------------------
// Checkpointing
// ---------------------------------------------------------------------------

namespace detail {

constexpr char kCheckpointMagic[4] = {'C', '5', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;

inline void write_bytes(std::ofstream& out, const void* p, std::size_t len) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(len));
}
inline void write_u32(std::ofstream& out, std::uint32_t v) { write_bytes(out, &v, 4); }
inline void write_u64(std::ofstream& out, std::uint64_t v) { write_bytes(out, &v, 8); }

inline void read_bytes(std::ifstream& in, void* p, std::size_t len, const char* what) {
  in.read(static_cast<char*>(p), static_cast<std::streamsize>(len));
  if (in.gcount() != static_cast<std::streamsize>(len)) {
    throw FormatError(std::string("checkpoint truncated while reading ") + what);
  }
}
inline std::uint32_t read_u32(std::ifstream& in, const char* what) {
  std::uint32_t v = 0;
  read_bytes(in, &v, 4, what);
  return v;
}
inline std::uint64_t read_u64(std::ifstream& in, const char* what) {
  std::uint64_t v = 0;
  read_bytes(in, &v, 8, what);
  return v;
}

}  // namespace detail

/// Writes magic, version, length-prefixed canonical-JSON config, parameter
/// records (name, dtype tag, rank, dims, raw little-endian doubles), then the
/// training step and optional optimizer moments.
template <class S>
void save_checkpoint(ModelT<S>& model, const std::string& path, std::uint64_t step = 0,
                     AdamW* optimizer = nullptr) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw PathError("cannot open '" + path + "' for writing");
  detail::write_bytes(out, detail::kCheckpointMagic, 4);
  detail::write_u32(out, detail::kCheckpointVersion);
  const std::string config = model_config_to_json(model.config).dump();
  detail::write_u64(out, config.size());
  detail::write_bytes(out, config.data(), config.size());

  std::uint32_t count = 0;
  model.for_each_param([&](const std::string&, TensorT<S>&) { ++count; });
  detail::write_u32(out, count);
  model.for_each_param([&](const std::string& name, TensorT<S>& t) {
    detail::write_u32(out, static_cast<std::uint32_t>(name.size()));
    detail::write_bytes(out, name.data(), name.size());
    const std::uint8_t dtype = 1;  // f64
    detail::write_bytes(out, &dtype, 1);
    detail::write_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t dim : t.shape()) detail::write_u64(out, dim);
    std::vector<double> buf(t.data().begin(), t.data().end());
    detail::write_bytes(out, buf.data(), buf.size() * sizeof(double));
  });

  detail::write_u64(out, step);
  const std::uint8_t has_opt = optimizer != nullptr && !optimizer->moment1().empty() ? 1 : 0;
  detail::write_bytes(out, &has_opt, 1);
  if (has_opt != 0) {
    detail::write_u64(out, optimizer->step_count());
    for (const auto& m : optimizer->moment1()) {
      detail::write_bytes(out, m.data(), m.size() * sizeof(double));
    }
    for (const auto& v : optimizer->moment2()) {
      detail::write_bytes(out, v.data(), v.size() * sizeof(double));
    }
  }
  if (!out) throw PathError("write to '" + path + "' failed");
}

struct LoadedCheckpoint {
  Model model;
  std::uint64_t step = 0;
  bool has_optimizer = false;
  AdamW optimizer;
};

/// Reads a checkpoint into a freshly built model. Any structural mismatch
/// (magic, version, unknown name, wrong shape) is an error, never a silent
/// reshape.
inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PathError("cannot open '" + path + "' for reading");
  char magic[4];
  detail::read_bytes(in, magic, 4, "magic");
  if (std::memcmp(magic, detail::kCheckpointMagic, 4) != 0) {
    throw FormatError("not a checkpoint: bad magic bytes");
  }
  const std::uint32_t version = detail::read_u32(in, "version");
  if (version != detail::kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version) +
                      " (supported: " + std::to_string(detail::kCheckpointVersion) + ")");
  }
  const std::uint64_t config_len = detail::read_u64(in, "config length");
  std::string config_text(config_len, '\0');
  detail::read_bytes(in, config_text.data(), config_len, "config");
  nlohmann::json config_json;
  try {
    config_json = nlohmann::json::parse(config_text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint config is not valid JSON: ") + e.what());
  }

  LoadedCheckpoint loaded;
  loaded.model = Model::init(model_config_from_json(config_json));

  const std::uint32_t count = detail::read_u32(in, "parameter count");
  std::vector<std::pair<std::string, Tensor*>> params;
  loaded.model.for_each_param(
      [&](const std::string& name, Tensor& t) { params.emplace_back(name, &t); });
  if (count != params.size()) {
    throw FormatError("checkpoint has " + std::to_string(count) + " parameters, model wants " +
                      std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::uint32_t name_len = detail::read_u32(in, "parameter name length");
    std::string name(name_len, '\0');
    detail::read_bytes(in, name.data(), name_len, "parameter name");
    if (name != params[i].first) {
      throw FormatError("checkpoint parameter '" + name + "' where '" + params[i].first +
                        "' was expected");
    }
    std::uint8_t dtype = 0;
    detail::read_bytes(in, &dtype, 1, "dtype tag");
    if (dtype != 1) throw FormatError("unsupported dtype tag " + std::to_string(dtype));
    const std::uint32_t rank = detail::read_u32(in, "rank");
    std::vector<std::size_t> dims(rank);
    std::size_t numel = 1;
    for (auto& dim : dims) {
      dim = static_cast<std::size_t>(detail::read_u64(in, "dimension"));
      numel *= dim;
    }
    Tensor& t = *params[i].second;
    if (dims != t.shape()) {
      throw DimensionError("checkpoint parameter '" + name + "' has shape " +
                           detail::shape_str(dims) + ", model wants " +
                           detail::shape_str(t.shape()));
    }
    std::vector<double> buf(numel);
    detail::read_bytes(in, buf.data(), numel * sizeof(double), "parameter data");
    auto vals = t.mutable_data();
    std::copy(buf.begin(), buf.end(), vals.begin());
  }

  loaded.step = detail::read_u64(in, "training step");
  std::uint8_t has_opt = 0;
  detail::read_bytes(in, &has_opt, 1, "optimizer flag");
  loaded.has_optimizer = has_opt != 0;
  if (loaded.has_optimizer) {
    loaded.optimizer.set_step_count(detail::read_u64(in, "optimizer step"));
    auto& m1 = loaded.optimizer.moment1();
    auto& m2 = loaded.optimizer.moment2();
    m1.resize(params.size());
    m2.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      m1[i].resize(params[i].second->numel());
      detail::read_bytes(in, m1[i].data(), m1[i].size() * sizeof(double), "optimizer moment1");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      m2[i].resize(params[i].second->numel());
      detail::read_bytes(in, m2[i].data(), m2[i].size() * sizeof(double), "optimizer moment2");
    }
  }
  return loaded;
}

/// Loads checkpoint parameters into an existing model; the stored config must
/// produce the same parameter names and shapes (e.g. loading after changing d
/// is a dimension error, not a silent reshape).
template <class S>
void load_checkpoint_into(ModelT<S>& model, const std::string& path) {
  LoadedCheckpoint loaded = load_checkpoint(path);
  std::vector<std::pair<std::string, Tensor*>> src;
  loaded.model.for_each_param(
      [&](const std::string& name, Tensor& t) { src.emplace_back(name, &t); });
  std::vector<std::pair<std::string, TensorT<S>*>> dst;
  model.for_each_param(
      [&](const std::string& name, TensorT<S>& t) { dst.emplace_back(name, &t); });
  if (src.size() != dst.size()) {
    throw FormatError("checkpoint has " + std::to_string(src.size()) +
                      " parameters, model wants " + std::to_string(dst.size()));
  }
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src[i].first != dst[i].first) {
      throw FormatError("checkpoint parameter '" + src[i].first + "' where '" + dst[i].first +
                        "' was expected");
    }
    if (src[i].second->shape() != dst[i].second->shape()) {
      throw DimensionError("checkpoint parameter '" + src[i].first + "' has shape " +
                           detail::shape_str(src[i].second->shape()) + ", model wants " +
                           detail::shape_str(dst[i].second->shape()));
    }
    auto vals = dst[i].second->mutable_data();
    std::copy(src[i].second->data().begin(), src[i].second->data().end(), vals.begin());
  }
}

}  // namespace colt5
