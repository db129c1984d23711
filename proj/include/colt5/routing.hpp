// Copyright 2026 The colt5 Authors
// SPDX-License-Identifier: Apache-2.0
//
// Learned token routing: scoring against a router embedding, differentiable
// soft top-k normalization (weights in (0,1) summing to k), and deterministic
// hard selection with an optional training-time expansion of the kept set.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "colt5/errors.hpp"
#include "colt5/rational.hpp"
#include "colt5/tensor.hpp"

namespace colt5 {

template <class S>
struct RouterT {
  TensorT<S> u;  // learned embedding, shape [d]

  static RouterT init(Rng& rng, std::size_t d) {
    RouterT r;
    r.u = TensorT<S>::randn(rng, {d}, 1.0 / std::sqrt(static_cast<double>(d)));
    r.u.set_requires_grad(true);
    return r;
  }
};

using Router = RouterT<double>;

struct SoftTopKConfig {
  double epsilon = 1.0;
  int iterations = 50;
  Rational train_expansion{9, 8};

  void validate() const {
    if (!(epsilon > 0)) throw ContractError("soft top-k: epsilon must be positive");
    if (iterations < 1) throw ContractError("soft top-k: iterations must be >= 1");
    if (train_expansion < Rational(1)) {
      throw ContractError("soft top-k: train_expansion must be >= 1");
    }
  }
};

/// Per-router output: hard-selected indices plus the full soft-weight vector,
/// zeroed off the selected set (but still differentiable on it).
template <class S>
struct RoutingDecisionT {
  std::vector<int> selected;  // sorted ascending, no duplicates
  TensorT<S> weights;         // [n]; zero off `selected`
  TensorT<S> raw_scores;      // [n]
  std::size_t k_target = 0;
  double lambda = 0.0;  // solved dual threshold (meaningless when full)
  bool full = false;    // k == n: weights saturate to exact ones

  std::size_t n() const { return weights.numel(); }
};

using RoutingDecision = RoutingDecisionT<double>;

/// A routing decision with the data-dependent discrete parts (selection set
/// and dual threshold) pinned, so a forward pass can be replayed as a smooth
/// function of the parameters — e.g. for finite-difference gradient checks.
struct FrozenRouting {
  std::vector<int> selected;
  double lambda = 0.0;
  bool full = false;
  std::size_t k_target = 0;
};

/// s[i] = dot(X[i], u). Differentiable with respect to both inputs.
template <class S>
TensorT<S> route_scores(const TensorT<S>& x, const RouterT<S>& router) {
  if (x.rank() != 2 || router.u.rank() != 1 || x.shape()[1] != router.u.shape()[0]) {
    throw DimensionError("route_scores: X " + detail::shape_str(x.shape()) + " vs u " +
                         detail::shape_str(router.u.shape()));
  }
  TensorT<S> col = matmul(x, reshape(router.u, {router.u.shape()[0], 1}));
  return reshape(col, {x.shape()[0]});
}

namespace detail {

/// Solves sum_i sigma((s_i - lambda) / eps) == k for the dual lambda by
/// bisection. At lambda = min(s) + eps*ln((n-k)/k) every term is at least
/// k/n, so the sum is >= k; at max(s) + the same shift every term is at most
/// k/n. The root therefore always lies inside this bracket.
template <class S>
double soft_topk_dual(const S* s, std::size_t n, std::size_t k, const SoftTopKConfig& cfg) {
  // Summation runs over sorted scores so the solved dual — and therefore the
  // weights — are exactly permutation-equivariant, not just up to roundoff.
  std::vector<double> sorted(s, s + n);
  std::sort(sorted.begin(), sorted.end());
  const double smin = sorted.front(), smax = sorted.back();
  const double shift =
      cfg.epsilon * std::log(static_cast<double>(n - k) / static_cast<double>(k));
  double lo = smin + shift, hi = smax + shift;
  auto weight_sum = [&](double lam) {
    double total = 0;
    for (double v : sorted) {
      const double z = (v - lam) / cfg.epsilon;
      total += z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    }
    return total;
  };
  for (int it = 0; it < cfg.iterations; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (weight_sum(mid) > static_cast<double>(k)) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

}  // namespace detail

/// Weights a_i = sigma((s_i - lambda)/eps) for a given dual threshold. The
/// threshold enters as a constant, so the recorded gradient is exactly the
/// lambda-frozen one: d a_i / d s_j = delta_ij * a_i (1 - a_i) / eps.
template <class S>
TensorT<S> soft_topk_from_lambda(const TensorT<S>& s, double lambda,
                                 const SoftTopKConfig& cfg) {
  return sigmoid(smul(sadd(s, static_cast<S>(-lambda)), static_cast<S>(1.0 / cfg.epsilon)));
}

/// Entropy-regularized top-k weights with the dual solved so that
/// sum(a) == k. Optionally reports the solved dual through `lambda_out`
/// (left untouched in the saturated k == n case).
template <class S>
TensorT<S> soft_topk_normalize(const TensorT<S>& s, std::size_t k, const SoftTopKConfig& cfg,
                               double* lambda_out = nullptr) {
  cfg.validate();
  if (s.rank() != 1) {
    throw DimensionError("soft_topk_normalize: expected rank-1 scores, got " +
                         detail::shape_str(s.shape()));
  }
  const std::size_t n = s.numel();
  if (k < 1 || k > n) {
    throw ContractError("soft_topk_normalize: k = " + std::to_string(k) +
                        " outside [1, " + std::to_string(n) + "]");
  }
  for (S v : s.data()) {
    if (!std::isfinite(static_cast<double>(v))) {
      throw NumericError("soft_topk_normalize: non-finite score");
    }
  }
  if (k == n) {
    // Saturated constraint: exactly all ones, with no gradient (consistent
    // with a_i(1-a_i)/eps == 0 at a_i == 1).
    return TensorT<S>::full({n}, S(1));
  }
  const double lambda = detail::soft_topk_dual(s.data().data(), n, k, cfg);
  if (lambda_out != nullptr) *lambda_out = lambda;
  return soft_topk_from_lambda(s, lambda, cfg);
}

/// Number of tokens kept by hard selection: k in eval mode, otherwise
/// round-half-up(k * train_expansion), capped at n.
inline std::size_t selection_count(std::size_t n, std::size_t k, bool training,
                                   const SoftTopKConfig& cfg) {
  if (!training) return k;
  const Rational expanded = cfg.train_expansion * Rational(static_cast<std::int64_t>(k));
  // round-half-up(p/q) == floor((2p + q) / (2q)) for positive p, q
  const std::int64_t rounded = (2 * expanded.num() + expanded.den()) / (2 * expanded.den());
  return std::min(n, static_cast<std::size_t>(rounded));
}

/// Indices of the highest-scoring tokens, ties broken toward lower index,
/// result sorted ascending.
template <class S>
std::vector<int> select_topk(const TensorT<S>& s, std::size_t k, bool training,
                             const SoftTopKConfig& cfg) {
  if (s.rank() != 1) {
    throw DimensionError("select_topk: expected rank-1 scores, got " +
                         detail::shape_str(s.shape()));
  }
  const std::size_t n = s.numel();
  if (k < 1 || k > n) {
    throw ContractError("select_topk: k = " + std::to_string(k) + " outside [1, " +
                        std::to_string(n) + "]");
  }
  const std::size_t k_sel = selection_count(n, k, training, cfg);
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  const auto* p = s.data().data();
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (p[a] != p[b]) return p[a] > p[b];
    return a < b;
  });
  order.resize(k_sel);
  std::sort(order.begin(), order.end());
  return order;
}

/// Full routing pass: score, hard-select, soft-normalize, and mask the soft
/// weights to the selected set so gradient reaches X and u only through
/// selected tokens.
template <class S>
RoutingDecisionT<S> route(const TensorT<S>& x, const RouterT<S>& router, std::size_t k,
                          bool training, const SoftTopKConfig& cfg) {
  TensorT<S> scores = route_scores(x, router);
  std::vector<int> selected = select_topk(scores, k, training, cfg);
  RoutingDecisionT<S> decision;
  decision.full = (k == scores.numel());
  TensorT<S> soft = soft_topk_normalize(scores, k, cfg, &decision.lambda);
  std::vector<std::uint8_t> off(soft.numel(), 1);
  for (int i : selected) off[static_cast<std::size_t>(i)] = 0;
  decision.selected = std::move(selected);
  decision.weights = masked_fill(soft, off, S(0));
  decision.raw_scores = std::move(scores);
  decision.k_target = k;
  return decision;
}

/// Replays a pinned routing decision as a smooth function of X and u: the
/// selection set and dual threshold come from `frozen`, while the scores and
/// sigmoid weights are recomputed differentiably.
template <class S>
RoutingDecisionT<S> route_frozen(const TensorT<S>& x, const RouterT<S>& router,
                                 const FrozenRouting& frozen, const SoftTopKConfig& cfg) {
  cfg.validate();
  TensorT<S> scores = route_scores(x, router);
  RoutingDecisionT<S> decision;
  decision.selected = frozen.selected;
  decision.k_target = frozen.k_target;
  decision.lambda = frozen.lambda;
  decision.full = frozen.full;
  if (frozen.full) {
    decision.weights = TensorT<S>::full({scores.numel()}, S(1));
  } else {
    TensorT<S> soft = soft_topk_from_lambda(scores, frozen.lambda, cfg);
    std::vector<std::uint8_t> off(soft.numel(), 1);
    for (int i : frozen.selected) off[static_cast<std::size_t>(i)] = 0;
    decision.weights = masked_fill(soft, off, S(0));
  }
  decision.raw_scores = std::move(scores);
  return decision;
}

/// Ablation baseline: split the sequence into k equal-length blocks and take
/// the first token of each, with weight 1.
template <class S>
RoutingDecisionT<S> route_static_blocks(const TensorT<S>& x, std::size_t k) {
  const std::size_t n = x.shape()[0];
  if (k < 1 || k > n) {
    throw ContractError("route_static_blocks: k = " + std::to_string(k) + " outside [1, " +
                        std::to_string(n) + "]");
  }
  RoutingDecisionT<S> decision;
  for (std::size_t b = 0; b < k; ++b) {
    decision.selected.push_back(static_cast<int>(b * n / k));
  }
  std::vector<S> w(n, S(0));
  for (int i : decision.selected) w[static_cast<std::size_t>(i)] = S(1);
  decision.weights = TensorT<S>::from_data({n}, std::move(w));
  decision.raw_scores = TensorT<S>::zeros({n});
  decision.k_target = k;
  return decision;
}

/// Checks every RoutingDecision invariant; throws ContractError on violation.
template <class S>
void validate_decision(const RoutingDecisionT<S>& d, std::size_t n) {
  if (d.weights.numel() != n || d.raw_scores.numel() != n) {
    throw ContractError("routing decision: length " + std::to_string(d.weights.numel()) +
                        " does not match sequence length " + std::to_string(n));
  }
  std::vector<std::uint8_t> seen(n, 0);
  int prev = -1;
  for (int i : d.selected) {
    if (i < 0 || static_cast<std::size_t>(i) >= n) {
      throw ContractError("routing decision: selected index " + std::to_string(i) +
                          " out of range");
    }
    if (i <= prev) throw ContractError("routing decision: selected not strictly ascending");
    if (seen[static_cast<std::size_t>(i)]++) {
      throw ContractError("routing decision: duplicate selected index");
    }
    prev = i;
  }
  const auto w = d.weights.data();
  for (std::size_t i = 0; i < n; ++i) {
    if (!seen[i] && w[i] != S(0)) {
      throw ContractError("routing decision: nonzero weight off the selected set at " +
                          std::to_string(i));
    }
    if (seen[i] && !(w[i] > S(0) && w[i] <= S(1))) {
      throw ContractError("routing decision: selected weight outside (0, 1] at " +
                          std::to_string(i));
    }
  }
}

}  // namespace colt5
