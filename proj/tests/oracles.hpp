// Copyright 2026 The colt5 Authors
// SPDX-License-Identifier: Apache-2.0
//
// Test-side reference implementations, deliberately written in the most
// direct way possible (and in extended precision where it sharpens the
// comparison). They share no code with the library under test.

#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "colt5/tensor.hpp"

namespace oracle {

/// Plain ijk triple loop, no blocking, no accumulation tricks.
inline std::vector<double> naive_matmul(const std::vector<double>& a, const std::vector<double>& b,
                                        std::size_t r, std::size_t k, std::size_t c) {
  std::vector<double> out(r * c, 0.0);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) acc += a[i * k + t] * b[t * c + j];
      out[i * c + j] = acc;
    }
  return out;
}

/// exp/sum softmax of one vector in long double.
inline std::vector<double> softmax_ld(const std::vector<double>& x) {
  long double denom = 0.0L;
  std::vector<long double> e(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    e[i] = expl(static_cast<long double>(x[i]));
    denom += e[i];
  }
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = static_cast<double>(e[i] / denom);
  return out;
}

/// Direct-formula row normalization: x / sqrt(mean(x^2) + 1e-6) * scale.
inline std::vector<double> rms_norm_row_ld(const std::vector<double>& row,
                                           const std::vector<double>& scale) {
  long double ms = 0.0L;
  for (double v : row) ms += static_cast<long double>(v) * v;
  ms /= static_cast<long double>(row.size());
  const long double inv = 1.0L / sqrtl(ms + 1e-6L);
  std::vector<double> out(row.size());
  for (std::size_t j = 0; j < row.size(); ++j) {
    out[j] = static_cast<double>(static_cast<long double>(row[j]) * inv * scale[j]);
  }
  return out;
}

/// High-precision reference for the entropy-regularized top-k weights:
/// a_i = sigma((s_i - lambda) / eps) with lambda solved so sum(a) = k,
/// by long-double bisection run to near machine precision.
inline std::vector<double> soft_topk_ld(const std::vector<double>& s, std::size_t k, double eps) {
  const std::size_t n = s.size();
  if (k > n) throw std::invalid_argument("soft_topk_ld: k > n");
  if (k == n) return std::vector<double>(n, 1.0);
  const long double e = static_cast<long double>(eps);
  long double smin = s[0], smax = s[0];
  for (double v : s) {
    smin = std::min(smin, static_cast<long double>(v));
    smax = std::max(smax, static_cast<long double>(v));
  }
  // With lambda = smin - e*ln(k/(n-k)) every term is >= the equal-score value,
  // so the sum is >= k; symmetrically for smax. The root is always inside.
  const long double shift = e * logl(static_cast<long double>(k) / static_cast<long double>(n - k));
  long double lo = smin + shift, hi = smax + shift;
  auto total = [&](long double lam) {
    long double t = 0.0L;
    for (double v : s) t += 1.0L / (1.0L + expl(-(static_cast<long double>(v) - lam) / e));
    return t;
  };
  for (int it = 0; it < 200; ++it) {
    const long double mid = 0.5L * (lo + hi);
    if (total(mid) > static_cast<long double>(k)) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  const long double lam = 0.5L * (lo + hi);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = static_cast<double>(1.0L / (1.0L + expl(-(static_cast<long double>(s[i]) - lam) / e)));
  }
  return out;
}

/// Pearson correlation by the direct covariance formula in long double.
/// Returns 0 when either vector has zero variance.
inline double pearson_ld(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  long double mx = 0.0L, my = 0.0L;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  long double sxy = 0.0L, sxx = 0.0L, syy = 0.0L;
  for (std::size_t i = 0; i < n; ++i) {
    const long double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0L || syy == 0.0L) return 0.0;
  return static_cast<double>(sxy / sqrtl(sxx * syy));
}

// ---------------------------------------------------------------------------
// Central finite-difference gradient check.
//
// `loss_fn` must rebuild the scalar loss from the current contents of
// `leaves` on every call. The analytic pass runs once under a fresh graph;
// the numeric pass perturbs each leaf element by +-h with no graph active.
// ---------------------------------------------------------------------------
struct GradCheckResult {
  double max_rel_err = 0.0;
  std::size_t checked = 0;
};

inline GradCheckResult check_gradients(const std::function<colt5::Tensor()>& loss_fn,
                                       std::vector<colt5::Tensor> leaves, double h = 1e-5,
                                       double denom_floor = 1e-6) {
  std::vector<std::vector<double>> analytic;
  {
    colt5::Graph g;
    colt5::GraphScope scope(g);
    colt5::Tensor loss = loss_fn();
    g.backward(loss);
    for (auto& leaf : leaves) {
      colt5::Tensor gt = g.grad(leaf);
      analytic.emplace_back(gt.data().begin(), gt.data().end());
    }
  }  // graph destroyed -> leaves unfrozen, safe to perturb

  GradCheckResult res;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    auto vals = leaves[li].mutable_data();
    for (std::size_t e = 0; e < vals.size(); ++e) {
      const double orig = vals[e];
      vals[e] = orig + h;
      const double up = loss_fn().item();
      vals[e] = orig - h;
      const double dn = loss_fn().item();
      vals[e] = orig;
      const double numeric = (up - dn) / (2.0 * h);
      const double ana = analytic[li][e];
      const double rel = std::abs(ana - numeric) /
                         std::max({std::abs(ana), std::abs(numeric), denom_floor});
      res.max_rel_err = std::max(res.max_rel_err, rel);
      ++res.checked;
    }
  }
  return res;
}

}  // namespace oracle
