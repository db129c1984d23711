// Copyright 2026 The colt5 Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensors with tape-based reverse-mode differentiation.
// 64-bit scalars are the default throughout the library; the float
// instantiation exists for opt-in reduced-precision training.

#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "colt5/errors.hpp"
#include "colt5/rng.hpp"

namespace colt5 {

// ---------------------------------------------------------------------------
// Multiply-add counters.
//
// Counts the matrix-product and attention score/value multiply-adds of every
// forward computation on the current thread, matching the one-FLOP-per-
// multiply-add convention of the analytic cost model. Elementwise work,
// normalization, and backward passes are not counted.
// ---------------------------------------------------------------------------
namespace macs {

inline thread_local bool enabled = false;
inline thread_local std::uint64_t count = 0;

inline void add(std::uint64_t n) {
  if (enabled) count += n;
}

/// RAII scope that zeroes and enables the counter, restoring on exit.
class CounterScope {
 public:
  CounterScope() : prev_enabled_(enabled), prev_count_(count) {
    enabled = true;
    count = 0;
  }
  ~CounterScope() {
    enabled = prev_enabled_;
    count = prev_count_;
  }
  std::uint64_t value() const { return count; }

 private:
  bool prev_enabled_;
  std::uint64_t prev_count_;
};

}  // namespace macs

namespace detail {

inline std::string shape_str(const std::vector<std::size_t>& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

inline std::size_t shape_numel(const std::vector<std::size_t>& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

}  // namespace detail

template <class S>
class GraphT;

template <class S>
struct TensorDataT {
  std::vector<std::size_t> shape;
  std::vector<S> v;
  bool requires_grad = false;
  // Number of live graphs holding this tensor as a recorded node. Data is
  // immutable while nonzero. Mutable: freezing is bookkeeping, not data.
  mutable std::atomic<int> freeze_count{0};
};

// ---------------------------------------------------------------------------
// TensorT — value-semantic handle to shared, shape-tagged numeric storage.
// ---------------------------------------------------------------------------
template <class S>
class TensorT {
 public:
  using Scalar = S;

  TensorT() = default;

  static TensorT zeros(std::vector<std::size_t> shape) {
    return full(std::move(shape), S(0));
  }

  static TensorT full(std::vector<std::size_t> shape, S value) {
    TensorT t;
    t.d_ = std::make_shared<TensorDataT<S>>();
    t.d_->shape = std::move(shape);
    t.d_->v.assign(detail::shape_numel(t.d_->shape), value);
    return t;
  }

  static TensorT from_data(std::vector<std::size_t> shape, std::vector<S> data) {
    if (detail::shape_numel(shape) != data.size()) {
      throw DimensionError("from_data: shape " + detail::shape_str(shape) + " wants " +
                           std::to_string(detail::shape_numel(shape)) + " values, got " +
                           std::to_string(data.size()));
    }
    TensorT t;
    t.d_ = std::make_shared<TensorDataT<S>>();
    t.d_->shape = std::move(shape);
    t.d_->v = std::move(data);
    return t;
  }

  static TensorT scalar(S value) { return full({1}, value); }

  static TensorT randn(Rng& rng, std::vector<std::size_t> shape, double stddev = 1.0) {
    TensorT t = zeros(std::move(shape));
    for (auto& x : t.d_->v) x = static_cast<S>(rng.normal(0.0, stddev));
    return t;
  }

  bool defined() const { return d_ != nullptr; }
  const std::vector<std::size_t>& shape() const { return d_->shape; }
  std::size_t rank() const { return d_->shape.size(); }
  std::size_t numel() const { return d_->v.size(); }
  std::size_t dim(std::size_t i) const { return d_->shape[i]; }
  std::size_t rows() const { return d_->shape[0]; }
  std::size_t cols() const { return d_->shape.size() > 1 ? d_->shape[1] : 1; }

  std::span<const S> data() const { return {d_->v.data(), d_->v.size()}; }

  /// Mutable access; refused while any live graph has recorded this tensor.
  std::span<S> mutable_data() {
    if (d_->freeze_count.load(std::memory_order_acquire) != 0) {
      throw ContractError("tensor data is frozen by a recorded graph");
    }
    return {d_->v.data(), d_->v.size()};
  }

  S item() const {
    if (numel() != 1) {
      throw ContractError("item(): tensor has " + std::to_string(numel()) + " elements");
    }
    return d_->v[0];
  }

  S at(std::size_t i) const { return d_->v[i]; }
  S at(std::size_t i, std::size_t j) const { return d_->v[i * d_->shape[1] + j]; }

  bool requires_grad() const { return d_ && d_->requires_grad; }
  TensorT& set_requires_grad(bool b) {
    d_->requires_grad = b;
    return *this;
  }

  /// Stable identity of the underlying storage.
  const TensorDataT<S>* node() const { return d_.get(); }
  TensorDataT<S>* node() { return d_.get(); }

 private:
  std::shared_ptr<TensorDataT<S>> d_;
};

using Tensor = TensorT<double>;
using Tensor32 = TensorT<float>;

// ---------------------------------------------------------------------------
// GraphT — append-only tape of recorded operations. Appending order is a
// topological order by construction; backward replays it in reverse and
// accumulates gradients per node.
// ---------------------------------------------------------------------------
template <class S>
class GraphT {
 public:
  GraphT() = default;
  GraphT(const GraphT&) = delete;
  GraphT& operator=(const GraphT&) = delete;
  ~GraphT() { reset(); }

  /// Registers a tensor as a graph node (freezing its data) and returns its id.
  int node_id(const TensorT<S>& t) {
    auto [it, inserted] = ids_.try_emplace(t.node(), static_cast<int>(nodes_.size()));
    if (inserted) {
      nodes_.push_back(t);
      t.node()->freeze_count.fetch_add(1, std::memory_order_acq_rel);
    }
    return it->second;
  }

  void push_op(std::function<void(GraphT&)> backward) { ops_.push_back(std::move(backward)); }

  std::size_t num_ops() const { return ops_.size(); }
  std::size_t num_nodes() const { return nodes_.size(); }

  /// Reverse-mode sweep from a scalar loss. Gradients of every recorded node
  /// are accumulated; leaves queried via grad().
  void backward(const TensorT<S>& loss) {
    if (loss.numel() != 1) {
      throw ContractError("backward: loss must be scalar, got shape " +
                          detail::shape_str(loss.shape()));
    }
    auto it = ids_.find(loss.node());
    if (it == ids_.end()) {
      throw ContractError("backward: loss is not a node of this graph");
    }
    grads_.assign(nodes_.size(), {});
    grads_[static_cast<std::size_t>(it->second)] = {S(1)};
    for (auto op = ops_.rbegin(); op != ops_.rend(); ++op) (*op)(*this);
  }

  /// Gradient of a recorded tensor; zeros if untouched by the sweep.
  TensorT<S> grad(const TensorT<S>& t) const {
    auto it = ids_.find(t.node());
    if (it == ids_.end()) {
      throw ContractError("grad: tensor is not a node of this graph");
    }
    const auto& buf = grads_[static_cast<std::size_t>(it->second)];
    if (buf.empty()) return TensorT<S>::zeros(t.shape());
    return TensorT<S>::from_data(t.shape(), buf);
  }

  bool contains(const TensorT<S>& t) const { return ids_.count(t.node()) != 0; }

  /// Accumulation buffer for a node, allocated on first touch.
  std::vector<S>& grad_buffer(int id) {
    auto& buf = grads_[static_cast<std::size_t>(id)];
    if (buf.empty()) buf.assign(nodes_[static_cast<std::size_t>(id)].numel(), S(0));
    return buf;
  }

  /// Gradient flowing into a node, or nullptr if nothing has reached it.
  const std::vector<S>* incoming(int id) const {
    const auto& buf = grads_[static_cast<std::size_t>(id)];
    return buf.empty() ? nullptr : &buf;
  }

  /// Drops all records and unfreezes every registered tensor.
  void reset() {
    for (auto& t : nodes_) t.node()->freeze_count.fetch_sub(1, std::memory_order_acq_rel);
    nodes_.clear();
    ids_.clear();
    ops_.clear();
    grads_.clear();
  }

 private:
  std::vector<std::function<void(GraphT&)>> ops_;
  std::vector<TensorT<S>> nodes_;
  std::unordered_map<const TensorDataT<S>*, int> ids_;
  std::vector<std::vector<S>> grads_;
};

using Graph = GraphT<double>;
using Graph32 = GraphT<float>;

template <class S>
inline GraphT<S>*& current_graph() {
  static thread_local GraphT<S>* g = nullptr;
  return g;
}

/// RAII recording scope: while alive, differentiable ops on this thread
/// record into the given graph.
template <class S>
class GraphScopeT {
 public:
  explicit GraphScopeT(GraphT<S>& g) : prev_(current_graph<S>()) { current_graph<S>() = &g; }
  ~GraphScopeT() { current_graph<S>() = prev_; }
  GraphScopeT(const GraphScopeT&) = delete;
  GraphScopeT& operator=(const GraphScopeT&) = delete;

 private:
  GraphT<S>* prev_;
};

using GraphScope = GraphScopeT<double>;

namespace detail {

template <class S>
struct Recorder {
  GraphT<S>* g = nullptr;

  /// Active iff a graph scope is open and some input carries gradient.
  static Recorder begin(std::initializer_list<const TensorT<S>*> inputs) {
    Recorder r;
    GraphT<S>* g = current_graph<S>();
    if (!g) return r;
    bool any = false;
    for (const auto* t : inputs) any = any || t->requires_grad();
    if (any) r.g = g;
    return r;
  }

  explicit operator bool() const { return g != nullptr; }

  int input(const TensorT<S>& t) { return g->node_id(t); }

  /// Registers the op's result; call before building the backward closure so
  /// the returned id can be captured by value.
  int output(TensorT<S>& out) {
    out.set_requires_grad(true);
    return g->node_id(out);
  }

  void record(std::function<void(GraphT<S>&)> backward) { g->push_op(std::move(backward)); }
};

template <class S>
inline void check_same_shape(const char* op, const TensorT<S>& a, const TensorT<S>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " differ");
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) {
  detail::check_same_shape("add", a, b);
  TensorT<S> out = TensorT<S>::zeros(a.shape());
  auto* o = out.mutable_data().data();
  const auto* pa = a.data().data();
  const auto* pb = b.data().data();
  for (std::size_t i = 0; i < a.numel(); ++i) o[i] = pa[i] + pb[i];
  if (auto rec = detail::Recorder<S>::begin({&a, &b})) {
    const int ia = rec.input(a), ib = rec.input(b);
    const bool ga = a.requires_grad(), gb = b.requires_grad();
    const int io = rec.output(out);
    rec.record([=](GraphT<S>& g) {
      const auto* go = g.incoming(io);
      if (!go) return;
      if (ga) {
        auto& da = g.grad_buffer(ia);
        for (std::size_t i = 0; i < da.size(); ++i) da[i] += (*go)[i];
      }
      if (gb) {
        auto& db = g.grad_buffer(ib);
        for (std::size_t i = 0; i < db.size(); ++i) db[i] += (*go)[i];
      }
    });
  }
  return out;
}

template <class S>
TensorT<S> sub(const TensorT<S>& a, const TensorT<S>& b) {
  detail::check_same_shape("sub", a, b);
  TensorT<S> out = TensorT<S>::zeros(a.shape());
  auto* o = out.mutable_data().data();
  const auto* pa = a.data().data();
  const auto* pb = b.data().data();
  for (std::size_t i = 0; i < a.numel(); ++i) o[i] = pa[i] - pb[i];
  if (auto rec = detail::Recorder<S>::begin({&a, &b})) {
    const int ia = rec.input(a), ib = rec.input(b);
    const bool ga = a.requires_grad(), gb = b.requires_grad();
    const int io = rec.output(out);
    rec.record([=](GraphT<S>& g) {
      const auto* go = g.incoming(io);
      if (!go) return;
      if (ga) {
        auto& da = g.grad_buffer(ia);
        for (std::size_t i = 0; i < da.size(); ++i) da[i] += (*go)[i];
      }
      if (gb) {
        auto& db = g.grad_buffer(ib);
        for (std::size_t i = 0; i < db.size(); ++i) db[i] -= (*go)[i];
      }
    });
  }
  return out;
}

template <class S>
TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b) {
  detail::check_same_shape("mul", a, b);
  TensorT<S> out = TensorT<S>::zeros(a.shape());
  auto* o = out.mutable_data().data();
  const auto* pa = a.data().data();
  const auto* pb = b.data().data();
  for (std::size_t i = 0; i < a.numel(); ++i) o[i] = pa[i] * pb[i];
  if (auto rec = detail::Recorder<S>::begin({&a, &b})) {
    const int ia = rec.input(a), ib = rec.input(b);
    const bool ga = a.requires_grad(), gb = b.requires_grad();
    const int io = rec.output(out);
    rec.record([=](GraphT<S>& g) {
      const auto* go = g.incoming(io);
      if (!go) return;
      const auto* va = a.data().data();
      const auto* vb = b.data().data();
      if (ga) {
        auto& da = g.grad_buffer(ia);
        for (std::size_t i = 0; i < da.size(); ++i) da[i] += (*go)[i] * vb[i];
      }
      if (gb) {
        auto& db = g.grad_buffer(ib);
        for (std::size_t i = 0; i < db.size(); ++i) db[i] += (*go)[i] * va[i];
      }
    });
  }
  return out;
}

template <class S>
TensorT<S> smul(const TensorT<S>& a, S c) {
  TensorT<S> out = TensorT<S>::zeros(a.shape());
  auto* o = out.mutable_data().data();
  const auto* pa = a.data().data();
  for (std::size_t i = 0; i < a.numel(); ++i) o[i] = pa[i] * c;
  if (auto rec = detail::Recorder<S>::begin({&a})) {
    const int ia = rec.input(a);
    const int io = rec.output(out);
    rec.record([=](GraphT<S>& g) {
      const auto* go = g.incoming(io);
      if (!go) return;
      auto& da = g.grad_buffer(ia);
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += (*go)[i] * c;
    });
  }
  return out;
}

template <class S>
TensorT<S> sadd(const TensorT<S>& a, S c) {
  TensorT<S> out = TensorT<S>::zeros(a.shape());
  auto* o = out.mutable_data().data();
  const auto* pa = a.data().data();
  for (std::size_t i = 0; i < a.numel(); ++i) o[i] = pa[i] + c;
  if (auto rec = detail::Recorder<S>::begin({&a})) {
    const int ia = rec.input(a);
    const int io = rec.output(out);
    rec.record([=](GraphT<S>& g) {
      const auto* go = g.incoming(io);
      if (!go) return;
      auto& da = g.grad_buffer(ia);
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += (*go)[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Matrix product and layout ops
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw DimensionError("matmul: incompatible shapes " + detail::shape_str(a.shape()) + " and " +
                         detail::shape_str(b.shape()));
  }
  const std::size_t r = a.shape()[0], k = a.shape()[1], c = b.shape()[1];
  TensorT<S> out = TensorT<S>::zeros({r, c});
  {
    auto* o = out.mutable_data().data();
    const auto* pa = a.data().data();
    const auto* pb = b.data().data();
    for (std::size_t i = 0; i < r; ++i) {
      auto* orow = o + i * c;
      const auto* arow = pa + i * k;
      for (std::size_t kk = 0; kk < k; ++kk) {
        const S av = arow[kk];
        const auto* brow = pb + kk * c;
        for (std::size_t j = 0; j < c; ++j) orow[j] += av * brow[j];
      }
    }
  }
  macs::add(static_cast<std::uint64_t>(r) * k * c);
  if (auto rec = detail::Recorder<S>::begin({&a, &b})) {
    const int ia = rec.input(a), ib = rec.input(b);
    const bool ga = a.requires_grad(), gb = b.requires_grad();
    const int io = rec.output(out);
    rec.record([=](GraphT<S>& g) {
      const auto* go = g.incoming(io);
      if (!go) return;
      const auto* pa = a.data().data();
      const auto* pb = b.data().data();
      const auto* pg = go->data();
      if (ga) {
        // dA[i,kk] += sum_j dC[i,j] * B[kk,j]
        auto& da = g.grad_buffer(ia);
        for (std::size_t i = 0; i < r; ++i) {
          const auto* grow = pg + i * c;
          auto* darow = da.data() + i * k;
          for (std::size_t kk = 0; kk < k; ++kk) {
            const auto* brow = pb + kk * c;
            S acc = 0;
            for (std::size_t j = 0; j < c; ++j) acc += grow[j] * brow[j];
            darow[kk] += acc;
          }
        }
      }
      if (gb) {
        // dB[kk,j] += sum_i A[i,kk] * dC[i,j]
        auto& db = g.grad_buffer(ib);
        for (std::size_t i = 0; i < r; ++i) {
          const auto* arow = pa + i * k;
          const auto* grow = pg + i * c;
          for (std::size_t kk = 0; kk < k; ++kk) {
            const S av = arow[kk];
            auto* dbrow = db.data() + kk * c;
            for (std::size_t j = 0; j < c; ++j) dbrow[j] += av * grow[j];
          }
        }
      }
    });
  }
  return out;
}

template <class S>
TensorT<S> transpose(const TensorT<S>& a) {
  if (a.rank() != 2) {
    throw DimensionError("transpose: expected rank-2, got " + detail::shape_str(a.shape()));
  }
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  TensorT<S> out = TensorT<S>::zeros({c, r});
  {
    auto* o = out.mutable_data().data();
    const auto* pa = a.data().data();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) o[j * r + i] = pa[i * c + j];
  }
  if (auto rec = detail::Recorder<S>::begin({&a})) {
    const int ia = rec.input(a);
    const int io = rec.output(out);
    rec.record([=](GraphT<S>& g) {
      const auto* go = g.incoming(io);
      if (!go) return;
      auto& da = g.grad_buffer(ia);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) da[i * c + j] += (*go)[j * r + i];
    });
  }
  return out;
}

template <class S>
TensorT<S> reshape(const TensorT<S>& a, std::vector<std::size_t> shape) {
  if (detail::shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: " + detail::shape_str(a.shape()) + " to " +
                         detail::shape_str(shape) + " changes element count");
  }
  TensorT<S> out = TensorT<S>::from_data(std::move(shape),
                                         std::vector<S>(a.data().begin(), a.data().end()));
  if (auto rec = detail::Recorder<S>::begin({&a})) {
    const int ia = rec.input(a);
    const int io = rec.output(out);
    rec.record([=](GraphT<S>& g) {
      const auto* go = g.incoming(io);
      if (!go) return;
      auto& da = g.grad_buffer(ia);
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += (*go)[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Nonlinearities
// ---------------------------------------------------------------------------

namespace detail {
// tanh-approximation constants shared by forward and backward (and therefore
// by the finite-difference checks).
constexpr double kGeluC0 = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluC1 = 0.044715;
}  // namespace detail

template <class S>
TensorT<S> gelu(const TensorT<S>& a) {
  TensorT<S> out = TensorT<S>::zeros(a.shape());
  auto* o = out.mutable_data().data();
  const auto* pa = a.data().data();
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double x = static_cast<double>(pa[i]);
    const double t = std::tanh(detail::kGeluC0 * (x + detail::kGeluC1 * x * x * x));
    o[i] = static_cast<S>(0.5 * x * (1.0 + t));
  }
  if (auto rec = detail::Recorder<S>::begin({&a})) {
    const int ia = rec.input(a);
    const int io = rec.output(out);
    rec.record([=](GraphT<S>& g) {
      const auto* go = g.incoming(io);
      if (!go) return;
      auto& da = g.grad_buffer(ia);
      const auto* pa2 = a.data().data();
      for (std::size_t i = 0; i < da.size(); ++i) {
        const double x = static_cast<double>(pa2[i]);
        const double inner = detail::kGeluC0 * (x + detail::kGeluC1 * x * x * x);
        const double t = std::tanh(inner);
        const double dinner = detail::kGeluC0 * (1.0 + 3.0 * detail::kGeluC1 * x * x);
        const double d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner;
        da[i] += (*go)[i] * static_cast<S>(d);
      }
    });
  }
  return out;
}

template <class S>
TensorT<S> sigmoid(const TensorT<S>& a) {
  TensorT<S> out = TensorT<S>::zeros(a.shape());
  auto* o = out.mutable_data().data();
  const auto* pa = a.data().data();
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double x = static_cast<double>(pa[i]);
    o[i] = static_cast<S>(x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                                 : std::exp(x) / (1.0 + std::exp(x)));
  }
  if (auto rec = detail::Recorder<S>::begin({&a})) {
    const int ia = rec.input(a);
    const int io = rec.output(out);
    rec.record([=](GraphT<S>& g) {
      const auto* go = g.incoming(io);
      if (!go) return;
      auto& da = g.grad_buffer(ia);
      const auto* y = out.data().data();
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += (*go)[i] * y[i] * (S(1) - y[i]);
    });
  }
  return out;
}

template <class S>
TensorT<S> log(const TensorT<S>& a) {
  TensorT<S> out = TensorT<S>::zeros(a.shape());
  auto* o = out.mutable_data().data();
  const auto* pa = a.data().data();
  for (std::size_t i = 0; i < a.numel(); ++i) {
    if (!(pa[i] > S(0))) {
      throw NumericError("log: non-positive input " + std::to_string(static_cast<double>(pa[i])));
    }
    o[i] = std::log(pa[i]);
  }
  if (auto rec = detail::Recorder<S>::begin({&a})) {
    const int ia = rec.input(a);
    const int io = rec.output(out);
    rec.record([=](GraphT<S>& g) {
      const auto* go = g.incoming(io);
      if (!go) return;
      auto& da = g.grad_buffer(ia);
      const auto* pa2 = a.data().data();
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += (*go)[i] / pa2[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Normalizations
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> softmax(const TensorT<S>& a, std::size_t axis) {
  if (axis >= a.rank()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) + " out of range for " +
                         detail::shape_str(a.shape()));
  }
  for (S x : a.data()) {
    if (!std::isfinite(static_cast<double>(x))) {
      throw NumericError("softmax: non-finite input");
    }
  }
  const auto& shp = a.shape();
  std::size_t axis_len = shp[axis];
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < shp.size(); ++i) inner *= shp[i];
  std::size_t outer = a.numel() / (axis_len * inner);

  TensorT<S> out = TensorT<S>::zeros(shp);
  {
    auto* o = out.mutable_data().data();
    const auto* p = a.data().data();
    for (std::size_t u = 0; u < outer; ++u) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = u * axis_len * inner + in;
        S m = p[base];
        for (std::size_t t = 1; t < axis_len; ++t) m = std::max(m, p[base + t * inner]);
        S denom = 0;
        for (std::size_t t = 0; t < axis_len; ++t) {
          const S e = std::exp(p[base + t * inner] - m);
          o[base + t * inner] = e;
          denom += e;
        }
        for (std::size_t t = 0; t < axis_len; ++t) o[base + t * inner] /= denom;
      }
    }
  }
  if (auto rec = detail::Recorder<S>::begin({&a})) {
    const int ia = rec.input(a);
    const int io = rec.output(out);
    rec.record([=](GraphT<S>& g) {
      const auto* go = g.incoming(io);
      if (!go) return;
      auto& da = g.grad_buffer(ia);
      const auto* y = out.data().data();
      const auto* pg = go->data();
      for (std::size_t u = 0; u < outer; ++u) {
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = u * axis_len * inner + in;
          S dot = 0;
          for (std::size_t t = 0; t < axis_len; ++t) {
            dot += pg[base + t * inner] * y[base + t * inner];
          }
          for (std::size_t t = 0; t < axis_len; ++t) {
            const std::size_t ix = base + t * inner;
            da[ix] += y[ix] * (pg[ix] - dot);
          }
        }
      }
    });
  }
  return out;
}

template <class S>
TensorT<S> rms_norm(const TensorT<S>& x, const TensorT<S>& scale) {
  constexpr double kEps = 1e-6;
  if (x.rank() != 2 || scale.rank() != 1 || x.shape()[1] != scale.shape()[0]) {
    throw DimensionError("rms_norm: x " + detail::shape_str(x.shape()) + " vs scale " +
                         detail::shape_str(scale.shape()));
  }
  const std::size_t n = x.shape()[0], d = x.shape()[1];
  TensorT<S> out = TensorT<S>::zeros(x.shape());
  std::vector<S> inv(n);
  {
    auto* o = out.mutable_data().data();
    const auto* px = x.data().data();
    const auto* ps = scale.data().data();
    for (std::size_t i = 0; i < n; ++i) {
      const auto* row = px + i * d;
      double ms = 0;
      for (std::size_t j = 0; j < d; ++j) ms += static_cast<double>(row[j]) * row[j];
      ms /= static_cast<double>(d);
      inv[i] = static_cast<S>(1.0 / std::sqrt(ms + kEps));
      for (std::size_t j = 0; j < d; ++j) o[i * d + j] = row[j] * inv[i] * ps[j];
    }
  }
  if (auto rec = detail::Recorder<S>::begin({&x, &scale})) {
    const int ix = rec.input(x), is = rec.input(scale);
    const bool gx = x.requires_grad(), gs = scale.requires_grad();
    auto inv_keep = std::make_shared<std::vector<S>>(std::move(inv));
    const int io = rec.output(out);
    rec.record([=](GraphT<S>& g) {
      const auto* go = g.incoming(io);
      if (!go) return;
      const auto* px = x.data().data();
      const auto* ps = scale.data().data();
      const auto* pg = go->data();
      const auto& pi = *inv_keep;
      if (gx) {
        auto& dx = g.grad_buffer(ix);
        for (std::size_t i = 0; i < n; ++i) {
          const auto* row = px + i * d;
          const auto* grow = pg + i * d;
          S dot = 0;  // sum_j g_ij * s_j * x_ij
          for (std::size_t j = 0; j < d; ++j) dot += grow[j] * ps[j] * row[j];
          const S inv3 = pi[i] * pi[i] * pi[i];
          const S corr = inv3 * dot / static_cast<S>(d);
          for (std::size_t j = 0; j < d; ++j) {
            dx[i * d + j] += grow[j] * ps[j] * pi[i] - row[j] * corr;
          }
        }
      }
      if (gs) {
        auto& ds = g.grad_buffer(is);
        for (std::size_t i = 0; i < n; ++i) {
          const auto* row = px + i * d;
          const auto* grow = pg + i * d;
          for (std::size_t j = 0; j < d; ++j) ds[j] += grow[j] * row[j] * pi[i];
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Row/column scaling
// ---------------------------------------------------------------------------

/// y[i,j] = x[i,j] * w[i]; routing weights enter the heavy branches here.
template <class S>
TensorT<S> scale_rows(const TensorT<S>& x, const TensorT<S>& w) {
  if (x.rank() != 2 || w.rank() != 1 || w.shape()[0] != x.shape()[0]) {
    throw DimensionError("scale_rows: x " + detail::shape_str(x.shape()) + " vs w " +
                         detail::shape_str(w.shape()));
  }
  const std::size_t r = x.shape()[0], c = x.shape()[1];
  TensorT<S> out = TensorT<S>::zeros(x.shape());
  {
    auto* o = out.mutable_data().data();
    const auto* px = x.data().data();
    const auto* pw = w.data().data();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) o[i * c + j] = px[i * c + j] * pw[i];
  }
  if (auto rec = detail::Recorder<S>::begin({&x, &w})) {
    const int ix = rec.input(x), iw = rec.input(w);
    const bool gx = x.requires_grad(), gw = w.requires_grad();
    const int io = rec.output(out);
    rec.record([=](GraphT<S>& g) {
      const auto* go = g.incoming(io);
      if (!go) return;
      const auto* px = x.data().data();
      const auto* pw = w.data().data();
      const auto* pg = go->data();
      if (gx) {
        auto& dx = g.grad_buffer(ix);
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) dx[i * c + j] += pg[i * c + j] * pw[i];
      }
      if (gw) {
        auto& dw = g.grad_buffer(iw);
        for (std::size_t i = 0; i < r; ++i) {
          S acc = 0;
          for (std::size_t j = 0; j < c; ++j) acc += pg[i * c + j] * px[i * c + j];
          dw[i] += acc;
        }
      }
    });
  }
  return out;
}

/// y[i,j] = x[i,j] * v[j] (per-last-dimension vector scaling).
template <class S>
TensorT<S> scale_cols(const TensorT<S>& x, const TensorT<S>& v) {
  if (x.rank() != 2 || v.rank() != 1 || v.shape()[0] != x.shape()[1]) {
    throw DimensionError("scale_cols: x " + detail::shape_str(x.shape()) + " vs v " +
                         detail::shape_str(v.shape()));
  }
  const std::size_t r = x.shape()[0], c = x.shape()[1];
  TensorT<S> out = TensorT<S>::zeros(x.shape());
  {
    auto* o = out.mutable_data().data();
    const auto* px = x.data().data();
    const auto* pv = v.data().data();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) o[i * c + j] = px[i * c + j] * pv[j];
  }
  if (auto rec = detail::Recorder<S>::begin({&x, &v})) {
    const int ix = rec.input(x), iv = rec.input(v);
    const bool gx = x.requires_grad(), gv = v.requires_grad();
    const int io = rec.output(out);
    rec.record([=](GraphT<S>& g) {
      const auto* go = g.incoming(io);
      if (!go) return;
      const auto* px = x.data().data();
      const auto* pv = v.data().data();
      const auto* pg = go->data();
      if (gx) {
        auto& dx = g.grad_buffer(ix);
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) dx[i * c + j] += pg[i * c + j] * pv[j];
      }
      if (gv) {
        auto& dv = g.grad_buffer(iv);
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) dv[j] += pg[i * c + j] * px[i * c + j];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Gather / scatter — routed-token extraction and reinsertion. The two are
// mutually adjoint: gather's backward is scatter_add and vice versa.
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> gather_rows(const TensorT<S>& x, const std::vector<int>& idx) {
  if (x.rank() != 2) {
    throw DimensionError("gather_rows: expected rank-2, got " + detail::shape_str(x.shape()));
  }
  const std::size_t n = x.shape()[0], d = x.shape()[1];
  for (int i : idx) {
    if (i < 0 || static_cast<std::size_t>(i) >= n) {
      throw IndexError("gather_rows: index " + std::to_string(i) + " out of range [0, " +
                       std::to_string(n) + ")");
    }
  }
  TensorT<S> out = TensorT<S>::zeros({idx.size(), d});
  {
    auto* o = out.mutable_data().data();
    const auto* px = x.data().data();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      std::copy_n(px + static_cast<std::size_t>(idx[i]) * d, d, o + i * d);
    }
  }
  if (auto rec = detail::Recorder<S>::begin({&x})) {
    const int ix = rec.input(x);
    auto idx_keep = std::make_shared<std::vector<int>>(idx);
    const int io = rec.output(out);
    rec.record([=](GraphT<S>& g) {
      const auto* go = g.incoming(io);
      if (!go) return;
      auto& dx = g.grad_buffer(ix);
      const auto* pg = go->data();
      for (std::size_t i = 0; i < idx_keep->size(); ++i) {
        auto* drow = dx.data() + static_cast<std::size_t>((*idx_keep)[i]) * d;
        const auto* grow = pg + i * d;
        for (std::size_t j = 0; j < d; ++j) drow[j] += grow[j];
      }
    });
  }
  return out;
}

template <class S>
TensorT<S> scatter_add_rows(const TensorT<S>& dst, const std::vector<int>& idx,
                            const TensorT<S>& src) {
  if (dst.rank() != 2 || src.rank() != 2 || dst.shape()[1] != src.shape()[1] ||
      src.shape()[0] != idx.size()) {
    throw DimensionError("scatter_add_rows: dst " + detail::shape_str(dst.shape()) + ", src " +
                         detail::shape_str(src.shape()) + ", " + std::to_string(idx.size()) +
                         " indices");
  }
  const std::size_t n = dst.shape()[0], d = dst.shape()[1];
  for (int i : idx) {
    if (i < 0 || static_cast<std::size_t>(i) >= n) {
      throw IndexError("scatter_add_rows: index " + std::to_string(i) + " out of range [0, " +
                       std::to_string(n) + ")");
    }
  }
  TensorT<S> out = TensorT<S>::from_data(dst.shape(),
                                         std::vector<S>(dst.data().begin(), dst.data().end()));
  {
    auto* o = out.mutable_data().data();
    const auto* ps = src.data().data();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      auto* orow = o + static_cast<std::size_t>(idx[i]) * d;
      const auto* srow = ps + i * d;
      for (std::size_t j = 0; j < d; ++j) orow[j] += srow[j];
    }
  }
  if (auto rec = detail::Recorder<S>::begin({&dst, &src})) {
    const int id_ = rec.input(dst), is = rec.input(src);
    const bool gd = dst.requires_grad(), gs = src.requires_grad();
    auto idx_keep = std::make_shared<std::vector<int>>(idx);
    const int io = rec.output(out);
    rec.record([=](GraphT<S>& g) {
      const auto* go = g.incoming(io);
      if (!go) return;
      const auto* pg = go->data();
      if (gd) {
        auto& dd = g.grad_buffer(id_);
        for (std::size_t i = 0; i < dd.size(); ++i) dd[i] += pg[i];
      }
      if (gs) {
        auto& ds = g.grad_buffer(is);
        for (std::size_t i = 0; i < idx_keep->size(); ++i) {
          const auto* grow = pg + static_cast<std::size_t>((*idx_keep)[i]) * d;
          auto* srow = ds.data() + i * d;
          for (std::size_t j = 0; j < d; ++j) srow[j] += grow[j];
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Column slicing / concatenation — per-head views of fused projections.
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> col_slice(const TensorT<S>& x, std::size_t c0, std::size_t c1) {
  if (x.rank() != 2 || c0 >= c1 || c1 > x.shape()[1]) {
    throw DimensionError("col_slice: [" + std::to_string(c0) + ", " + std::to_string(c1) +
                         ") invalid for " + detail::shape_str(x.shape()));
  }
  const std::size_t r = x.shape()[0], c = x.shape()[1], w = c1 - c0;
  TensorT<S> out = TensorT<S>::zeros({r, w});
  {
    auto* o = out.mutable_data().data();
    const auto* px = x.data().data();
    for (std::size_t i = 0; i < r; ++i) std::copy_n(px + i * c + c0, w, o + i * w);
  }
  if (auto rec = detail::Recorder<S>::begin({&x})) {
    const int ix = rec.input(x);
    const int io = rec.output(out);
    rec.record([=](GraphT<S>& g) {
      const auto* go = g.incoming(io);
      if (!go) return;
      auto& dx = g.grad_buffer(ix);
      const auto* pg = go->data();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < w; ++j) dx[i * c + c0 + j] += pg[i * w + j];
    });
  }
  return out;
}

template <class S>
TensorT<S> concat_cols(const std::vector<TensorT<S>>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  const std::size_t r = parts[0].shape()[0];
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.shape()[0] != r) {
      throw DimensionError("concat_cols: row mismatch at " + detail::shape_str(p.shape()));
    }
    total += p.shape()[1];
  }
  TensorT<S> out = TensorT<S>::zeros({r, total});
  {
    auto* o = out.mutable_data().data();
    std::size_t off = 0;
    for (const auto& p : parts) {
      const std::size_t w = p.shape()[1];
      const auto* pp = p.data().data();
      for (std::size_t i = 0; i < r; ++i) std::copy_n(pp + i * w, w, o + i * total + off);
      off += w;
    }
  }
  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  GraphT<S>* g = current_graph<S>();
  if (g && any) {
    std::vector<int> in_ids;
    std::vector<bool> needs;
    std::vector<std::size_t> widths;
    for (const auto& p : parts) {
      in_ids.push_back(g->node_id(p));
      needs.push_back(p.requires_grad());
      widths.push_back(p.shape()[1]);
    }
    out.set_requires_grad(true);
    const int out_id = g->node_id(out);
    g->push_op([=](GraphT<S>& gg) {
      const auto* go = gg.incoming(out_id);
      if (!go) return;
      const auto* pg = go->data();
      std::size_t off = 0;
      for (std::size_t p = 0; p < in_ids.size(); ++p) {
        const std::size_t w = widths[p];
        if (needs[p]) {
          auto& dp = gg.grad_buffer(in_ids[p]);
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < w; ++j) dp[i * w + j] += pg[i * total + off + j];
        }
        off += w;
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Masking and reductions
// ---------------------------------------------------------------------------

/// Positions where mask != 0 are replaced by `value`; gradient flows only
/// through unmasked positions.
template <class S>
TensorT<S> masked_fill(const TensorT<S>& x, const std::vector<std::uint8_t>& mask, S value) {
  if (mask.size() != x.numel()) {
    throw DimensionError("masked_fill: mask size " + std::to_string(mask.size()) +
                         " vs tensor " + detail::shape_str(x.shape()));
  }
  TensorT<S> out = TensorT<S>::zeros(x.shape());
  {
    auto* o = out.mutable_data().data();
    const auto* px = x.data().data();
    for (std::size_t i = 0; i < x.numel(); ++i) o[i] = mask[i] ? value : px[i];
  }
  if (auto rec = detail::Recorder<S>::begin({&x})) {
    const int ix = rec.input(x);
    auto mask_keep = std::make_shared<std::vector<std::uint8_t>>(mask);
    const int io = rec.output(out);
    rec.record([=](GraphT<S>& g) {
      const auto* go = g.incoming(io);
      if (!go) return;
      auto& dx = g.grad_buffer(ix);
      for (std::size_t i = 0; i < dx.size(); ++i) {
        if (!(*mask_keep)[i]) dx[i] += (*go)[i];
      }
    });
  }
  return out;
}

template <class S>
TensorT<S> sum_all(const TensorT<S>& x) {
  S acc = 0;
  for (S v : x.data()) acc += v;
  TensorT<S> out = TensorT<S>::scalar(acc);
  if (auto rec = detail::Recorder<S>::begin({&x})) {
    const int ix = rec.input(x);
    const int io = rec.output(out);
    rec.record([=](GraphT<S>& g) {
      const auto* go = g.incoming(io);
      if (!go) return;
      auto& dx = g.grad_buffer(ix);
      for (auto& v : dx) v += (*go)[0];
    });
  }
  return out;
}

template <class S>
TensorT<S> mean_all(const TensorT<S>& x) {
  return smul(sum_all(x), S(1) / static_cast<S>(x.numel()));
}

/// Mean token-level cross entropy between rows of `logits` and target ids.
template <class S>
TensorT<S> cross_entropy_logits(const TensorT<S>& logits, const std::vector<int>& targets) {
  if (logits.rank() != 2 || logits.shape()[0] != targets.size()) {
    throw DimensionError("cross_entropy_logits: logits " + detail::shape_str(logits.shape()) +
                         " vs " + std::to_string(targets.size()) + " targets");
  }
  const std::size_t t = logits.shape()[0], vsz = logits.shape()[1];
  for (int id : targets) {
    if (id < 0 || static_cast<std::size_t>(id) >= vsz) {
      throw IndexError("cross_entropy_logits: target id " + std::to_string(id) +
                       " outside vocabulary of " + std::to_string(vsz));
    }
  }
  double loss = 0;
  const auto* p = logits.data().data();
  for (std::size_t i = 0; i < t; ++i) {
    const auto* row = p + i * vsz;
    double m = static_cast<double>(row[0]);
    for (std::size_t j = 1; j < vsz; ++j) m = std::max(m, static_cast<double>(row[j]));
    double denom = 0;
    for (std::size_t j = 0; j < vsz; ++j) denom += std::exp(static_cast<double>(row[j]) - m);
    loss += m + std::log(denom) - static_cast<double>(row[static_cast<std::size_t>(targets[i])]);
  }
  TensorT<S> out = TensorT<S>::scalar(static_cast<S>(loss / static_cast<double>(t)));
  if (auto rec = detail::Recorder<S>::begin({&logits})) {
    const int il = rec.input(logits);
    auto tgt_keep = std::make_shared<std::vector<int>>(targets);
    const int io = rec.output(out);
    rec.record([=](GraphT<S>& g) {
      const auto* go = g.incoming(io);
      if (!go) return;
      const S scale = (*go)[0] / static_cast<S>(t);
      auto& dl = g.grad_buffer(il);
      const auto* pl = logits.data().data();
      for (std::size_t i = 0; i < t; ++i) {
        const auto* row = pl + i * vsz;
        double m = static_cast<double>(row[0]);
        for (std::size_t j = 1; j < vsz; ++j) m = std::max(m, static_cast<double>(row[j]));
        double denom = 0;
        for (std::size_t j = 0; j < vsz; ++j) denom += std::exp(static_cast<double>(row[j]) - m);
        for (std::size_t j = 0; j < vsz; ++j) {
          const double pr = std::exp(static_cast<double>(row[j]) - m) / denom;
          const double one = (static_cast<std::size_t>((*tgt_keep)[i]) == j) ? 1.0 : 0.0;
          dl[i * vsz + j] += scale * static_cast<S>(pr - one);
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fused windowed attention core.
//
// q, k, v: [n x heads*head_dim]. Token i attends to [i-radius, i+radius]
// clipped to the sequence; logits get rel_bias[(j - i) + radius, head] added.
// The banded probabilities are kept for the backward pass.
// ---------------------------------------------------------------------------
template <class S>
TensorT<S> local_attention_core(const TensorT<S>& q, const TensorT<S>& k, const TensorT<S>& v,
                                const TensorT<S>& rel_bias, int radius, std::size_t heads) {
  const std::size_t n = q.shape()[0];
  const std::size_t width = q.shape()[1];
  const std::size_t w = 2 * static_cast<std::size_t>(radius) + 1;
  if (q.rank() != 2 || k.shape() != q.shape() || v.shape() != q.shape() || width % heads != 0) {
    throw DimensionError("local_attention_core: bad q/k/v shapes " +
                         detail::shape_str(q.shape()));
  }
  if (rel_bias.rank() != 2 || rel_bias.shape()[0] != w || rel_bias.shape()[1] != heads) {
    throw DimensionError("local_attention_core: rel_bias " + detail::shape_str(rel_bias.shape()) +
                         " wants [" + std::to_string(w) + " x " + std::to_string(heads) + "]");
  }
  const std::size_t dh = width / heads;
  const S scale = S(1) / static_cast<S>(std::sqrt(static_cast<double>(dh)));

  TensorT<S> out = TensorT<S>::zeros({n, width});
  auto probs = std::make_shared<std::vector<S>>(heads * n * w, S(0));
  std::uint64_t core_macs = 0;
  {
    auto* o = out.mutable_data().data();
    const auto* pq = q.data().data();
    const auto* pk = k.data().data();
    const auto* pv = v.data().data();
    const auto* pb = rel_bias.data().data();
    std::vector<S> logits(w);
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t hoff = h * dh;
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t lo = (i >= static_cast<std::size_t>(radius))
                                   ? i - static_cast<std::size_t>(radius)
                                   : 0;
        const std::size_t hi = std::min(n - 1, i + static_cast<std::size_t>(radius));
        const auto* qrow = pq + i * width + hoff;
        S m = -std::numeric_limits<S>::infinity();
        for (std::size_t t = lo; t <= hi; ++t) {
          const auto* krow = pk + t * width + hoff;
          S dot = 0;
          for (std::size_t e = 0; e < dh; ++e) dot += qrow[e] * krow[e];
          const std::size_t rel = t - i + static_cast<std::size_t>(radius);
          const S l = dot * scale + pb[rel * heads + h];
          logits[t - lo] = l;
          m = std::max(m, l);
        }
        core_macs += (hi - lo + 1) * dh;
        S denom = 0;
        for (std::size_t t = lo; t <= hi; ++t) {
          const S e = std::exp(logits[t - lo] - m);
          logits[t - lo] = e;
          denom += e;
        }
        auto* prow = probs->data() + (h * n + i) * w;
        auto* orow = o + i * width + hoff;
        for (std::size_t t = lo; t <= hi; ++t) {
          const S p = logits[t - lo] / denom;
          prow[t - i + static_cast<std::size_t>(radius)] = p;
          const auto* vrow = pv + t * width + hoff;
          for (std::size_t e = 0; e < dh; ++e) orow[e] += p * vrow[e];
        }
        core_macs += (hi - lo + 1) * dh;
      }
    }
  }
  macs::add(core_macs);

  if (auto rec = detail::Recorder<S>::begin({&q, &k, &v, &rel_bias})) {
    const int iq = rec.input(q), ik = rec.input(k), iv = rec.input(v), ib = rec.input(rel_bias);
    const bool gq = q.requires_grad(), gk = k.requires_grad(), gv = v.requires_grad(),
               gb = rel_bias.requires_grad();
    const int io = rec.output(out);
    rec.record([=](GraphT<S>& g) {
      const auto* go = g.incoming(io);
      if (!go) return;
      const auto* pq = q.data().data();
      const auto* pk = k.data().data();
      const auto* pv = v.data().data();
      const auto* pg = go->data();
      std::vector<S>* dq = gq ? &g.grad_buffer(iq) : nullptr;
      std::vector<S>* dk = gk ? &g.grad_buffer(ik) : nullptr;
      std::vector<S>* dv = gv ? &g.grad_buffer(iv) : nullptr;
      std::vector<S>* db = gb ? &g.grad_buffer(ib) : nullptr;
      std::vector<S> dlogit(w);
      for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t hoff = h * dh;
        for (std::size_t i = 0; i < n; ++i) {
          const std::size_t lo = (i >= static_cast<std::size_t>(radius))
                                     ? i - static_cast<std::size_t>(radius)
                                     : 0;
          const std::size_t hi = std::min(n - 1, i + static_cast<std::size_t>(radius));
          const auto* grow = pg + i * width + hoff;
          const auto* prow = probs->data() + (h * n + i) * w;
          // dv and dP
          S pdot = 0;
          for (std::size_t t = lo; t <= hi; ++t) {
            const std::size_t rel = t - i + static_cast<std::size_t>(radius);
            const S p = prow[rel];
            const auto* vrow = pv + t * width + hoff;
            S dp = 0;
            for (std::size_t e = 0; e < dh; ++e) dp += grow[e] * vrow[e];
            if (dv) {
              auto* dvrow = dv->data() + t * width + hoff;
              for (std::size_t e = 0; e < dh; ++e) dvrow[e] += p * grow[e];
            }
            dlogit[rel] = dp;
            pdot += p * dp;
          }
          for (std::size_t t = lo; t <= hi; ++t) {
            const std::size_t rel = t - i + static_cast<std::size_t>(radius);
            const S dl = prow[rel] * (dlogit[rel] - pdot);
            const auto* qrow = pq + i * width + hoff;
            const auto* krow = pk + t * width + hoff;
            if (dq) {
              auto* dqrow = dq->data() + i * width + hoff;
              for (std::size_t e = 0; e < dh; ++e) dqrow[e] += scale * dl * krow[e];
            }
            if (dk) {
              auto* dkrow = dk->data() + t * width + hoff;
              for (std::size_t e = 0; e < dh; ++e) dkrow[e] += scale * dl * qrow[e];
            }
            if (db) (*db)[rel * heads + h] += dl;
          }
        }
      }
    });
  }
  return out;
}

}  // namespace colt5
