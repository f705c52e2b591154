#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "affconv/error.hpp"
#include "affconv/sparse.hpp"
#include "affconv/summation.hpp"
#include "affconv/tensor.hpp"

namespace affconv::ad {

/// Learnable tensor with a gradient buffer of identical shape.
template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Param() = default;
  Param(std::string param_name, Tensor<T> initial)
      : name(std::move(param_name)), value(std::move(initial)), grad(value.rows(), value.cols()) {}

  std::size_t size() const noexcept { return value.size(); }
  void zero_grad() { grad = Tensor<T>(value.rows(), value.cols()); }
};

template <typename T>
class Tape;

/// Handle to a value recorded on a Tape.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor<T>& value() const { return tape_->value(id_); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  std::size_t id() const noexcept { return id_; }
  Tape<T>* tape() const noexcept { return tape_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Records primitive applications in topological order and replays their
/// backward rules once, in reverse.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor<T>&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Throw NumericalFailure as soon as a recorded value is non-finite.
  void set_check_finite(bool on) noexcept { check_finite_ = on; }

  Var<T> constant(Tensor<T> value) { return push(std::move(value), false, nullptr); }

  Var<T> leaf(Param<T>& p) {
    Var<T> v = push(p.value, true, nullptr);
    nodes_[v.id()].param = &p;
    return v;
  }

  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn backward) {
    bool needs_grad = false;
    for (const Var<T>& in : inputs) {
      require(in.tape() == this, ErrorCode::DetachedNode, "input recorded on a different tape");
      needs_grad = needs_grad || nodes_[in.id()].requires_grad;
    }
    return push(std::move(value), needs_grad, needs_grad ? std::move(backward) : nullptr);
  }

  Var<T> record(Tensor<T> value, std::span<const Var<T>> inputs, BackwardFn backward) {
    bool needs_grad = false;
    for (const Var<T>& in : inputs) {
      require(in.tape() == this, ErrorCode::DetachedNode, "input recorded on a different tape");
      needs_grad = needs_grad || nodes_[in.id()].requires_grad;
    }
    return push(std::move(value), needs_grad, needs_grad ? std::move(backward) : nullptr);
  }

  const Tensor<T>& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Gradient buffer of node `id`, zero-initialised on first access.
  Tensor<T>& grad(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty() && !n.value.empty()) n.grad = Tensor<T>(n.value.rows(), n.value.cols());
    return n.grad;
  }

  void accumulate(std::size_t id, const Tensor<T>& g) {
    Tensor<T>& dst = grad(id);
    require(dst.same_shape(g), ErrorCode::ShapeMismatch,
            "gradient " + g.shape_string() + " for value " + dst.shape_string());
    T* d = dst.data();
    const T* s = g.data();
    for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
  }

  /// Propagates d(loss)/d(node) to every node. With accumulate_into_params the
  /// leaf gradients are added to their Param::grad buffers.
  void backward(Var<T> loss, bool accumulate_into_params = true) {
    require(loss.tape() == this, ErrorCode::DetachedNode, "loss was recorded on a different tape");
    require(!consumed_, ErrorCode::BackwardTwice, "backward already ran on this tape");
    require(value(loss.id()).size() == 1, ErrorCode::NotScalarLoss,
            "loss has shape " + value(loss.id()).shape_string());
    consumed_ = true;
    grad(loss.id())[0] = T(1);
    for (std::size_t id = loss.id() + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.requires_grad || n.grad.empty()) continue;
      if (n.backward) n.backward(*this, n.grad);
    }
    if (accumulate_into_params) {
      for (Node& n : nodes_) {
        if (n.param == nullptr || n.grad.empty()) continue;
        T* d = n.param->grad.data();
        const T* s = n.grad.data();
        for (std::size_t i = 0; i < n.grad.size(); ++i) d[i] += s[i];
      }
    }
  }

  /// (param, gradient) pairs for every leaf reached by backward().
  std::vector<std::pair<Param<T>*, const Tensor<T>*>> leaf_gradients() const {
    std::vector<std::pair<Param<T>*, const Tensor<T>*>> out;
    for (const Node& n : nodes_)
      if (n.param != nullptr && !n.grad.empty()) out.emplace_back(n.param, &n.grad);
    return out;
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    BackwardFn backward;
    Param<T>* param = nullptr;
    bool requires_grad = false;
  };

  Var<T> push(Tensor<T> value, bool requires_grad, BackwardFn backward) {
    if (check_finite_ && !value.all_finite())
      fail(ErrorCode::NumericalFailure, "non-finite value recorded at node " + std::to_string(nodes_.size()));
    nodes_.push_back(Node{std::move(value), {}, std::move(backward), nullptr, requires_grad});
    return Var<T>(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
  bool consumed_ = false;
#ifdef NDEBUG
  bool check_finite_ = false;
#else
  bool check_finite_ = true;
#endif
};

namespace detail {

enum class Broadcast { Same, Row, Col, Scalar };

template <typename T>
Broadcast broadcast_kind(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.same_shape(b)) return Broadcast::Same;
  if (b.rows() == 1 && b.cols() == 1) return Broadcast::Scalar;
  if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::Row;
  if (b.cols() == 1 && b.rows() == a.rows()) return Broadcast::Col;
  fail(ErrorCode::ShapeMismatch,
       std::string(op) + ": cannot broadcast " + b.shape_string() + " onto " + a.shape_string());
}

template <typename T>
bool is_broadcastable(const Tensor<T>& a, const Tensor<T>& b) {
  return a.same_shape(b) || (b.rows() == 1 && b.cols() == 1) ||
         (b.rows() == 1 && b.cols() == a.cols()) || (b.cols() == 1 && b.rows() == a.rows());
}

template <typename T>
T bcast_at(const Tensor<T>& b, Broadcast kind, std::size_t i, std::size_t j) {
  switch (kind) {
    case Broadcast::Same: return b(i, j);
    case Broadcast::Row: return b(0, j);
    case Broadcast::Col: return b(i, 0);
    case Broadcast::Scalar: return b(0, 0);
  }
  return T(0);
}

// Sums a full-shape gradient down to the broadcast operand's shape.
template <typename T>
Tensor<T> reduce_to(const Tensor<T>& g, Broadcast kind, std::size_t rows, std::size_t cols) {
  if (kind == Broadcast::Same) return g;
  Tensor<T> out(rows, cols);
  for (std::size_t i = 0; i < g.rows(); ++i)
    for (std::size_t j = 0; j < g.cols(); ++j) {
      const T v = g(i, j);
      switch (kind) {
        case Broadcast::Row: out(0, j) += v; break;
        case Broadcast::Col: out(i, 0) += v; break;
        default: out(0, 0) += v; break;
      }
    }
  return out;
}

template <typename T>
Tape<T>& tape_of(const Var<T>& a) {
  require(a.valid(), ErrorCode::DetachedNode, "operation on an unrecorded value");
  return *a.tape();
}

template <typename T>
Tape<T>& tape_of(const Var<T>& a, const Var<T>& b) {
  require(a.valid() && b.valid() && a.tape() == b.tape(), ErrorCode::DetachedNode,
          "operands recorded on different tapes");
  return *a.tape();
}

// out += a * b, a (n x k), b (k x m).
template <typename T>
void gemm_accumulate(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& out) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  for (std::size_t i = 0; i < n; ++i) {
    T* orow = po + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = pa[i * k + p];
      if (av == T(0)) continue;
      const T* brow = pb + p * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

/// a + b, with b optionally broadcast as a row, column or scalar.
template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  Tape<T>& tape = detail::tape_of(a, b);
  if (!detail::is_broadcastable(a.value(), b.value()) && detail::is_broadcastable(b.value(), a.value()))
    std::swap(a, b);
  const auto kind = detail::broadcast_kind(a.value(), b.value(), "add");
  Tensor<T> out = a.value();
  const Tensor<T>& bv = b.value();
  if (kind == detail::Broadcast::Same) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  } else {
    for (std::size_t i = 0; i < out.rows(); ++i)
      for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += detail::bcast_at(bv, kind, i, j);
  }
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), {a, b}, [ia, ib, kind](Tape<T>& t, const Tensor<T>& g) {
    if (t.requires_grad(ia)) t.accumulate(ia, g);
    if (t.requires_grad(ib))
      t.accumulate(ib, detail::reduce_to(g, kind, t.value(ib).rows(), t.value(ib).cols()));
  });
}

/// a - b, with b optionally broadcast.
template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  Tape<T>& tape = detail::tape_of(a, b);
  const auto kind = detail::broadcast_kind(a.value(), b.value(), "sub");
  Tensor<T> out = a.value();
  const Tensor<T>& bv = b.value();
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) -= detail::bcast_at(bv, kind, i, j);
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), {a, b}, [ia, ib, kind](Tape<T>& t, const Tensor<T>& g) {
    if (t.requires_grad(ia)) t.accumulate(ia, g);
    if (t.requires_grad(ib)) {
      Tensor<T> r = detail::reduce_to(g, kind, t.value(ib).rows(), t.value(ib).cols());
      for (T& v : r.values()) v = -v;
      t.accumulate(ib, r);
    }
  });
}

/// Elementwise product with broadcasting of b.
template <typename T>
Var<T> hadamard(Var<T> a, Var<T> b) {
  Tape<T>& tape = detail::tape_of(a, b);
  if (!detail::is_broadcastable(a.value(), b.value()) && detail::is_broadcastable(b.value(), a.value()))
    std::swap(a, b);
  const auto kind = detail::broadcast_kind(a.value(), b.value(), "hadamard");
  Tensor<T> out = a.value();
  const Tensor<T>& bv = b.value();
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) *= detail::bcast_at(bv, kind, i, j);
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), {a, b}, [ia, ib, kind](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& av = t.value(ia);
    const Tensor<T>& bv = t.value(ib);
    if (t.requires_grad(ia)) {
      Tensor<T> ga(g.rows(), g.cols());
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) ga(i, j) = g(i, j) * detail::bcast_at(bv, kind, i, j);
      t.accumulate(ia, ga);
    }
    if (t.requires_grad(ib)) {
      Tensor<T> full(g.rows(), g.cols());
      for (std::size_t i = 0; i < g.size(); ++i) full[i] = g[i] * av[i];
      t.accumulate(ib, detail::reduce_to(full, kind, bv.rows(), bv.cols()));
    }
  });
}

template <typename T>
Var<T> scalar_mul(Var<T> a, T s) {
  Tape<T>& tape = detail::tape_of(a);
  Tensor<T> out = a.value();
  for (T& v : out.values()) v *= s;
  const std::size_t ia = a.id();
  return tape.record(std::move(out), {a}, [ia, s](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T> ga = g;
    for (T& v : ga.values()) v *= s;
    t.accumulate(ia, ga);
  });
}

namespace detail {

// Applies f elementwise; backward multiplies by df(x, y).
template <typename T, typename F, typename DF>
Var<T> unary(Var<T> a, F f, DF df) {
  Tape<T>& tape = tape_of(a);
  Tensor<T> out = a.value();
  for (T& v : out.values()) v = f(v);
  const std::size_t ia = a.id(), io = tape.size();
  return tape.record(std::move(out), {a}, [ia, io, df](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& x = t.value(ia);
    const Tensor<T>& y = t.value(io);
    Tensor<T> ga(g.rows(), g.cols());
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * df(x[i], y[i]);
    t.accumulate(ia, ga);
  });
}

}  // namespace detail

template <typename T>
Var<T> exp(Var<T> a) {
  return detail::unary(a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Var<T> log(Var<T> a) {
  return detail::unary(a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
Var<T> abs(Var<T> a) {
  return detail::unary(
      a, [](T x) { return std::abs(x); },
      [](T x, T) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Var<T> relu(Var<T> a) {
  return detail::unary(
      a, [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

/// ELU with alpha = 1.
template <typename T>
Var<T> elu(Var<T> a) {
  return detail::unary(
      a, [](T x) { return x > T(0) ? x : std::expm1(x); },
      [](T x, T y) { return x > T(0) ? T(1) : y + T(1); });
}

// ------------------------------------------------------------------ products

/// Dense matrix product a (n x k) * b (k x m).
template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  Tape<T>& tape = detail::tape_of(a, b);
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  require(av.cols() == bv.rows(), ErrorCode::ShapeMismatch,
          "matmul " + av.shape_string() + " * " + bv.shape_string());
  Tensor<T> out(av.rows(), bv.cols());
  detail::gemm_accumulate(av, bv, out);
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), {a, b}, [ia, ib](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& av = t.value(ia);
    const Tensor<T>& bv = t.value(ib);
    const std::size_t n = av.rows(), k = av.cols(), m = bv.cols();
    if (t.requires_grad(ia)) {
      Tensor<T>& ga = t.grad(ia);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          T acc = T(0);
          const T* grow = g.data() + i * m;
          const T* brow = bv.data() + p * m;
          for (std::size_t j = 0; j < m; ++j) acc += grow[j] * brow[j];
          ga(i, p) += acc;
        }
    }
    if (t.requires_grad(ib)) {
      Tensor<T>& gb = t.grad(ib);
      for (std::size_t i = 0; i < n; ++i) {
        const T* grow = g.data() + i * m;
        for (std::size_t p = 0; p < k; ++p) {
          const T a_ip = av(i, p);
          if (a_ip == T(0)) continue;
          T* gbrow = gb.data() + p * m;
          for (std::size_t j = 0; j < m; ++j) gbrow[j] += a_ip * grow[j];
        }
      }
    }
  });
}

/// Constant sparse matrix times a: s * a. `s` must outlive backward().
template <typename T>
Var<T> spmm(const SparseMatrix& s, Var<T> a) {
  Tape<T>& tape = detail::tape_of(a);
  Tensor<T> out = s.multiply(a.value());
  const SparseMatrix* sp = &s;
  const std::size_t ia = a.id();
  return tape.record(std::move(out), {a}, [sp, ia](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(ia, sp->multiply_transposed(g));
  });
}

// -------------------------------------------------------------- reductions

template <typename T>
Var<T> sum(Var<T> a) {
  Tape<T>& tape = detail::tape_of(a);
  T acc = T(0);
  for (T v : a.value().values()) acc += v;
  const std::size_t ia = a.id();
  return tape.record(Tensor<T>::scalar(acc), {a}, [ia](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& x = t.value(ia);
    t.accumulate(ia, Tensor<T>(x.rows(), x.cols(), g[0]));
  });
}

template <typename T>
Var<T> mean(Var<T> a) {
  const std::size_t n = a.value().size();
  require(n > 0, ErrorCode::ShapeMismatch, "mean of empty tensor");
  return scalar_mul(sum(a), T(1) / static_cast<T>(n));
}

/// Sum over columns: (N x C) -> (N x 1).
template <typename T>
Var<T> row_sum(Var<T> a) {
  Tape<T>& tape = detail::tape_of(a);
  const Tensor<T>& x = a.value();
  Tensor<T> out(x.rows(), 1);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    T acc = T(0);
    for (T v : x.row(i)) acc += v;
    out(i, 0) = acc;
  }
  const std::size_t ia = a.id();
  return tape.record(std::move(out), {a}, [ia](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& x = t.value(ia);
    Tensor<T> ga(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t j = 0; j < x.cols(); ++j) ga(i, j) = g(i, 0);
    t.accumulate(ia, ga);
  });
}

/// Mean over rows: (N x C) -> (1 x C).
template <typename T>
Var<T> col_mean(Var<T> a) {
  Tape<T>& tape = detail::tape_of(a);
  const Tensor<T>& x = a.value();
  require(x.rows() > 0, ErrorCode::ShapeMismatch, "col_mean of empty tensor");
  Tensor<T> out(1, x.cols());
  std::vector<T> column(x.rows());
  for (std::size_t j = 0; j < x.cols(); ++j) {
    for (std::size_t i = 0; i < x.rows(); ++i) column[i] = x(i, j);
    out(0, j) = canonical_sum(std::span<T>(column));
  }
  const T inv = T(1) / static_cast<T>(x.rows());
  for (T& v : out.values()) v *= inv;
  const std::size_t ia = a.id();
  return tape.record(std::move(out), {a}, [ia, inv](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& x = t.value(ia);
    Tensor<T> ga(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t j = 0; j < x.cols(); ++j) ga(i, j) = g(0, j) * inv;
    t.accumulate(ia, ga);
  });
}

enum class Reduce { Sum, Mean, Max };

/// Reduces rows of a (E x C) into num_segments rows by segment id. Empty
/// segments yield zero rows. Max sends the gradient to the first argmax.
template <typename T>
Var<T> segment_reduce(Var<T> a, std::span<const std::size_t> segments, std::size_t num_segments,
                      Reduce mode) {
  Tape<T>& tape = detail::tape_of(a);
  const Tensor<T>& x = a.value();
  require(segments.size() == x.rows(), ErrorCode::ShapeMismatch,
          "segment_reduce: " + std::to_string(segments.size()) + " segment ids for " +
              std::to_string(x.rows()) + " rows");
  const std::size_t c = x.cols();

  std::vector<std::size_t> offsets(num_segments + 1, 0);
  for (std::size_t s : segments) {
    require(s < num_segments, ErrorCode::InvalidArgument, "segment id out of range");
    ++offsets[s + 1];
  }
  for (std::size_t s = 0; s < num_segments; ++s) offsets[s + 1] += offsets[s];
  std::vector<std::size_t> members(segments.size());
  {
    std::vector<std::size_t> fill(offsets.begin(), offsets.end() - 1);
    for (std::size_t e = 0; e < segments.size(); ++e) members[fill[segments[e]]++] = e;
  }

  Tensor<T> out(num_segments, c);
  std::vector<std::size_t> argmax;
  if (mode == Reduce::Max) argmax.assign(num_segments * c, 0);
  std::vector<T> terms;
  for (std::size_t s = 0; s < num_segments; ++s) {
    const std::size_t begin = offsets[s], end = offsets[s + 1];
    const std::size_t count = end - begin;
    if (count == 0) continue;
    for (std::size_t ch = 0; ch < c; ++ch) {
      if (mode == Reduce::Max) {
        std::size_t best = members[begin];
        for (std::size_t k = begin + 1; k < end; ++k)
          if (x(members[k], ch) > x(best, ch)) best = members[k];
        out(s, ch) = x(best, ch);
        argmax[s * c + ch] = best;
      } else {
        terms.resize(count);
        for (std::size_t k = 0; k < count; ++k) terms[k] = x(members[begin + k], ch);
        T total = canonical_sum(std::span<T>(terms));
        out(s, ch) = mode == Reduce::Mean ? total / static_cast<T>(count) : total;
      }
    }
  }

  std::vector<std::size_t> seg(segments.begin(), segments.end());
  const std::size_t ia = a.id();
  return tape.record(std::move(out), {a},
                     [ia, seg = std::move(seg), offsets = std::move(offsets),
                      argmax = std::move(argmax), mode, c](Tape<T>& t, const Tensor<T>& g) {
                       Tensor<T>& ga = t.grad(ia);
                       if (mode == Reduce::Max) {
                         const std::size_t ns = offsets.size() - 1;
                         for (std::size_t s = 0; s < ns; ++s) {
                           if (offsets[s + 1] == offsets[s]) continue;
                           for (std::size_t ch = 0; ch < c; ++ch) ga(argmax[s * c + ch], ch) += g(s, ch);
                         }
                         return;
                       }
                       for (std::size_t e = 0; e < seg.size(); ++e) {
                         const std::size_t s = seg[e];
                         const T scale = mode == Reduce::Mean
                                             ? T(1) / static_cast<T>(offsets[s + 1] - offsets[s])
                                             : T(1);
                         for (std::size_t ch = 0; ch < c; ++ch) ga(e, ch) += g(s, ch) * scale;
                       }
                     });
}

/// out[i, k*C + c] = sum over edges e with src[e] == i of w[e, k] * x[dst[e], c].
/// One pass for all M edge-weight columns; sums are canonical per entry.
template <typename T>
Var<T> weighted_aggregate(Var<T> x, Var<T> w, std::span<const std::size_t> src, std::span<const std::size_t> dst,
                          std::size_t num_vertices) {
  Tape<T>& tape = detail::tape_of(x, w);
  const Tensor<T>& xv = x.value();
  const Tensor<T>& wv = w.value();
  const std::size_t e_count = src.size(), c = xv.cols(), m = wv.cols();
  require(dst.size() == e_count && wv.rows() == e_count, ErrorCode::ShapeMismatch,
          "weighted_aggregate: " + std::to_string(e_count) + " edges but " + std::to_string(wv.rows()) +
              " weight rows");
  std::vector<std::size_t> offsets(num_vertices + 1, 0);
  for (std::size_t e = 0; e < e_count; ++e) {
    require(src[e] < num_vertices && dst[e] < xv.rows(), ErrorCode::InvalidArgument,
            "weighted_aggregate: edge endpoint out of range");
    ++offsets[src[e] + 1];
  }
  for (std::size_t i = 0; i < num_vertices; ++i) offsets[i + 1] += offsets[i];
  std::vector<std::size_t> members(e_count);
  {
    std::vector<std::size_t> fill(offsets.begin(), offsets.end() - 1);
    for (std::size_t e = 0; e < e_count; ++e) members[fill[src[e]]++] = e;
  }
  Tensor<T> out(num_vertices, m * c);
  for (std::size_t i = 0; i < num_vertices; ++i) {
    const std::span<std::size_t> edges(members.data() + offsets[i], offsets[i + 1] - offsets[i]);
    if (edges.empty()) continue;
    canonical_order(edges, [&](std::size_t a, std::size_t b) {
      if (lex_less(wv.data() + a * m, wv.data() + b * m, m)) return true;
      if (lex_less(wv.data() + b * m, wv.data() + a * m, m)) return false;
      return lex_less(xv.data() + dst[a] * c, xv.data() + dst[b] * c, c);
    });
    T* row = out.data() + i * m * c;
    for (std::size_t e : edges) {
      const T* xr = xv.data() + dst[e] * c;
      for (std::size_t k = 0; k < m; ++k) {
        const T wk = wv(e, k);
        T* o = row + k * c;
        for (std::size_t ch = 0; ch < c; ++ch) o[ch] += wk * xr[ch];
      }
    }
  }
  std::vector<std::size_t> s(src.begin(), src.end()), d(dst.begin(), dst.end());
  const std::size_t ix = x.id(), iw = w.id();
  return tape.record(std::move(out), {x, w},
                     [ix, iw, s = std::move(s), d = std::move(d), c, m](Tape<T>& t, const Tensor<T>& g) {
                       const Tensor<T>& xv = t.value(ix);
                       const Tensor<T>& wv = t.value(iw);
                       const bool gx_on = t.requires_grad(ix), gw_on = t.requires_grad(iw);
                       Tensor<T>* gx = gx_on ? &t.grad(ix) : nullptr;
                       Tensor<T>* gw = gw_on ? &t.grad(iw) : nullptr;
                       for (std::size_t e = 0; e < s.size(); ++e) {
                         const T* grow = g.data() + s[e] * m * c;
                         const T* xrow = xv.data() + d[e] * c;
                         for (std::size_t k = 0; k < m; ++k) {
                           const T* gk = grow + k * c;
                           if (gx_on) {
                             const T wk = wv(e, k);
                             T* dx = gx->data() + d[e] * c;
                             for (std::size_t ch = 0; ch < c; ++ch) dx[ch] += wk * gk[ch];
                           }
                           if (gw_on) {
                             T acc = T(0);
                             for (std::size_t ch = 0; ch < c; ++ch) acc += gk[ch] * xrow[ch];
                             (*gw)(e, k) += acc;
                           }
                         }
                       }
                     });
}

// ------------------------------------------------------------------ indexing

/// out[k] = a[index[k]]; backward scatter-adds.
template <typename T>
Var<T> gather_rows(Var<T> a, std::span<const std::size_t> index) {
  Tape<T>& tape = detail::tape_of(a);
  const Tensor<T>& x = a.value();
  const std::size_t c = x.cols();
  Tensor<T> out(index.size(), c);
  for (std::size_t k = 0; k < index.size(); ++k) {
    require(index[k] < x.rows(), ErrorCode::InvalidArgument, "gather index out of range");
    std::copy_n(x.data() + index[k] * c, c, out.data() + k * c);
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  const std::size_t ia = a.id();
  return tape.record(std::move(out), {a}, [ia, idx = std::move(idx), c](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& ga = t.grad(ia);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      T* dst = ga.data() + idx[k] * c;
      const T* src = g.data() + k * c;
      for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += src[ch];
    }
  });
}

template <typename T>
Var<T> slice_cols(Var<T> a, std::size_t begin, std::size_t end) {
  Tape<T>& tape = detail::tape_of(a);
  const Tensor<T>& x = a.value();
  require(begin <= end && end <= x.cols(), ErrorCode::ShapeMismatch, "slice_cols out of range");
  Tensor<T> out(x.rows(), end - begin);
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = begin; j < end; ++j) out(i, j - begin) = x(i, j);
  const std::size_t ia = a.id();
  return tape.record(std::move(out), {a}, [ia, begin](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& ga = t.grad(ia);
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) ga(i, begin + j) += g(i, j);
  });
}

template <typename T>
Var<T> slice_rows(Var<T> a, std::size_t begin, std::size_t end) {
  Tape<T>& tape = detail::tape_of(a);
  const Tensor<T>& x = a.value();
  require(begin <= end && end <= x.rows(), ErrorCode::ShapeMismatch, "slice_rows out of range");
  std::vector<T> vals(x.data() + begin * x.cols(), x.data() + end * x.cols());
  const std::size_t ia = a.id();
  return tape.record(Tensor<T>(end - begin, x.cols(), std::move(vals)), {a},
                     [ia, begin](Tape<T>& t, const Tensor<T>& g) {
                       Tensor<T>& ga = t.grad(ia);
                       T* dst = ga.data() + begin * ga.cols();
                       for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
                     });
}

/// Stacks inputs vertically; all must share a column count.
template <typename T>
Var<T> concat_rows(std::span<const Var<T>> parts) {
  require(!parts.empty(), ErrorCode::ShapeMismatch, "concat_rows of nothing");
  Tape<T>& tape = detail::tape_of(parts[0]);
  const std::size_t c = parts[0].cols();
  std::size_t rows = 0;
  std::vector<std::size_t> ids, row_begin;
  for (const auto& p : parts) {
    require(p.cols() == c, ErrorCode::ShapeMismatch, "concat_rows column mismatch");
    row_begin.push_back(rows);
    ids.push_back(p.id());
    rows += p.rows();
  }
  Tensor<T> out(rows, c);
  for (std::size_t k = 0; k < parts.size(); ++k)
    std::copy_n(parts[k].value().data(), parts[k].value().size(), out.data() + row_begin[k] * c);
  return tape.record(std::move(out), parts,
                     [ids = std::move(ids), row_begin = std::move(row_begin), c](Tape<T>& t,
                                                                                 const Tensor<T>& g) {
                       for (std::size_t k = 0; k < ids.size(); ++k) {
                         if (!t.requires_grad(ids[k])) continue;
                         Tensor<T>& gk = t.grad(ids[k]);
                         const T* src = g.data() + row_begin[k] * c;
                         for (std::size_t i = 0; i < gk.size(); ++i) gk[i] += src[i];
                       }
                     });
}

/// Concatenates inputs side by side; all must share a row count.
template <typename T>
Var<T> concat_cols(std::span<const Var<T>> parts) {
  require(!parts.empty(), ErrorCode::ShapeMismatch, "concat_cols of nothing");
  Tape<T>& tape = detail::tape_of(parts[0]);
  const std::size_t r = parts[0].rows();
  std::size_t cols = 0;
  std::vector<std::size_t> ids, col_begin, widths;
  for (const auto& p : parts) {
    require(p.rows() == r, ErrorCode::ShapeMismatch, "concat_cols row mismatch");
    col_begin.push_back(cols);
    widths.push_back(p.cols());
    ids.push_back(p.id());
    cols += p.cols();
  }
  Tensor<T> out(r, cols);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor<T>& v = parts[k].value();
    for (std::size_t i = 0; i < r; ++i)
      std::copy_n(v.data() + i * widths[k], widths[k], out.data() + i * cols + col_begin[k]);
  }
  return tape.record(std::move(out), parts,
                     [ids = std::move(ids), col_begin = std::move(col_begin),
                      widths = std::move(widths)](Tape<T>& t, const Tensor<T>& g) {
                       for (std::size_t k = 0; k < ids.size(); ++k) {
                         if (!t.requires_grad(ids[k])) continue;
                         Tensor<T>& gk = t.grad(ids[k]);
                         for (std::size_t i = 0; i < gk.rows(); ++i)
                           for (std::size_t j = 0; j < widths[k]; ++j)
                             gk(i, j) += g(i, col_begin[k] + j);
                       }
                     });
}

/// Row-major reinterpretation with the same element count.
template <typename T>
Var<T> reshape(Var<T> a, std::size_t rows, std::size_t cols) {
  Tape<T>& tape = detail::tape_of(a);
  const Tensor<T>& x = a.value();
  require(rows * cols == x.size(), ErrorCode::ShapeMismatch,
          "reshape " + x.shape_string() + " to " + std::to_string(rows) + "x" + std::to_string(cols));
  std::vector<T> vals(x.values().begin(), x.values().end());
  const std::size_t ia = a.id();
  return tape.record(Tensor<T>(rows, cols, std::move(vals)), {a}, [ia](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& ga = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

/// Zero-extends or truncates the channel dimension to `cols`.
template <typename T>
Var<T> pad_cols(Var<T> a, std::size_t cols) {
  Tape<T>& tape = detail::tape_of(a);
  const Tensor<T>& x = a.value();
  const std::size_t keep = std::min(cols, x.cols());
  Tensor<T> out(x.rows(), cols);
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < keep; ++j) out(i, j) = x(i, j);
  const std::size_t ia = a.id();
  return tape.record(std::move(out), {a}, [ia, keep](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& ga = t.grad(ia);
    for (std::size_t i = 0; i < ga.rows(); ++i)
      for (std::size_t j = 0; j < keep; ++j) ga(i, j) += g(i, j);
  });
}

// --------------------------------------------------------- nonlinear layers

/// Softmax over each row, stabilised by the row maximum.
template <typename T>
Var<T> row_softmax(Var<T> a) {
  Tape<T>& tape = detail::tape_of(a);
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto row = out.row(i);
    const T mx = *std::max_element(row.begin(), row.end());
    T total = T(0);
    for (T& v : row) {
      v = std::exp(v - mx);
      total += v;
    }
    for (T& v : row) v /= total;
  }
  const std::size_t ia = a.id(), io = tape.size();
  return tape.record(std::move(out), {a}, [ia, io](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& y = t.value(io);
    Tensor<T> ga(g.rows(), g.cols());
    for (std::size_t i = 0; i < g.rows(); ++i) {
      T dot = T(0);
      for (std::size_t j = 0; j < g.cols(); ++j) dot += g(i, j) * y(i, j);
      for (std::size_t j = 0; j < g.cols(); ++j) ga(i, j) = y(i, j) * (g(i, j) - dot);
    }
    t.accumulate(ia, ga);
  });
}

/// Counter-based dropout key; the mask depends only on (seed, layer, step, element).
struct DropoutKey {
  std::uint64_t seed = 0;
  std::uint64_t layer = 0;
  std::uint64_t step = 0;
};

inline double dropout_uniform(const DropoutKey& key, std::uint64_t element) {
  std::uint64_t h = detail::splitmix64(key.seed);
  h = detail::splitmix64(h ^ key.layer);
  h = detail::splitmix64(h ^ key.step);
  h = detail::splitmix64(h ^ element);
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

/// Inverted dropout: kept entries are scaled by 1 / (1 - rate). Identity when not training.
template <typename T>
Var<T> dropout(Var<T> a, double rate, bool training, const DropoutKey& key) {
  require(rate >= 0.0 && rate < 1.0, ErrorCode::InvalidArgument, "dropout rate must be in [0, 1)");
  if (!training || rate == 0.0) return a;
  const T scale = static_cast<T>(1.0 / (1.0 - rate));
  Tensor<T> mask(a.rows(), a.cols());
  for (std::size_t i = 0; i < mask.size(); ++i)
    mask[i] = dropout_uniform(key, i) >= rate ? scale : T(0);
  return hadamard(a, detail::tape_of(a).constant(std::move(mask)));
}

/// Mean negative log-likelihood of softmax(logits) at the given labels.
template <typename T>
Var<T> cross_entropy(Var<T> logits, std::span<const std::size_t> labels) {
  Tape<T>& tape = detail::tape_of(logits);
  const Tensor<T>& z = logits.value();
  require(labels.size() == z.rows(), ErrorCode::ShapeMismatch,
          "cross_entropy: " + std::to_string(labels.size()) + " labels for " +
              std::to_string(z.rows()) + " rows");
  require(z.rows() > 0, ErrorCode::ShapeMismatch, "cross_entropy of empty batch");
  Tensor<T> probs(z.rows(), z.cols());
  T total = T(0);
  for (std::size_t i = 0; i < z.rows(); ++i) {
    require(labels[i] < z.cols(), ErrorCode::LabelOutOfRange,
            "label " + std::to_string(labels[i]) + " with " + std::to_string(z.cols()) + " classes");
    const auto row = z.row(i);
    const T mx = *std::max_element(row.begin(), row.end());
    T denom = T(0);
    for (std::size_t j = 0; j < z.cols(); ++j) {
      probs(i, j) = std::exp(row[j] - mx);
      denom += probs(i, j);
    }
    for (std::size_t j = 0; j < z.cols(); ++j) probs(i, j) /= denom;
    total += -(row[labels[i]] - mx - std::log(denom));
  }
  const T inv_n = T(1) / static_cast<T>(z.rows());
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  const std::size_t il = logits.id();
  return tape.record(Tensor<T>::scalar(total * inv_n), {logits},
                     [il, inv_n, probs = std::move(probs), lab = std::move(lab)](Tape<T>& t,
                                                                               const Tensor<T>& g) {
                       Tensor<T> gz = probs;
                       for (std::size_t i = 0; i < gz.rows(); ++i) gz(i, lab[i]) -= T(1);
                       for (T& v : gz.values()) v *= g[0] * inv_n;
                       t.accumulate(il, gz);
                     });
}

}  // namespace affconv::ad
