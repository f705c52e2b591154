#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "affconv/autodiff.hpp"
#include "affconv/context.hpp"
#include "affconv/error.hpp"

namespace affconv {

enum class OpKind { Gcn, ChebNet, MoNet, FeaStNet, SpiralNet, Gin, SplineCnn };
enum class Wrapper { None, Residual, Affine };

inline std::string_view to_string(OpKind k) {
  switch (k) {
    case OpKind::Gcn: return "gcn";
    case OpKind::ChebNet: return "chebnet";
    case OpKind::MoNet: return "monet";
    case OpKind::FeaStNet: return "feastnet";
    case OpKind::SpiralNet: return "spiralnet";
    case OpKind::Gin: return "gin";
    case OpKind::SplineCnn: return "splinecnn";
  }
  return "?";
}

inline std::string_view to_string(Wrapper w) {
  switch (w) {
    case Wrapper::None: return "none";
    case Wrapper::Residual: return "residual";
    case Wrapper::Affine: return "affine";
  }
  return "?";
}

inline OpKind parse_op_kind(std::string_view s) {
  for (OpKind k : {OpKind::Gcn, OpKind::ChebNet, OpKind::MoNet, OpKind::FeaStNet, OpKind::SpiralNet,
                   OpKind::Gin, OpKind::SplineCnn})
    if (to_string(k) == s) return k;
  fail(ErrorCode::InvalidArgument, "unknown operator kind '" + std::string(s) + "'");
}

inline Wrapper parse_wrapper(std::string_view s) {
  for (Wrapper w : {Wrapper::None, Wrapper::Residual, Wrapper::Affine})
    if (to_string(w) == s) return w;
  fail(ErrorCode::InvalidArgument, "unknown wrapper '" + std::string(s) + "'");
}

/// Declarative description of one convolution layer.
struct LayerSpec {
  OpKind kind = OpKind::Gcn;
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  // ChebNet: number of weight matrices; MoNet/FeaStNet: kernels; SpiralNet: spiral
  // length; SplineCNN: basis functions per dimension. Ignored by GCN and GIN.
  std::size_t kernel_size = 1;
  Wrapper wrapper = Wrapper::None;
  bool center_weight = true;  // false: ChebNet / SpiralNet dagger variants
  bool self_loops = true;     // false: FeaStNet dagger variant (also honoured by monet, splinecnn)
  PseudoMode pseudo_mode = PseudoMode::Cartesian;
  std::size_t pseudo_dim = 3;  // cartesian dimension; degree mode is always 2
  bool feast_translation_invariant = false;
  double gin_eps = 0.0;
  bool gin_train_eps = false;
  bool gin_norm = false;

  std::size_t effective_pseudo_dim() const { return pseudo_mode == PseudoMode::Degree ? 2 : pseudo_dim; }

  void validate() const {
    require(in_channels >= 1 && out_channels >= 1, ErrorCode::InvalidArgument, "channel counts must be >= 1");
    require(kernel_size >= 1, ErrorCode::InvalidArgument, "kernel_size must be >= 1");
    require(center_weight || kind == OpKind::ChebNet || kind == OpKind::SpiralNet, ErrorCode::InvalidArgument,
            "center_weight=false is only defined for chebnet and spiralnet");
    require(self_loops || kind == OpKind::FeaStNet || kind == OpKind::MoNet || kind == OpKind::SplineCnn,
            ErrorCode::InvalidArgument, "self_loops=false is only defined for feastnet, monet and splinecnn");
    require(!feast_translation_invariant || kind == OpKind::FeaStNet, ErrorCode::InvalidArgument,
            "translation_invariant is a feastnet option");
    require(effective_pseudo_dim() >= 1, ErrorCode::InvalidArgument, "pseudo_dim must be >= 1");
    if (kind == OpKind::SplineCnn) {
      const double count = std::pow(static_cast<double>(kernel_size), static_cast<double>(effective_pseudo_dim()));
      require(count <= 4096, ErrorCode::InvalidArgument, "splinecnn basis too large");
    }
  }
};

/// Weight matrices of the layer counted the way the paper does (the affine
/// shortcut adds one). Biases and attention parameters are not counted.
inline std::size_t weight_matrix_count(const LayerSpec& s) {
  std::size_t n = 0;
  switch (s.kind) {
    case OpKind::Gcn: n = 1; break;
    case OpKind::ChebNet:
    case OpKind::MoNet:
    case OpKind::FeaStNet:
    case OpKind::SpiralNet: n = s.kernel_size; break;
    case OpKind::Gin: n = 2; break;
    case OpKind::SplineCnn: {
      n = 1;
      for (std::size_t d = 0; d < s.effective_pseudo_dim(); ++d) n *= s.kernel_size;
      break;
    }
  }
  return n + (s.wrapper == Wrapper::Affine ? 1 : 0);
}

/// Named learnable tensors with stable addresses.
template <typename T>
class ParamSet {
 public:
  ad::Param<T>& add(std::string name, Tensor<T> value) {
    for (const auto& p : items_)
      require(p.name != name, ErrorCode::InvalidArgument, "duplicate parameter name " + name);
    items_.emplace_back(std::move(name), std::move(value));
    return items_.back();
  }

  ad::Param<T>* find(std::string_view name) {
    for (auto& p : items_)
      if (p.name == name) return &p;
    return nullptr;
  }
  const ad::Param<T>* find(std::string_view name) const {
    for (const auto& p : items_)
      if (p.name == name) return &p;
    return nullptr;
  }
  ad::Param<T>& at(std::string_view name) {
    auto* p = find(name);
    require(p != nullptr, ErrorCode::InvalidArgument, "no parameter named " + std::string(name));
    return *p;
  }
  const ad::Param<T>& at(std::string_view name) const {
    const auto* p = find(name);
    require(p != nullptr, ErrorCode::InvalidArgument, "no parameter named " + std::string(name));
    return *p;
  }

  std::vector<ad::Param<T>*> pointers() {
    std::vector<ad::Param<T>*> out;
    for (auto& p : items_) out.push_back(&p);
    return out;
  }
  std::deque<ad::Param<T>>& items() noexcept { return items_; }
  const std::deque<ad::Param<T>>& items() const noexcept { return items_; }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& p : items_) n += p.size();
    return n;
  }

 private:
  std::deque<ad::Param<T>> items_;
};

namespace detail {

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Each tensor gets its own stream keyed by (seed, name), so values do not
// depend on creation order.
inline std::mt19937_64 param_rng(std::uint64_t seed, std::string_view name) {
  return std::mt19937_64(ad::detail::splitmix64(ad::detail::splitmix64(seed) ^ fnv1a(name)));
}

template <typename T>
Tensor<T> glorot(std::size_t rows, std::size_t cols, std::uint64_t seed, std::string_view name) {
  auto rng = param_rng(seed, name);
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor<T> out(rows, cols);
  for (T& v : out.values()) v = static_cast<T>(dist(rng));
  return out;
}

template <typename T>
Tensor<T> gaussian(std::size_t rows, std::size_t cols, double stddev, std::uint64_t seed, std::string_view name) {
  auto rng = param_rng(seed, name);
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor<T> out(rows, cols);
  for (T& v : out.values()) v = static_cast<T>(dist(rng));
  return out;
}

inline std::string pname(const std::string& prefix, std::string_view local) {
  return prefix.empty() ? std::string(local) : prefix + "." + std::string(local);
}

}  // namespace detail

/// Creates the layer's parameters under `prefix`. Weights are Glorot uniform,
/// biases zero, FeaStNet weights N(0, 0.1^2), MoNet log-variances zero.
template <typename T>
void init_params(const LayerSpec& s, const std::string& prefix, std::uint64_t seed, ParamSet<T>& out) {
  s.validate();
  const std::size_t in = s.in_channels, o = s.out_channels, m = s.kernel_size;
  auto name = [&](std::string_view local) { return detail::pname(prefix, local); };
  auto add_glorot = [&](std::string_view local, std::size_t r, std::size_t c) {
    out.add(name(local), detail::glorot<T>(r, c, seed, name(local)));
  };
  const bool affine = s.wrapper == Wrapper::Affine;
  auto add_bias = [&]() {
    if (!affine) out.add(name("bias"), Tensor<T>(1, o));
  };

  switch (s.kind) {
    case OpKind::Gcn:
      add_glorot("theta", in, o);
      add_bias();
      break;
    case OpKind::ChebNet:
      for (std::size_t k = 0; k < m; ++k) add_glorot("theta" + std::to_string(k), in, o);
      add_bias();
      break;
    case OpKind::MoNet: {
      const std::size_t d = s.effective_pseudo_dim();
      for (std::size_t k = 0; k < m; ++k) add_glorot("theta" + std::to_string(k), in, o);
      add_glorot("mu", m, d);
      out.add(name("log_sigma2"), Tensor<T>(m, d));
      add_bias();
      break;
    }
    case OpKind::FeaStNet: {
      auto add_normal = [&](std::string_view local, std::size_t r, std::size_t c) {
        out.add(name(local), detail::gaussian<T>(r, c, 0.1, seed, name(local)));
      };
      for (std::size_t k = 0; k < m; ++k) add_normal("weight" + std::to_string(k), in, o);
      add_normal("u", in, m);
      if (!s.feast_translation_invariant) add_normal("v", in, m);
      add_normal("c", 1, m);
      add_bias();
      break;
    }
    case OpKind::SpiralNet:
      add_glorot("weight", m * in, o);
      add_bias();
      break;
    case OpKind::Gin:
      add_glorot("mlp0.weight", in, o);
      out.add(name("mlp0.bias"), Tensor<T>(1, o));
      add_glorot("mlp1.weight", o, o);
      add_bias();
      if (s.gin_train_eps) out.add(name("eps"), Tensor<T>::scalar(static_cast<T>(s.gin_eps)));
      if (s.gin_norm) {
        out.add(name("norm.scale"), Tensor<T>(1, o, T(1)));
        out.add(name("norm.shift"), Tensor<T>(1, o));
      }
      break;
    case OpKind::SplineCnn: {
      std::size_t count = 1;
      for (std::size_t d = 0; d < s.effective_pseudo_dim(); ++d) count *= m;
      for (std::size_t b = 0; b < count; ++b) add_glorot("weight" + std::to_string(b), in, o);
      add_bias();
      break;
    }
  }
  if (affine) {
    add_glorot("affine.weight", in, o);
    out.add(name("affine.bias"), Tensor<T>(1, o));
  }
}

/// Degree-1 open B-spline tensor-product basis, one row per edge and m^d
/// columns. Basis index is sum_k i_k m^k. Coordinates must lie in [0, 1].
inline Tensor<double> bspline_basis(const Tensor<double>& u, std::size_t m) {
  const std::size_t e = u.rows(), d = u.cols();
  std::size_t count = 1;
  for (std::size_t k = 0; k < d; ++k) count *= m;
  Tensor<double> basis(e, count);
  std::vector<std::size_t> lo(d);
  std::vector<double> frac(d);
  for (std::size_t r = 0; r < e; ++r) {
    for (std::size_t k = 0; k < d; ++k) {
      const double v = u(r, k);
      require(v >= 0.0 && v <= 1.0, ErrorCode::PseudoCoordOutOfRange,
              "spline pseudo-coordinate " + std::to_string(v) + " outside [0, 1]");
      if (m == 1) {
        lo[k] = 0;
        frac[k] = 0.0;
        continue;
      }
      const double t = v * static_cast<double>(m - 1);
      std::size_t i = static_cast<std::size_t>(std::floor(t));
      if (i > m - 2) i = m - 2;
      lo[k] = i;
      frac[k] = t - static_cast<double>(i);
    }
    // all 2^d corner combinations
    const std::size_t corners = m == 1 ? 1 : (std::size_t{1} << d);
    for (std::size_t c = 0; c < corners; ++c) {
      double w = 1.0;
      std::size_t index = 0, stride = 1;
      for (std::size_t k = 0; k < d; ++k) {
        const bool upper = m > 1 && ((c >> k) & 1u);
        w *= m == 1 ? 1.0 : (upper ? frac[k] : 1.0 - frac[k]);
        index += (lo[k] + (upper ? 1 : 0)) * stride;
        stride *= m;
      }
      basis(r, index) += w;
    }
  }
  return basis;
}

/// One convolution layer with its optional wrapper.
template <typename T>
class ConvLayer {
 public:
  using V = ad::Var<T>;

  ConvLayer(LayerSpec spec, std::string prefix, std::uint64_t seed, ParamSet<T>& params)
      : spec_(spec), prefix_(std::move(prefix)), params_(&params) {
    init_params(spec_, prefix_, seed, params);
  }

  const LayerSpec& spec() const noexcept { return spec_; }
  const std::string& prefix() const noexcept { return prefix_; }
  ad::Param<T>& param(std::string_view local) { return params_->at(detail::pname(prefix_, local)); }
  const ad::Param<T>& param(std::string_view local) const { return params_->at(detail::pname(prefix_, local)); }

  /// Wrapped forward: conv(X) [+ X A + b | + pad(X)].
  V forward(ad::Tape<T>& tape, V x, const GraphContext& ctx) const {
    require(x.rows() == ctx.num_vertices(), ErrorCode::ShapeMismatch,
            "features have " + std::to_string(x.rows()) + " rows for " + std::to_string(ctx.num_vertices()) +
                " vertices");
    require(x.cols() == spec_.in_channels, ErrorCode::ShapeMismatch,
            "layer expects " + std::to_string(spec_.in_channels) + " channels, got " + std::to_string(x.cols()));
    V y = conv(tape, x, ctx);
    switch (spec_.wrapper) {
      case Wrapper::None: return y;
      case Wrapper::Residual: return ad::add(y, ad::pad_cols(x, spec_.out_channels));
      case Wrapper::Affine:
        return ad::add(ad::add(y, ad::matmul(x, leaf(tape, "affine.weight"))), leaf(tape, "affine.bias"));
    }
    return y;
  }

  /// The bare operator, without wrapper.
  V conv(ad::Tape<T>& tape, V x, const GraphContext& ctx) const {
    switch (spec_.kind) {
      case OpKind::Gcn: return with_bias(tape, gcn(tape, x, ctx));
      case OpKind::ChebNet: return with_bias(tape, chebnet(tape, x, ctx));
      case OpKind::MoNet: return with_bias(tape, monet(tape, x, ctx));
      case OpKind::FeaStNet: return with_bias(tape, feastnet(tape, x, ctx));
      case OpKind::SpiralNet: return with_bias(tape, spiralnet(tape, x, ctx));
      case OpKind::Gin: return gin(tape, x, ctx);
      case OpKind::SplineCnn: return with_bias(tape, splinecnn(tape, x, ctx));
    }
    return x;
  }

 private:
  V leaf(ad::Tape<T>& tape, std::string_view local) const {
    return tape.leaf(const_cast<ad::Param<T>&>(param(local)));
  }

  V with_bias(ad::Tape<T>& tape, V y) const {
    if (spec_.wrapper == Wrapper::Affine) return y;
    return ad::add(y, leaf(tape, "bias"));
  }

  template <typename U>
  static Tensor<T> as_t(const Tensor<U>& t) {
    if constexpr (std::is_same_v<T, U>) {
      return t;
    } else {
      return t.template cast<T>();
    }
  }

  struct EdgeSet {
    const std::vector<std::size_t>& src;
    const std::vector<std::size_t>& dst;
  };
  EdgeSet edges(const GraphContext& ctx) const {
    if (spec_.self_loops) return {ctx.loop_src, ctx.loop_dst};
    return {ctx.src, ctx.dst};
  }

  // pseudo-coordinates live on the looped edge set; pick the rows in use
  Tensor<double> edge_pseudo(const PseudoCoords& u, const GraphContext& ctx) const {
    if (spec_.self_loops) return u.values;
    Tensor<double> out(ctx.looped_index.size(), u.dim());
    for (std::size_t e = 0; e < ctx.looped_index.size(); ++e)
      for (std::size_t k = 0; k < u.dim(); ++k) out(e, k) = u.values(ctx.looped_index[e], k);
    return out;
  }

  V gcn(ad::Tape<T>& tape, V x, const GraphContext& ctx) const {
    V theta = leaf(tape, "theta");
    if (spec_.in_channels <= spec_.out_channels) return ad::matmul(ad::spmm(ctx.gcn, x), theta);
    return ad::spmm(ctx.gcn, ad::matmul(x, theta));
  }

  V chebnet(ad::Tape<T>& tape, V x, const GraphContext& ctx) const {
    const std::size_t m = spec_.kernel_size;
    const std::size_t first = spec_.center_weight ? 0 : 1;
    V prev2 = x;
    V prev1 = x;
    V out;
    for (std::size_t k = 0; k < first + m; ++k) {
      V tk;
      if (k == 0) {
        tk = x;
      } else if (k == 1) {
        tk = ad::spmm(ctx.cheb, x);
      } else {
        tk = ad::sub(ad::scalar_mul(ad::spmm(ctx.cheb, prev1), T(2)), prev2);
      }
      if (k >= 1) prev2 = prev1;
      prev1 = tk;
      if (k < first) continue;
      V term = ad::matmul(tk, leaf(tape, "theta" + std::to_string(k - first)));
      out = out.valid() ? ad::add(out, term) : term;
    }
    return out;
  }

  V monet(ad::Tape<T>& tape, V x, const GraphContext& ctx) const {
    const auto& u = ctx.pseudo(spec_.pseudo_mode);
    require(u.dim() == spec_.effective_pseudo_dim(), ErrorCode::ShapeMismatch,
            "monet expects pseudo-coordinates of dimension " + std::to_string(spec_.effective_pseudo_dim()));
    const std::size_t n = ctx.num_vertices();
    const EdgeSet es = edges(ctx);
    V uc = tape.constant(as_t(edge_pseudo(u, ctx)));
    V mu = leaf(tape, "mu");
    V inv_var = ad::exp(ad::scalar_mul(leaf(tape, "log_sigma2"), T(-1)));
    std::vector<V> weights, thetas;
    for (std::size_t k = 0; k < spec_.kernel_size; ++k) {
      V diff = ad::sub(uc, ad::slice_rows(mu, k, k + 1));
      V scaled = ad::hadamard(ad::hadamard(diff, diff), ad::slice_rows(inv_var, k, k + 1));
      weights.push_back(ad::exp(ad::scalar_mul(ad::row_sum(scaled), T(-0.5))));
      thetas.push_back(leaf(tape, "theta" + std::to_string(k)));
    }
    // [sum_j w_1 x_j | ... | sum_j w_M x_j] [theta_1; ...; theta_M]
    V agg = ad::weighted_aggregate(x, ad::concat_cols<T>(weights), es.src, es.dst, n);
    return ad::matmul(agg, ad::concat_rows<T>(thetas));
  }

  V feastnet(ad::Tape<T>& tape, V x, const GraphContext& ctx) const {
    const EdgeSet es = edges(ctx);
    const auto& src = es.src;
    const auto& dst = es.dst;
    const std::size_t n = ctx.num_vertices();
    if (ctx.policy == IsolatedPolicy::Strict) {
      std::vector<bool> has(n, false);
      for (std::size_t s : src) has[s] = true;
      for (std::size_t i = 0; i < n; ++i)
        require(has[i], ErrorCode::EmptyNeighborhood, "vertex " + std::to_string(i) + " has an empty neighbourhood");
    }
    V xu = ad::matmul(x, leaf(tape, "u"));
    V logits;
    if (spec_.feast_translation_invariant) {
      logits = ad::sub(ad::gather_rows(xu, dst), ad::gather_rows(xu, src));
    } else {
      logits = ad::add(ad::gather_rows(xu, src), ad::gather_rows(ad::matmul(x, leaf(tape, "v")), dst));
    }
    V q = ad::row_softmax(ad::add(logits, leaf(tape, "c")));
    std::vector<V> weights;
    for (std::size_t k = 0; k < spec_.kernel_size; ++k) weights.push_back(leaf(tape, "weight" + std::to_string(k)));
    V out = ad::matmul(ad::weighted_aggregate(x, q, src, dst, n), ad::concat_rows<T>(weights));
    // mean over the neighbourhood; isolated vertices stay zero
    Tensor<T> inv_deg(n, 1);
    for (std::size_t s : src) inv_deg(s, 0) += T(1);
    for (std::size_t i = 0; i < n; ++i)
      if (inv_deg(i, 0) > T(0)) inv_deg(i, 0) = T(1) / inv_deg(i, 0);
    return ad::hadamard(out, tape.constant(std::move(inv_deg)));
  }

  V spiralnet(ad::Tape<T>& tape, V x, const GraphContext& ctx) const {
    const std::size_t m = spec_.kernel_size;
    const std::size_t offset = spec_.center_weight ? 0 : 1;
    const Spirals& sp = ctx.spiral_table(m + offset);
    const std::size_t n = ctx.num_vertices();
    require(sp.num_vertices() == n, ErrorCode::SpiralUnavailable, "spiral table does not match the graph");
    std::vector<V> cols;
    std::vector<std::size_t> index(n);
    for (std::size_t k = 0; k < m; ++k) {
      for (std::size_t i = 0; i < n; ++i) index[i] = sp.indices[i * sp.length + k + offset];
      cols.push_back(ad::gather_rows(x, index));
    }
    V cat = ad::concat_cols<T>(cols);
    return ad::matmul(cat, leaf(tape, "weight"));
  }

  V gin(ad::Tape<T>& tape, V x, const GraphContext& ctx) const {
    const std::size_t n = ctx.num_vertices();
    V agg = ad::segment_reduce(ad::gather_rows(x, ctx.dst), ctx.src, n, ad::Reduce::Sum);
    V self;
    if (spec_.gin_train_eps) {
      V one_plus = ad::add(leaf(tape, "eps"), tape.constant(Tensor<T>::scalar(T(1))));
      self = ad::hadamard(x, one_plus);
    } else {
      self = ad::scalar_mul(x, static_cast<T>(1.0 + spec_.gin_eps));
    }
    V h = ad::add(self, agg);
    h = ad::relu(ad::add(ad::matmul(h, leaf(tape, "mlp0.weight")), leaf(tape, "mlp0.bias")));
    h = with_bias(tape, ad::matmul(h, leaf(tape, "mlp1.weight")));
    if (spec_.gin_norm) {
      // per-graph normalisation over vertices, with learnable scale and shift
      V centered = ad::sub(h, ad::col_mean(h));
      V var = ad::col_mean(ad::hadamard(centered, centered));
      V inv_std = ad::exp(ad::scalar_mul(ad::log(ad::add(var, tape.constant(Tensor<T>::scalar(T(1e-5))))), T(-0.5)));
      h = ad::add(ad::hadamard(ad::hadamard(centered, inv_std), leaf(tape, "norm.scale")), leaf(tape, "norm.shift"));
    }
    return h;
  }

  V splinecnn(ad::Tape<T>& tape, V x, const GraphContext& ctx) const {
    const auto& u = ctx.spline_pseudo(spec_.pseudo_mode);
    require(u.dim() == spec_.effective_pseudo_dim(), ErrorCode::ShapeMismatch,
            "splinecnn expects pseudo-coordinates of dimension " + std::to_string(spec_.effective_pseudo_dim()));
    const Tensor<double> basis = bspline_basis(edge_pseudo(u, ctx), spec_.kernel_size);
    const std::size_t n = ctx.num_vertices();
    const EdgeSet es = edges(ctx);
    V xj = ad::gather_rows(x, es.dst);
    V msg;
    for (std::size_t b = 0; b < basis.cols(); ++b) {
      Tensor<T> col(basis.rows(), 1);
      bool any = false;
      for (std::size_t r = 0; r < basis.rows(); ++r) {
        col(r, 0) = static_cast<T>(basis(r, b));
        any = any || basis(r, b) != 0.0;
      }
      if (!any) continue;
      V term = ad::matmul(ad::hadamard(xj, tape.constant(std::move(col))), leaf(tape, "weight" + std::to_string(b)));
      msg = msg.valid() ? ad::add(msg, term) : term;
    }
    if (!msg.valid()) msg = tape.constant(Tensor<T>(xj.rows(), spec_.out_channels));
    return ad::segment_reduce(msg, es.src, n, ad::Reduce::Mean);
  }

  LayerSpec spec_;
  std::string prefix_;
  ParamSet<T>* params_;
};

}  // namespace affconv
