#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "affconv/autodiff.hpp"
#include "affconv/context.hpp"
#include "affconv/error.hpp"
#include "affconv/operators.hpp"
#include "affconv/pooling.hpp"

namespace affconv {

enum class LayerType { Conv, Linear, Pool, Unpool, Flatten, Unflatten, GlobalAvg, Dropout, Elu, Relu, Softmax };

inline std::string_view to_string(LayerType t) {
  switch (t) {
    case LayerType::Conv: return "conv";
    case LayerType::Linear: return "linear";
    case LayerType::Pool: return "pool";
    case LayerType::Unpool: return "unpool";
    case LayerType::Flatten: return "flatten";
    case LayerType::Unflatten: return "unflatten";
    case LayerType::GlobalAvg: return "global_avg";
    case LayerType::Dropout: return "dropout";
    case LayerType::Elu: return "elu";
    case LayerType::Relu: return "relu";
    case LayerType::Softmax: return "softmax";
  }
  return "?";
}

inline LayerType parse_layer_type(std::string_view s) {
  for (LayerType t : {LayerType::Conv, LayerType::Linear, LayerType::Pool, LayerType::Unpool, LayerType::Flatten,
                      LayerType::Unflatten, LayerType::GlobalAvg, LayerType::Dropout, LayerType::Elu,
                      LayerType::Relu, LayerType::Softmax})
    if (to_string(t) == s) return t;
  fail(ErrorCode::InvalidArgument, "unknown layer type '" + std::string(s) + "'");
}

/// One entry of the ordered layer list. `conv.in_channels` is filled in by
/// build_model from the running channel count.
struct LayerEntry {
  LayerType type = LayerType::Conv;
  LayerSpec conv;      // Conv
  std::size_t out = 0;  // Linear
  double rate = 0.0;    // Dropout

  static LayerEntry make_conv(LayerSpec s) { return {LayerType::Conv, s, 0, 0.0}; }
  static LayerEntry linear(std::size_t o) { return {LayerType::Linear, {}, o, 0.0}; }
  static LayerEntry dropout(double r) { return {LayerType::Dropout, {}, 0, r}; }
  static LayerEntry of(LayerType t) { return {t, {}, 0, 0.0}; }
};

struct ModelSpec {
  std::size_t in_channels = 3;
  // vertices per resolution level, finest first; empty when graphs vary in size
  std::vector<std::size_t> level_sizes;
  std::vector<LayerEntry> layers;
};

/// Graph contexts per resolution level plus the pooling steps between them.
struct Hierarchy {
  std::vector<GraphContext> levels;  // levels[0] is the input graph
  std::vector<PoolingLevel> pools;   // pools[k] maps level k to level k+1

  std::size_t depth() const noexcept { return levels.size(); }
};

/// Builds contexts for the fine graph and every pooled graph.
inline Hierarchy make_hierarchy(const GraphContext& fine, std::vector<PoolingLevel> pools,
                                const ContextOptions& opts = {}) {
  Hierarchy h;
  h.levels.push_back(fine);
  for (const auto& p : pools) {
    require(p.fine_size() == h.levels.back().num_vertices(), ErrorCode::ShapeMismatch,
            "pooling level expects " + std::to_string(p.fine_size()) + " vertices, graph has " +
                std::to_string(h.levels.back().num_vertices()));
    ContextOptions o = opts;
    o.spiral_length = 0;
    h.levels.push_back(make_context(p.coarse, o));
  }
  h.pools = std::move(pools);
  return h;
}

struct ForwardOptions {
  bool training = false;
  std::uint64_t dropout_seed = 0;
  std::uint64_t step = 0;
  bool skip_final_softmax = false;  // return logits, for the fused cross-entropy
};

namespace detail {

// Shape bookkeeping shared by validation and forward.
struct ShapeState {
  bool flat = false;
  std::size_t level = 0;
  std::size_t channels = 0;
};

}  // namespace detail

template <typename T>
class Model {
 public:
  using V = ad::Var<T>;

  Model(ModelSpec spec, std::uint64_t seed) : spec_(std::move(spec)), seed_(seed) { build(); }
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelSpec& spec() const noexcept { return spec_; }
  ParamSet<T>& params() noexcept { return params_; }
  const ParamSet<T>& params() const noexcept { return params_; }
  std::size_t count_parameters() const { return params_.count(); }
  std::size_t output_channels() const noexcept { return out_channels_; }
  std::size_t levels_used() const noexcept { return max_level_ + 1; }

  V forward(ad::Tape<T>& tape, V x, const Hierarchy& h, const ForwardOptions& opt = {}) const {
    require(h.depth() >= levels_used(), ErrorCode::ShapeMismatch,
            "model needs " + std::to_string(levels_used()) + " resolution levels, hierarchy has " +
                std::to_string(h.depth()));
    require(x.cols() == spec_.in_channels, ErrorCode::InconsistentChannels,
            "model expects " + std::to_string(spec_.in_channels) + " input channels, got " +
                std::to_string(x.cols()));
    std::size_t level = 0;
    for (std::size_t k = 0; k < spec_.layers.size(); ++k) {
      const LayerEntry& e = spec_.layers[k];
      switch (e.type) {
        case LayerType::Conv: x = convs_[k]->forward(tape, x, h.levels[level]); break;
        case LayerType::Linear:
          x = ad::add(ad::matmul(x, tape.leaf(const_cast<ad::Param<T>&>(params_.at(name(k, "weight"))))),
                      tape.leaf(const_cast<ad::Param<T>&>(params_.at(name(k, "bias")))));
          break;
        case LayerType::Pool: x = pool_apply(x, h.pools[level++], true); break;
        case LayerType::Unpool: x = pool_apply(x, h.pools[--level], false); break;
        case LayerType::Flatten: x = ad::reshape(x, 1, x.rows() * x.cols()); break;
        case LayerType::Unflatten: {
          const std::size_t n = h.levels[level].num_vertices();
          require(x.cols() % n == 0, ErrorCode::ShapeMismatch, "unflatten width does not divide vertex count");
          x = ad::reshape(x, n, x.cols() / n);
          break;
        }
        case LayerType::GlobalAvg: x = ad::col_mean(x); break;
        case LayerType::Dropout:
          x = ad::dropout(x, e.rate, opt.training, ad::DropoutKey{opt.dropout_seed, k, opt.step});
          break;
        case LayerType::Elu: x = ad::elu(x); break;
        case LayerType::Relu: x = ad::relu(x); break;
        case LayerType::Softmax:
          if (!(opt.skip_final_softmax && k + 1 == spec_.layers.size())) x = ad::row_softmax(x);
          break;
      }
    }
    return x;
  }

  /// Convenience inference pass on plain values.
  Tensor<T> predict(const Tensor<T>& x, const Hierarchy& h) const {
    ad::Tape<T> tape;
    return forward(tape, tape.constant(x), h).value();
  }

 private:
  static std::string name(std::size_t k, std::string_view local) {
    return "layers." + std::to_string(k) + "." + std::string(local);
  }

  void build() {
    require(spec_.in_channels >= 1, ErrorCode::InconsistentChannels, "model needs at least one input channel");
    convs_.resize(spec_.layers.size());
    detail::ShapeState s{false, 0, spec_.in_channels};
    const bool fixed = !spec_.level_sizes.empty();
    auto where = [](std::size_t k, LayerType t) {
      return "layer " + std::to_string(k) + " (" + std::string(to_string(t)) + "): ";
    };
    for (std::size_t k = 0; k < spec_.layers.size(); ++k) {
      LayerEntry& e = spec_.layers[k];
      switch (e.type) {
        case LayerType::Conv:
          require(!s.flat, ErrorCode::InconsistentChannels, where(k, e.type) + "needs per-vertex features");
          e.conv.in_channels = s.channels;
          convs_[k] = std::make_unique<ConvLayer<T>>(e.conv, "layers." + std::to_string(k), seed_, params_);
          s.channels = e.conv.out_channels;
          break;
        case LayerType::Linear: {
          require(e.out >= 1, ErrorCode::InconsistentChannels, where(k, e.type) + "needs out >= 1");
          const std::string w = name(k, "weight");
          params_.add(w, detail::glorot<T>(s.channels, e.out, seed_, w));
          params_.add(name(k, "bias"), Tensor<T>(1, e.out));
          s.channels = e.out;
          break;
        }
        case LayerType::Pool:
          require(!s.flat, ErrorCode::InconsistentChannels, where(k, e.type) + "needs per-vertex features");
          ++s.level;
          require(!fixed || s.level < spec_.level_sizes.size(), ErrorCode::InconsistentChannels,
                  where(k, e.type) + "pools below the coarsest level");
          max_level_ = std::max(max_level_, s.level);
          break;
        case LayerType::Unpool:
          require(!s.flat && s.level > 0, ErrorCode::InconsistentChannels,
                  where(k, e.type) + "has no matching pool");
          --s.level;
          break;
        case LayerType::Flatten:
          require(fixed && !s.flat, ErrorCode::InconsistentChannels,
                  where(k, e.type) + "needs fixed level sizes and per-vertex features");
          s.channels *= spec_.level_sizes[s.level];
          s.flat = true;
          break;
        case LayerType::Unflatten: {
          require(fixed && s.flat, ErrorCode::InconsistentChannels, where(k, e.type) + "needs flat features");
          const std::size_t n = spec_.level_sizes[s.level];
          require(s.channels % n == 0, ErrorCode::InconsistentChannels,
                  where(k, e.type) + std::to_string(s.channels) + " features do not split over " +
                      std::to_string(n) + " vertices");
          s.channels /= n;
          s.flat = false;
          break;
        }
        case LayerType::GlobalAvg:
          require(!s.flat, ErrorCode::InconsistentChannels, where(k, e.type) + "needs per-vertex features");
          s.flat = true;
          break;
        case LayerType::Dropout:
          require(e.rate >= 0.0 && e.rate < 1.0, ErrorCode::InvalidArgument, where(k, e.type) + "rate in [0, 1)");
          break;
        case LayerType::Elu:
        case LayerType::Relu:
        case LayerType::Softmax: break;
      }
    }
    out_channels_ = s.channels;
  }

  ModelSpec spec_;
  std::uint64_t seed_;
  ParamSet<T> params_;
  std::vector<std::unique_ptr<ConvLayer<T>>> convs_;
  std::size_t out_channels_ = 0;
  std::size_t max_level_ = 0;
};

namespace arch {

/// Operator settings shared by every conv of an architecture.
struct ConvTemplate {
  OpKind kind = OpKind::Gcn;
  std::size_t kernel_size = 1;
  Wrapper wrapper = Wrapper::None;
  bool center_weight = true;
  bool self_loops = true;
  PseudoMode pseudo_mode = PseudoMode::Cartesian;
  std::size_t pseudo_dim = 3;
  bool feast_translation_invariant = false;
  bool gin_norm = false;

  LayerSpec make(std::size_t out) const {
    LayerSpec s;
    s.kind = kind;
    s.out_channels = out;
    s.kernel_size = kernel_size;
    s.wrapper = wrapper;
    s.center_weight = center_weight;
    s.self_loops = self_loops;
    s.pseudo_mode = pseudo_mode;
    s.pseudo_dim = pseudo_dim;
    s.feast_translation_invariant = feast_translation_invariant;
    s.gin_norm = gin_norm;
    return s;
  }
};

/// Encoder {Conv(c_k) -> ELU -> Pool} over `channels`, FC(latent); mirrored
/// decoder FC -> {Unpool -> Conv -> ELU} -> Conv(in_channels). One pooling
/// step per encoder conv, so level_sizes needs channels.size() + 1 entries.
inline ModelSpec autoencoder(const ConvTemplate& conv, std::vector<std::size_t> level_sizes,
                             std::vector<std::size_t> channels = {32, 32, 32, 64}, std::size_t latent = 16,
                             std::size_t in_channels = 3) {
  require(level_sizes.size() == channels.size() + 1, ErrorCode::InconsistentChannels,
          "autoencoder needs one more level size than encoder convs");
  ModelSpec s;
  s.in_channels = in_channels;
  s.level_sizes = std::move(level_sizes);
  for (std::size_t c : channels) {
    s.layers.push_back(LayerEntry::make_conv(conv.make(c)));
    s.layers.push_back(LayerEntry::of(LayerType::Elu));
    s.layers.push_back(LayerEntry::of(LayerType::Pool));
  }
  s.layers.push_back(LayerEntry::of(LayerType::Flatten));
  s.layers.push_back(LayerEntry::linear(latent));
  s.layers.push_back(LayerEntry::linear(s.level_sizes.back() * channels.back()));
  s.layers.push_back(LayerEntry::of(LayerType::Unflatten));
  for (std::size_t k = channels.size(); k-- > 0;) {
    s.layers.push_back(LayerEntry::of(LayerType::Unpool));
    s.layers.push_back(LayerEntry::make_conv(conv.make(channels[k])));
    s.layers.push_back(LayerEntry::of(LayerType::Elu));
  }
  s.layers.push_back(LayerEntry::make_conv(conv.make(in_channels)));
  return s;
}

/// Lin(16) -> Conv(32) -> Conv(64) -> Conv(128) -> Lin(256) -> Dropout -> Lin(N) -> softmax,
/// ELU after each conv and the first Lin.
inline ModelSpec correspondence(const ConvTemplate& conv, std::size_t num_vertices, std::size_t in_channels = 3,
                                std::vector<std::size_t> channels = {32, 64, 128}, std::size_t lin_in = 16,
                                std::size_t lin_hidden = 256, double dropout = 0.5) {
  ModelSpec s;
  s.in_channels = in_channels;
  s.level_sizes = {num_vertices};
  s.layers.push_back(LayerEntry::linear(lin_in));
  s.layers.push_back(LayerEntry::of(LayerType::Elu));
  for (std::size_t c : channels) {
    s.layers.push_back(LayerEntry::make_conv(conv.make(c)));
    s.layers.push_back(LayerEntry::of(LayerType::Elu));
  }
  s.layers.push_back(LayerEntry::linear(lin_hidden));
  s.layers.push_back(LayerEntry::dropout(dropout));
  s.layers.push_back(LayerEntry::linear(num_vertices));
  s.layers.push_back(LayerEntry::of(LayerType::Softmax));
  return s;
}

/// Conv(32) -> Pool(4) -> Conv(64) -> Pool(4) -> Conv(64) -> AvgP -> FC(128) -> Dropout -> FC(classes),
/// ELU after every layer but the last. Pool(4) is two graclus steps.
inline ModelSpec classifier(const ConvTemplate& conv, std::size_t in_channels = 1, std::size_t classes = 10,
                            std::vector<std::size_t> channels = {32, 64, 64}, std::size_t hidden = 128,
                            double dropout = 0.5) {
  ModelSpec s;
  s.in_channels = in_channels;
  for (std::size_t k = 0; k < channels.size(); ++k) {
    if (k > 0) {
      s.layers.push_back(LayerEntry::of(LayerType::Pool));
      s.layers.push_back(LayerEntry::of(LayerType::Pool));
    }
    s.layers.push_back(LayerEntry::make_conv(conv.make(channels[k])));
    s.layers.push_back(LayerEntry::of(LayerType::Elu));
  }
  s.layers.push_back(LayerEntry::of(LayerType::GlobalAvg));
  s.layers.push_back(LayerEntry::linear(hidden));
  s.layers.push_back(LayerEntry::of(LayerType::Elu));
  s.layers.push_back(LayerEntry::dropout(dropout));
  s.layers.push_back(LayerEntry::linear(classes));
  s.layers.push_back(LayerEntry::of(LayerType::Softmax));
  return s;
}

/// Vertex counts of the CoMA template and its four downsampled versions.
inline std::vector<std::size_t> coma_levels() { return {5023, 1256, 314, 79, 20}; }

}  // namespace arch

}  // namespace affconv
