#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <thread>
#include <unordered_map>
#include <vector>

#include "affconv/autodiff.hpp"
#include "affconv/checkpoint.hpp"
#include "affconv/error.hpp"
#include "affconv/mesh.hpp"
#include "affconv/model.hpp"

namespace affconv::train {

// ---------------------------------------------------------------- optimiser

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double decay_factor = 1.0;    // lr multiplier ...
  std::size_t decay_every = 1;  // ... applied every this many epochs
  double weight_decay = 0.0;    // coupled l2: grad += wd * param
};

/// lr0 * factor^floor(epoch / every)
inline double learning_rate(const AdamConfig& c, std::size_t epoch) {
  require(c.decay_every >= 1, ErrorCode::InvalidArgument, "decay_every must be >= 1");
  return c.lr * std::pow(c.decay_factor, static_cast<double>(epoch / c.decay_every));
}

template <typename T>
class Adam {
 public:
  Adam(AdamConfig cfg, std::vector<ad::Param<T>*> params) : cfg_(cfg), params_(std::move(params)) {
    for (auto* p : params_) {
      m_.emplace_back(p->value.rows(), p->value.cols());
      v_.emplace_back(p->value.rows(), p->value.cols());
    }
  }

  std::size_t steps() const noexcept { return t_; }
  const AdamConfig& config() const noexcept { return cfg_; }

  /// One update from the gradients currently stored in Param::grad.
  void step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto* p = params_[k];
      require(p->grad.rows() == p->value.rows() && p->grad.cols() == p->value.cols(), ErrorCode::ShapeMismatch,
              "gradient of " + p->name + " has shape " + p->grad.shape_string());
      for (std::size_t i = 0; i < p->value.size(); ++i) {
        double g = static_cast<double>(p->grad[i]);
        if (cfg_.weight_decay != 0.0) g += cfg_.weight_decay * static_cast<double>(p->value[i]);
        double& m = m_[k].values()[i];
        double& v = v_[k].values()[i];
        m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
        v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g * g;
        const double upd = lr * (m / bc1) / (std::sqrt(v / bc2) + cfg_.eps);
        p->value.values()[i] = static_cast<T>(static_cast<double>(p->value[i]) - upd);
      }
    }
  }

 private:
  AdamConfig cfg_;
  std::vector<ad::Param<T>*> params_;
  std::vector<Tensor<double>> m_, v_;
  std::size_t t_ = 0;
};

// ---------------------------------------------------------------- losses

/// Mean absolute difference over all entries.
template <typename T>
ad::Var<T> l1_loss(ad::Var<T> pred, ad::Var<T> target) {
  require(pred.rows() == target.rows() && pred.cols() == target.cols(), ErrorCode::ShapeMismatch,
          "l1 loss: prediction " + pred.value().shape_string() + " vs target " + target.value().shape_string());
  return ad::mean(ad::abs(ad::sub(pred, target)));
}

// ---------------------------------------------------------------- metrics

struct ErrorStats {
  double mean = 0.0;
  double std = 0.0;  // population
  double median = 0.0;  // lower median for even counts
  std::size_t count = 0;
};

inline ErrorStats error_stats(std::vector<double> e) {
  ErrorStats s;
  s.count = e.size();
  if (e.empty()) return s;
  double sum = 0.0;
  for (double v : e) sum += v;
  s.mean = sum / static_cast<double>(e.size());
  double sq = 0.0;
  for (double v : e) sq += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(sq / static_cast<double>(e.size()));
  const std::size_t mid = (e.size() - 1) / 2;
  std::nth_element(e.begin(), e.begin() + static_cast<std::ptrdiff_t>(mid), e.end());
  s.median = e[mid];
  return s;
}

/// Per-vertex Euclidean norms of the row differences.
inline std::vector<double> vertex_errors(const Tensor<double>& pred, const Tensor<double>& truth) {
  require(pred.rows() == truth.rows() && pred.cols() == truth.cols(), ErrorCode::ShapeMismatch,
          "error stats: prediction " + pred.shape_string() + " vs truth " + truth.shape_string());
  std::vector<double> out(pred.rows());
  for (std::size_t i = 0; i < pred.rows(); ++i) {
    double s = 0.0;
    for (std::size_t c = 0; c < pred.cols(); ++c) {
      const double d = pred(i, c) - truth(i, c);
      s += d * d;
    }
    out[i] = std::sqrt(s);
  }
  return out;
}

inline ErrorStats euclidean_error_stats(const Tensor<double>& pred, const Tensor<double>& truth) {
  return error_stats(vertex_errors(pred, truth));
}

struct CurvePoint {
  double radius = 0.0;    // fraction of the geodesic diameter
  double accuracy = 0.0;  // percent
};

inline std::vector<double> default_radii() {
  std::vector<double> r;
  for (int k = 0; k <= 20; ++k) r.push_back(0.01 * k);
  return r;
}

/// Accumulates geodesic hit counts over several meshes.
class CurveAccumulator {
 public:
  explicit CurveAccumulator(std::vector<double> radii = default_radii()) : radii_(std::move(radii)) {
    std::sort(radii_.begin(), radii_.end());
    for (double r : radii_) require(r >= 0.0, ErrorCode::InvalidArgument, "radii must be >= 0");
    hits_.assign(radii_.size(), 0);
  }

  void add(std::span<const std::size_t> predicted, std::span<const std::size_t> truth, const Graph& mesh) {
    require(predicted.size() == truth.size(), ErrorCode::ShapeMismatch, "prediction and truth counts differ");
    const double diameter = geodesic_diameter(mesh);
    require(std::isfinite(diameter), ErrorCode::DisconnectedMesh, "mesh is disconnected, diameter is infinite");
    // one Dijkstra per distinct true vertex
    std::unordered_map<std::size_t, std::vector<double>> cache;
    for (std::size_t k = 0; k < truth.size(); ++k) {
      require(truth[k] < mesh.num_vertices() && predicted[k] < mesh.num_vertices(), ErrorCode::LabelOutOfRange,
              "vertex label outside the mesh");
      auto it = cache.find(truth[k]);
      if (it == cache.end()) it = cache.emplace(truth[k], geodesic_distances(mesh, truth[k])).first;
      const double d = it->second[predicted[k]];
      for (std::size_t r = 0; r < radii_.size(); ++r)
        if (predicted[k] == truth[k] || d <= radii_[r] * diameter) ++hits_[r];
    }
    total_ += truth.size();
  }

  std::vector<CurvePoint> curve() const {
    std::vector<CurvePoint> out;
    for (std::size_t r = 0; r < radii_.size(); ++r)
      out.push_back({radii_[r], total_ == 0 ? 0.0 : 100.0 * static_cast<double>(hits_[r]) / static_cast<double>(total_)});
    return out;
  }

 private:
  std::vector<double> radii_;
  std::vector<std::size_t> hits_;
  std::size_t total_ = 0;
};

inline std::vector<CurvePoint> correspondence_accuracy_curve(std::span<const std::size_t> predicted,
                                                             std::span<const std::size_t> truth, const Graph& mesh,
                                                             std::vector<double> radii = default_radii()) {
  CurveAccumulator acc(std::move(radii));
  acc.add(predicted, truth, mesh);
  return acc.curve();
}

template <typename T>
std::vector<std::size_t> row_argmax(const Tensor<T>& t) {
  std::vector<std::size_t> out(t.rows());
  for (std::size_t i = 0; i < t.rows(); ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < t.cols(); ++c)
      if (t(i, c) > t(i, best)) best = c;
    out[i] = best;
  }
  return out;
}

// ---------------------------------------------------------------- data

enum class Task { Reconstruction, Correspondence, Classification };

inline std::string_view to_string(Task t) {
  switch (t) {
    case Task::Reconstruction: return "reconstruction";
    case Task::Correspondence: return "correspondence";
    case Task::Classification: return "classification";
  }
  return "?";
}

inline Task parse_task(std::string_view s) {
  for (Task t : {Task::Reconstruction, Task::Correspondence, Task::Classification})
    if (to_string(t) == s) return t;
  fail(ErrorCode::InvalidArgument, "unknown task '" + std::string(s) + "'");
}

struct Sample {
  Tensor<double> x;                 // vertex features
  Tensor<double> target;            // reconstruction target
  std::vector<std::size_t> labels;  // per-vertex (correspondence) or one class label
  std::size_t hierarchy = 0;        // index into Dataset::hierarchies
};

struct Dataset {
  Task task = Task::Reconstruction;
  std::vector<Hierarchy> hierarchies;
  std::vector<Sample> train;
  std::vector<Sample> test;
  std::size_t num_classes = 0;
  std::size_t in_channels = 3;
};

/// Per vertex-coordinate mean and population std of training features.
struct Normalizer {
  bool active = false;
  Tensor<double> mean, std;

  static Normalizer fit(const std::vector<Sample>& samples) {
    Normalizer n;
    if (samples.empty()) return n;
    const auto& first = samples.front().x;
    n.mean = Tensor<double>(first.rows(), first.cols());
    n.std = Tensor<double>(first.rows(), first.cols());
    for (const auto& s : samples) {
      require(s.x.rows() == first.rows() && s.x.cols() == first.cols(), ErrorCode::ShapeMismatch,
              "normalisation needs samples of identical shape");
      for (std::size_t i = 0; i < first.size(); ++i) n.mean.values()[i] += s.x[i];
    }
    const double inv = 1.0 / static_cast<double>(samples.size());
    for (double& v : n.mean.values()) v *= inv;
    for (const auto& s : samples)
      for (std::size_t i = 0; i < first.size(); ++i) {
        const double d = s.x[i] - n.mean[i];
        n.std.values()[i] += d * d;
      }
    for (double& v : n.std.values()) {
      v = std::sqrt(v * inv);
      if (!(v > 1e-12)) v = 1.0;
    }
    n.active = true;
    return n;
  }

  Tensor<double> apply(const Tensor<double>& x) const {
    if (!active) return x;
    Tensor<double> out = x;
    for (std::size_t i = 0; i < out.size(); ++i) out.values()[i] = (x[i] - mean[i]) / std[i];
    return out;
  }

  Tensor<double> invert(const Tensor<double>& x) const {
    if (!active) return x;
    Tensor<double> out = x;
    for (std::size_t i = 0; i < out.size(); ++i) out.values()[i] = x[i] * std[i] + mean[i];
    return out;
  }
};

// ---------------------------------------------------------------- loop

struct TrainConfig {
  std::size_t epochs = 1;
  std::size_t batch_size = 1;
  AdamConfig adam;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  bool normalize = true;  // reconstruction only
  std::vector<double> radii = default_radii();
  std::optional<Normalizer> normalizer;  // fixed statistics instead of fitting them
};

/// Optimiser defaults per task: mesh tasks decay 0.99 per epoch, classification
/// halves every 30 epochs with l2 weight 1e-4.
inline TrainConfig default_train_config(Task task) {
  TrainConfig c;
  switch (task) {
    case Task::Reconstruction:
      c.batch_size = 32;
      c.adam.decay_factor = 0.99;
      break;
    case Task::Correspondence:
      c.batch_size = 1;
      c.adam.decay_factor = 0.99;
      break;
    case Task::Classification:
      c.epochs = 500;
      c.batch_size = 64;
      c.adam.decay_factor = 0.5;
      c.adam.decay_every = 30;
      c.adam.weight_decay = 1e-4;
      break;
  }
  return c;
}

struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
};

struct Metrics {
  Task task = Task::Reconstruction;
  std::size_t samples = 0;
  double loss = 0.0;
  ErrorStats error;               // reconstruction
  std::vector<CurvePoint> curve;  // correspondence
  double accuracy = 0.0;          // classification and correspondence radius 0, percent
};

struct TrainResult {
  std::vector<EpochLog> log;
  Metrics metrics;
  Normalizer norm;
};

namespace detail {

// Runs f(i) for i in [0, n) on up to `threads` workers. Results must be
// written to per-index slots; order of execution is irrelevant.
inline void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& f) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(std::min(threads, n));
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < errors.size(); ++w)
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i; (i = next.fetch_add(1)) < n;) f(i);
      } catch (...) {
        errors[w] = std::current_exception();
        next = n;
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

template <typename T>
Tensor<T> to_t(const Tensor<double>& t) {
  if constexpr (std::is_same_v<T, double>) {
    return t;
  } else {
    return t.template cast<T>();
  }
}

template <typename T>
Tensor<double> to_d(const Tensor<T>& t) {
  if constexpr (std::is_same_v<T, double>) {
    return t;
  } else {
    return t.template cast<double>();
  }
}

template <typename T>
ad::Var<T> sample_loss(ad::Tape<T>& tape, const Model<T>& model, const Dataset& data, const Sample& s,
                       const Normalizer& norm, const ForwardOptions& opt, Tensor<double>* output) {
  const Hierarchy& h = data.hierarchies.at(s.hierarchy);
  ForwardOptions o = opt;
  o.skip_final_softmax = data.task != Task::Reconstruction;
  const Tensor<double> input = data.task == Task::Reconstruction ? norm.apply(s.x) : s.x;
  ad::Var<T> y = model.forward(tape, tape.constant(to_t<T>(input)), h, o);
  if (output != nullptr) *output = to_d(y.value());
  switch (data.task) {
    case Task::Reconstruction: return l1_loss(y, tape.constant(to_t<T>(norm.apply(s.target))));
    case Task::Correspondence:
    case Task::Classification: return ad::cross_entropy(y, std::span<const std::size_t>(s.labels));
  }
  return y;
}

}  // namespace detail

/// Loss and task metric of `model` on `samples`.
template <typename T>
Metrics evaluate(const Model<T>& model, const Dataset& data, const std::vector<Sample>& samples,
                 const Normalizer& norm, const TrainConfig& cfg) {
  Metrics m;
  m.task = data.task;
  m.samples = samples.size();
  std::vector<double> losses(samples.size());
  std::vector<Tensor<double>> outputs(samples.size());
  detail::parallel_for(samples.size(), cfg.threads, [&](std::size_t i) {
    ad::Tape<T> tape;
    tape.set_check_finite(true);
    losses[i] = static_cast<double>(
        detail::sample_loss(tape, model, data, samples[i], norm, ForwardOptions{}, &outputs[i]).value().item());
  });
  for (double l : losses) m.loss += l;
  if (!samples.empty()) m.loss /= static_cast<double>(samples.size());

  switch (data.task) {
    case Task::Reconstruction: {
      std::vector<double> errors;
      for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto e = vertex_errors(norm.invert(outputs[i]), samples[i].target);
        errors.insert(errors.end(), e.begin(), e.end());
      }
      m.error = error_stats(std::move(errors));
      break;
    }
    case Task::Correspondence: {
      CurveAccumulator acc(cfg.radii);
      for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto pred = row_argmax(outputs[i]);
        acc.add(pred, samples[i].labels, data.hierarchies.at(samples[i].hierarchy).levels.at(0).graph);
      }
      m.curve = acc.curve();
      m.accuracy = m.curve.empty() ? 0.0 : m.curve.front().accuracy;
      break;
    }
    case Task::Classification: {
      std::size_t hits = 0;
      for (std::size_t i = 0; i < samples.size(); ++i)
        if (row_argmax(outputs[i]).at(0) == samples[i].labels.at(0)) ++hits;
      m.accuracy = samples.empty() ? 0.0 : 100.0 * static_cast<double>(hits) / static_cast<double>(samples.size());
      break;
    }
  }
  return m;
}

/// Mini-batch Adam. Each sample runs on its own tape; per-sample gradients are
/// summed in sample order, so results do not depend on the thread count.
template <typename T>
TrainResult fit(Model<T>& model, const Dataset& data, const TrainConfig& cfg,
                const std::function<void(const EpochLog&)>& on_epoch = {}) {
  require(cfg.batch_size >= 1, ErrorCode::InvalidArgument, "batch_size must be >= 1");
  TrainResult result;
  if (data.task == Task::Reconstruction && cfg.normalize)
    result.norm = cfg.normalizer ? *cfg.normalizer : Normalizer::fit(data.train);

  auto params = model.params().pointers();
  std::unordered_map<const ad::Param<T>*, std::size_t> index;
  for (std::size_t k = 0; k < params.size(); ++k) index[params[k]] = k;
  Adam<T> adam(cfg.adam, params);

  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::uint64_t step = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = learning_rate(cfg.adam, epoch);
    std::mt19937_64 rng(ad::detail::splitmix64(cfg.seed ^ (0x5eedULL + epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;

    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t count = std::min(cfg.batch_size, order.size() - start);
      std::vector<double> losses(count);
      std::vector<std::vector<Tensor<T>>> grads(count);
      detail::parallel_for(count, cfg.threads, [&](std::size_t b) {
        const Sample& s = data.train[order[start + b]];
        ad::Tape<T> tape;
        tape.set_check_finite(true);
        ForwardOptions opt;
        opt.training = true;
        opt.dropout_seed = cfg.seed;
        opt.step = step + b;
        auto loss = detail::sample_loss(tape, model, data, s, result.norm, opt, nullptr);
        losses[b] = static_cast<double>(loss.value().item());
        tape.backward(loss, false);
        auto& g = grads[b];
        g.reserve(params.size());
        for (auto* p : params) g.emplace_back(p->value.rows(), p->value.cols());
        for (const auto& [p, grad] : tape.leaf_gradients()) {
          Tensor<T>& dst = g[index.at(p)];
          for (std::size_t i = 0; i < dst.size(); ++i) dst.values()[i] += (*grad)[i];
        }
      });
      for (auto* p : params) p->zero_grad();
      const T scale = T(1) / static_cast<T>(count);
      for (std::size_t b = 0; b < count; ++b) {
        epoch_loss += losses[b];
        for (std::size_t k = 0; k < params.size(); ++k) {
          T* d = params[k]->grad.data();
          const T* s = grads[b][k].data();
          for (std::size_t i = 0; i < grads[b][k].size(); ++i) d[i] += s[i] * scale;
        }
      }
      adam.step(lr);
      step += count;
    }

    EpochLog e{epoch, lr, order.empty() ? 0.0 : epoch_loss / static_cast<double>(order.size())};
    result.log.push_back(e);
    if (on_epoch) on_epoch(e);
  }

  const auto& eval_set = data.test.empty() ? data.train : data.test;
  result.metrics = evaluate(model, data, eval_set, result.norm, cfg);
  return result;
}

/// Parameters plus normalisation statistics in one checkpoint.
template <typename T>
Checkpoint make_checkpoint(Model<T>& model, const Normalizer& norm,
                           std::vector<std::pair<std::string, std::string>> meta = {}) {
  Checkpoint ck = checkpoint_from_params(model.params().pointers(), std::move(meta));
  if (norm.active) {
    ck.tensors.push_back({"norm.mean", norm.mean});
    ck.tensors.push_back({"norm.std", norm.std});
  }
  return ck;
}

inline Normalizer normalizer_from_checkpoint(const Checkpoint& ck) {
  Normalizer n;
  const auto* m = ck.find("norm.mean");
  const auto* s = ck.find("norm.std");
  if (m != nullptr && s != nullptr) {
    n.active = true;
    n.mean = m->value;
    n.std = s->value;
  }
  return n;
}

}  // namespace affconv::train
