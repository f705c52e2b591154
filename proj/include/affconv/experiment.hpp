#pragma once

// Training configs and the train / eval runs behind the CLI.
//
//   format_version = 1
//   dataset = data/manifest.txt
//   output = out
//   seed = 0
//   precision = fp64 | fp32
//   epochs, batch_size, lr, lr_decay, lr_decay_every, weight_decay, threads, normalize, radii
//   architecture = autoencoder | correspondence | classifier | custom
//   conv = monet  kernel_size = 9  wrapper = affine  center_weight  self_loops  pseudo  pseudo_dim
//   translation_invariant  gin_norm
//   channels = 16,16  latent = 8  lin_in = 16  hidden = 256  dropout = 0.5
//   spiral_length = 0 (auto)  pool_levels (graclus levels for varying graphs, auto)
//   in_channels, level_sizes, layers: ... end   (custom)
//
// Missing optimiser keys take the task defaults of train::default_train_config.

#include <filesystem>
#include <memory>
#include <string>

#include "affconv/config.hpp"
#include "affconv/datasets.hpp"
#include "affconv/report.hpp"
#include "affconv/training.hpp"

namespace affconv {

struct Experiment {
  std::string dataset;  // manifest path
  std::string output;
  std::uint64_t seed = 0;
  bool fp32 = false;
  train::TrainConfig train;
  ModelSpec model;
  data::Manifest manifest;
  std::size_t spiral_length = 0;
  std::size_t pool_levels = 0;
};

namespace detail {

inline std::size_t needed_spiral_length(const ModelSpec& s) {
  std::size_t len = 0;
  for (const auto& e : s.layers)
    if (e.type == LayerType::Conv && e.conv.kind == OpKind::SpiralNet)
      len = std::max(len, e.conv.kernel_size + (e.conv.center_weight ? 0 : 1));
  return len;
}

inline std::size_t pool_count(const ModelSpec& s) {
  std::size_t n = 0;
  for (const auto& e : s.layers) n += e.type == LayerType::Pool ? 1 : 0;
  return n;
}

inline bool needs_fixed_topology(const ModelSpec& s) {
  bool flat = false, spiral = false, cheb = false;
  for (const auto& e : s.layers) {
    flat = flat || e.type == LayerType::Flatten;
    if (e.type == LayerType::Conv) {
      spiral = spiral || e.conv.kind == OpKind::SpiralNet;
      cheb = cheb || e.conv.kind == OpKind::ChebNet;
    }
  }
  return spiral || (cheb && flat);
}

}  // namespace detail

/// Reads a training config. `seed_override` replaces the config seed when set.
inline Experiment load_experiment(const ConfigDoc& doc, std::optional<std::uint64_t> seed_override = std::nullopt,
                                  std::optional<std::size_t> threads_override = std::nullopt,
                                  bool force_fp64 = false) {
  Experiment x;
  x.dataset = doc.path("dataset");
  require(!x.dataset.empty(), ErrorCode::ParseError, doc.source() + ": missing key 'dataset'");
  x.output = doc.path("output", "out");
  x.manifest = data::Manifest::load(x.dataset);
  const train::Task task = x.manifest.task;
  if (doc.has("task"))
    require(train::parse_task(doc.get("task", "")) == task, ErrorCode::InvalidArgument,
            doc.source() + ": task differs from the dataset manifest");

  x.seed = doc.get_u64("seed", 0);
  if (seed_override) x.seed = *seed_override;
  const std::string precision = doc.get("precision", "fp64");
  require(precision == "fp64" || precision == "fp32", ErrorCode::ParseError, "precision must be fp64 or fp32");
  x.fp32 = precision == "fp32" && !force_fp64;

  auto& t = x.train;
  t = train::default_train_config(task);
  t.epochs = doc.get_size("epochs", t.epochs);
  t.batch_size = doc.get_size("batch_size", t.batch_size);
  t.adam.lr = doc.get_double("lr", t.adam.lr);
  t.adam.decay_factor = doc.get_double("lr_decay", t.adam.decay_factor);
  t.adam.decay_every = doc.get_size("lr_decay_every", t.adam.decay_every);
  t.adam.weight_decay = doc.get_double("weight_decay", t.adam.weight_decay);
  t.threads = doc.get_size("threads", 1);
  if (threads_override) t.threads = *threads_override;
  t.normalize = doc.get_bool("normalize", t.normalize);
  t.radii = doc.get_doubles("radii", t.radii);
  t.seed = x.seed;
  require(t.threads >= 1, ErrorCode::InvalidArgument, "threads must be >= 1");

  const std::string archname = doc.get("architecture", doc.has_list("layers") ? "custom" : "");
  require(!archname.empty(), ErrorCode::ParseError, doc.source() + ": missing key 'architecture'");
  if (archname == "custom") {
    require(doc.has_list("layers"), ErrorCode::ParseError, doc.source() + ": custom architecture needs a layers list");
    x.model.in_channels = doc.get_size("in_channels", 3);
    x.model.level_sizes = doc.get_sizes("level_sizes", {});
    for (const auto& line : doc.list("layers")) x.model.layers.push_back(parse_layer(line));
  } else {
    arch::ConvTemplate c;
    c.kind = parse_op_kind(doc.require_key("conv"));
    c.kernel_size = doc.get_size("kernel_size", 1);
    c.wrapper = parse_wrapper(doc.get("wrapper", "none"));
    c.center_weight = doc.get_bool("center_weight", true);
    c.self_loops = doc.get_bool("self_loops", true);
    c.pseudo_mode = parse_pseudo_mode(doc.get("pseudo", "cartesian"));
    c.pseudo_dim = doc.get_size("pseudo_dim", 3);
    c.feast_translation_invariant = doc.get_bool("translation_invariant", false);
    c.gin_norm = doc.get_bool("gin_norm", false);
    const std::size_t in = doc.get_size("in_channels", task == train::Task::Classification ? 1 : 3);
    if (archname == "autoencoder") {
      const auto ch = doc.get_sizes("channels", {16, 16});
      // level sizes come from the dataset's pooling hierarchy
      std::vector<std::size_t> sizes{load_mesh(x.manifest.template_mesh).num_vertices()};
      if (!x.manifest.pooling.empty())
        for (const auto& p : load_pooling(x.manifest.pooling)) sizes.push_back(p.coarse_size());
      require(sizes.size() >= ch.size() + 1, ErrorCode::InconsistentChannels,
              "autoencoder with " + std::to_string(ch.size()) + " pooling steps needs that many pooling levels");
      sizes.resize(ch.size() + 1);
      x.model = arch::autoencoder(c, sizes, ch, doc.get_size("latent", 8), in);
    } else if (archname == "correspondence") {
      const auto tmpl = load_mesh(x.manifest.template_mesh);
      x.model = arch::correspondence(c, tmpl.num_vertices(), in, doc.get_sizes("channels", {32, 64, 128}),
                                     doc.get_size("lin_in", 16), doc.get_size("hidden", 256),
                                     doc.get_double("dropout", 0.5));
    } else if (archname == "classifier") {
      x.model = arch::classifier(c, in, doc.get_size("classes", x.manifest.classes > 0 ? x.manifest.classes : 10),
                                 doc.get_sizes("channels", {32, 64, 64}), doc.get_size("hidden", 128),
                                 doc.get_double("dropout", 0.5));
    } else {
      fail(ErrorCode::ParseError, doc.source() + ": unknown architecture '" + archname + "'");
    }
  }
  x.spiral_length = doc.get_size("spiral_length", 0);
  if (x.spiral_length == 0) x.spiral_length = detail::needed_spiral_length(x.model);
  x.pool_levels = doc.get_size("pool_levels", detail::pool_count(x.model));
  if (detail::needs_fixed_topology(x.model))
    require(x.manifest.fixed_topology, ErrorCode::InvalidArgument,
            "spiralnet and chebnet autoencoders need a dataset with fixed_topology = true");
  for (const auto& k : doc.unused_keys()) fail(ErrorCode::ParseError, doc.source() + ": unknown key '" + k + "'");
  return x;
}

/// The fully expanded config; training from it reproduces the run.
inline std::string resolved_config(const Experiment& x) {
  ConfigWriter w;
  w.add("task", std::string(train::to_string(x.manifest.task)));
  w.add("dataset", std::filesystem::absolute(x.dataset).lexically_normal().string());
  w.add("output", std::filesystem::absolute(x.output).lexically_normal().string());
  w.add("seed", x.seed, 0);
  w.add("precision", x.fp32 ? "fp32" : "fp64");
  w.add("epochs", x.train.epochs).add("batch_size", x.train.batch_size);
  w.add("lr", x.train.adam.lr).add("lr_decay", x.train.adam.decay_factor);
  w.add("lr_decay_every", x.train.adam.decay_every).add("weight_decay", x.train.adam.weight_decay);
  w.add("threads", x.train.threads).add("normalize", x.train.normalize);
  w.add_seq("radii", x.train.radii);
  w.add("spiral_length", x.spiral_length).add("pool_levels", x.pool_levels);
  w.add("architecture", "custom").add("in_channels", x.model.in_channels);
  if (!x.model.level_sizes.empty()) w.add_seq("level_sizes", x.model.level_sizes);
  std::vector<std::string> layers;
  for (const auto& e : x.model.layers) layers.push_back(format_layer(e));
  w.list("layers", layers);
  return w.str();
}

inline train::Dataset load_experiment_data(const Experiment& x) {
  data::LoadOptions opts;
  opts.context.spiral_length = x.spiral_length;
  opts.pool_levels = x.pool_levels;
  auto d = data::load_dataset(x.manifest, opts);
  require(d.in_channels == x.model.in_channels, ErrorCode::InconsistentChannels,
          "dataset has " + std::to_string(d.in_channels) + " input channels, model expects " +
              std::to_string(x.model.in_channels));
  return d;
}

struct RunResult {
  train::Metrics metrics;
  std::vector<train::EpochLog> log;
  std::size_t parameters = 0;
  std::string checkpoint_path;
};

namespace detail {

template <typename T>
RunResult run_train(const Experiment& x, const train::Dataset& d,
                    const std::function<void(const train::EpochLog&)>& on_epoch) {
  namespace fs = std::filesystem;
  Model<T> model(x.model, x.seed);
  auto r = train::fit(model, d, x.train, on_epoch);
  fs::create_directories(x.output);
  RunResult out;
  out.metrics = r.metrics;
  out.log = r.log;
  out.parameters = model.count_parameters();
  out.checkpoint_path = (fs::path(x.output) / "checkpoint.ckpt").string();
  save_checkpoint(out.checkpoint_path,
                  train::make_checkpoint(model, r.norm,
                                         {{"task", std::string(train::to_string(d.task))},
                                          {"seed", std::to_string(x.seed)},
                                          {"precision", x.fp32 ? "fp32" : "fp64"}}));
  write_text_file((fs::path(x.output) / "metrics.json").string(), train::metrics_to_json(r.metrics));
  write_text_file((fs::path(x.output) / "metrics.csv").string(), train::metrics_to_csv(r.metrics));
  write_text_file((fs::path(x.output) / "train_log.csv").string(), train::train_log_to_csv(r.log));
  return out;
}

template <typename T>
train::Metrics run_eval(const Experiment& x, const train::Dataset& d, const Checkpoint& ck) {
  Model<T> model(x.model, x.seed);
  load_params(ck, model.params().pointers());
  const auto norm = train::normalizer_from_checkpoint(ck);
  const auto& set = d.test.empty() ? d.train : d.test;
  return train::evaluate(model, d, set, norm, x.train);
}

}  // namespace detail

/// Trains, then writes checkpoint.ckpt, metrics.json, metrics.csv, train_log.csv
/// and resolved_config.txt into the output directory.
inline RunResult run_training(const Experiment& x, const std::function<void(const train::EpochLog&)>& on_epoch = {}) {
  const auto d = load_experiment_data(x);
  std::filesystem::create_directories(x.output);
  write_text_file((std::filesystem::path(x.output) / "resolved_config.txt").string(), resolved_config(x));
  Experiment run = x;
  if (!x.manifest.normalization.empty())
    run.train.normalizer = train::normalizer_from_checkpoint(load_checkpoint(x.manifest.normalization));
  return x.fp32 ? detail::run_train<float>(run, d, on_epoch) : detail::run_train<double>(run, d, on_epoch);
}

inline train::Metrics run_evaluation(const Experiment& x, const std::string& checkpoint) {
  const auto d = load_experiment_data(x);
  const auto ck = load_checkpoint(checkpoint);
  return x.fp32 ? detail::run_eval<float>(x, d, ck) : detail::run_eval<double>(x, d, ck);
}

}  // namespace affconv
