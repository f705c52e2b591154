#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "affconv/experiment.hpp"
#include "affconv/properties.hpp"
#include "affconv/rbf.hpp"

using namespace affconv;

namespace {

struct Globals {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  bool fp64 = false;
};

void print_metrics(const train::Metrics& m) {
  std::cout << "task " << train::to_string(m.task) << ", " << m.samples << " samples, loss "
            << format_double(m.loss) << "\n";
  switch (m.task) {
    case train::Task::Reconstruction:
      std::cout << "euclidean error mean " << format_double(m.error.mean) << " std " << format_double(m.error.std)
                << " median " << format_double(m.error.median) << "\n";
      break;
    case train::Task::Correspondence:
      std::cout << "accuracy at radius 0: " << format_double(m.accuracy) << "%\n";
      break;
    case train::Task::Classification:
      std::cout << "accuracy " << format_double(m.accuracy) << "%\n";
      break;
  }
}

int cmd_train(const Globals& g, const std::string& config, bool quiet) {
  const auto x = load_experiment(ConfigDoc::load(config), g.seed, g.threads, g.fp64);
  const auto r = run_training(x, [&](const train::EpochLog& e) {
    if (!quiet)
      std::cerr << "epoch " << e.epoch << " lr " << format_double(e.lr) << " loss " << format_double(e.train_loss)
                << "\n";
  });
  std::cout << r.parameters << " parameters, " << r.log.size() << " epochs\n";
  print_metrics(r.metrics);
  std::cout << "wrote " << r.checkpoint_path << "\n";
  return 0;
}

int cmd_eval(const Globals& g, const std::string& config, const std::string& checkpoint, const std::string& out) {
  const auto x = load_experiment(ConfigDoc::load(config), g.seed, g.threads, g.fp64);
  const auto m = run_evaluation(x, checkpoint);
  print_metrics(m);
  if (!out.empty()) {
    write_text_file(out, train::metrics_to_json(m));
    std::cout << "wrote " << out << "\n";
  }
  return 0;
}

int cmd_gradcheck(const std::string& op, double tol) {
  std::optional<OpKind> only;
  if (!op.empty()) only = parse_op_kind(op);
  const auto rows = props::gradcheck_operators(tol, only);
  double worst = 0.0;
  bool ok = true;
  for (const auto& r : rows) {
    std::printf("%-4s %-32s max rel error %.3e  (%s)\n", r.passed ? "ok" : "FAIL", r.variant.c_str(),
                r.max_rel_error, r.worst_param.c_str());
    worst = std::max(worst, r.max_rel_error);
    ok = ok && r.passed;
  }
  std::printf("max relative error %.3e, tolerance %.1e: %s\n", worst, tol, ok ? "pass" : "FAIL");
  return ok ? 0 : 2;
}

int cmd_rbf_fit(const std::string& points_csv, const std::string& targets_csv, const std::string& kernel,
                const std::string& degree, double lambda, const std::string& out, const std::string& query,
                const std::string& pred) {
  const auto pts = parse_csv(read_text_file(points_csv));
  const auto tgt = parse_csv(read_text_file(targets_csv));
  const auto m = rbf::fit(pts.values, tgt.values, rbf::parse_kernel(kernel), rbf::parse_degree(degree), lambda);
  const double resid = max_abs_diff(rbf::evaluate(m, pts.values), tgt.values);
  std::cout << "kernel " << rbf::to_string(m.kernel) << ", degree " << rbf::to_string(m.degree) << ", lambda "
            << format_double(lambda) << ", " << m.centers.rows() << " centres\n";
  std::cout << "|w|inf " << format_double(rbf::max_abs(m.weights)) << "\n";
  std::cout << "rcond " << format_double(m.rcond) << "\n";
  std::cout << "fit residual " << format_double(resid) << "\n";
  if (m.kernel.kind == rbf::KernelKind::Tps && m.degree == rbf::PolyDegree::Affine)
    std::cout << "bending energy " << format_double(rbf::bending_energy(m)) << "\n";
  for (std::size_t c = 0; c < m.outputs(); ++c) {
    const std::string name = c < tgt.header.size() ? tgt.header[c] : "y" + std::to_string(c);
    std::cout << "affine " << name << " = " << format_double(m.bias(0, c));
    for (std::size_t k = 0; k < m.dim(); ++k)
      std::cout << " + " << format_double(m.linear(k, c)) << "*"
                << (k < pts.header.size() ? pts.header[k] : "x" + std::to_string(k));
    std::cout << "\n";
  }
  save_checkpoint(out, rbf::to_checkpoint(m));
  std::cout << "wrote " << out << "\n";
  if (!query.empty()) {
    const auto q = parse_csv(read_text_file(query));
    const auto y = rbf::evaluate(m, q.values);
    const std::string csv = to_csv(tgt.header.size() == y.cols() ? tgt.header : std::vector<std::string>(y.cols(), "y"), y);
    if (pred.empty()) {
      std::cout << csv;
    } else {
      write_text_file(pred, csv);
      std::cout << "wrote " << pred << "\n";
    }
  }
  return 0;
}

int cmd_gen(const Globals& g, const std::string& spec_path, const std::string& out) {
  auto spec = ConfigDoc::load(spec_path);
  if (g.seed) spec.set("seed", std::to_string(*g.seed));
  std::string dir = spec.path("output", "data");
  if (!out.empty()) dir = out;
  const auto manifest = data::generate(spec, dir);
  std::cout << "wrote " << manifest << "\n";
  return 0;
}

int cmd_props(double tol) {
  bool ok = true;
  for (const auto& r : props::run_all(tol)) {
    std::printf("%-4s %-26s %7.2fs  %s\n", r.passed ? "ok" : "FAIL", r.name.c_str(), r.seconds, r.detail.c_str());
    ok = ok && r.passed;
  }
  return ok ? 0 : 2;
}

int cmd_report(const std::string& metrics, const std::string& out) {
  const auto csv = train::metrics_to_csv(train::metrics_from_json(read_text_file(metrics)));
  if (out.empty())
    std::cout << csv;
  else
    write_text_file(out, csv);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"affconv: graph convolutions with affine skip connections"};
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  auto* seed_opt = app.add_option("--seed", seed, "override the RNG seed")->group("Global");
  auto* threads_opt = app.add_option("--threads", threads, "worker threads for batch evaluation")
                          ->check(CLI::PositiveNumber)
                          ->group("Global");
  app.add_flag("--fp64", g.fp64, "force double precision")->group("Global");

  std::string config, checkpoint, out, op, kernel = "tps", degree = "1", query, pred, points, targets, spec, metrics;
  double tol = 1e-5, lambda = 0.0;
  bool quiet = false;

  auto* train = app.add_subcommand("train", "train a model from a config file");
  train->add_option("config", config, "training config")->required()->check(CLI::ExistingFile);
  train->add_flag("-q,--quiet", quiet, "no per-epoch log");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the config's test split");
  eval->add_option("config", config, "training config")->required()->check(CLI::ExistingFile);
  eval->add_option("checkpoint", checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_option("--out", out, "also write metrics JSON here");

  auto* grad = app.add_subcommand("gradcheck", "compare backward passes with central differences");
  grad->add_option("--op", op, "only this operator kind");
  grad->add_option("--tol", tol, "maximum relative error")->capture_default_str();

  auto* rbf_cmd = app.add_subcommand("rbf-fit", "fit a radial basis function interpolant");
  rbf_cmd->add_option("points", points, "CSV of centres")->required()->check(CLI::ExistingFile);
  rbf_cmd->add_option("targets", targets, "CSV of target values")->required()->check(CLI::ExistingFile);
  rbf_cmd->add_option("--kernel", kernel, "tps, polyharmonic[:k] or gaussian[:sigma]")->capture_default_str();
  rbf_cmd->add_option("--degree", degree, "polynomial degree: none, 0 or 1")->capture_default_str();
  rbf_cmd->add_option("--lambda", lambda, "smoothing")->capture_default_str();
  rbf_cmd->add_option("--out", out, "model checkpoint")->default_str("rbf_model.ckpt");
  rbf_cmd->add_option("--query", query, "CSV of query points")->check(CLI::ExistingFile);
  rbf_cmd->add_option("--pred", pred, "write query predictions here instead of stdout");

  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  gen->add_option("spec", spec, "generator spec")->required()->check(CLI::ExistingFile);
  gen->add_option("--out", out, "output directory (default: the spec's output key)");

  auto* props_cmd = app.add_subcommand("props", "run the invariant suite");
  props_cmd->add_option("--tol", tol, "gradient check tolerance")->capture_default_str();

  auto* report = app.add_subcommand("report", "convert metrics JSON to plot-ready CSV");
  report->add_option("metrics", metrics, "metrics.json")->required()->check(CLI::ExistingFile);
  report->add_option("--out", out, "write CSV here instead of stdout");

  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    if (code != 0) std::cerr << app.help();
    return code == 0 ? 0 : 1;
  }
  if (*seed_opt) g.seed = seed;
  if (*threads_opt) g.threads = threads;

  try {
    if (*train) return cmd_train(g, config, quiet);
    if (*eval) return cmd_eval(g, config, checkpoint, out);
    if (*grad) return cmd_gradcheck(op, tol);
    if (*rbf_cmd) return cmd_rbf_fit(points, targets, kernel, degree, lambda, out.empty() ? "rbf_model.ckpt" : out,
                                     query, pred);
    if (*gen) return cmd_gen(g, spec, out);
    if (*props_cmd) return cmd_props(tol);
    if (*report) return cmd_report(metrics, out);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return is_numerical(e.code()) ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
