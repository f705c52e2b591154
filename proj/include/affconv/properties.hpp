#pragma once

#include <chrono>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "affconv/context.hpp"
#include "affconv/gradcheck.hpp"
#include "affconv/model.hpp"
#include "affconv/operators.hpp"
#include "affconv/rbf.hpp"
#include "affconv/testing/oracles.hpp"
#include "affconv/testing/random_graphs.hpp"

// Invariant checks shared by the test suite, the acceptance binary and `affconv props`.
namespace affconv::props {

struct PropertyResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

struct GradRow {
  std::string variant;
  double max_rel_error = 0.0;
  std::string worst_param;
  bool passed = false;
};

namespace detail {

inline LayerSpec spec(OpKind k, std::size_t in, std::size_t out, std::size_t m = 1, Wrapper w = Wrapper::None) {
  LayerSpec s;
  s.kind = k;
  s.in_channels = in;
  s.out_channels = out;
  s.kernel_size = m;
  s.wrapper = w;
  return s;
}

inline void randomize(ParamSet<double>& params, std::uint64_t seed) {
  std::uint64_t k = seed;
  for (auto& p : params.items()) {
    auto r = testkit::random_tensor<double>(p.value.rows(), p.value.cols(), ++k, -0.5, 0.5);
    for (std::size_t i = 0; i < r.size(); ++i) p.value.values()[i] += r[i];
  }
}

inline Tensor<double> run(const ConvLayer<double>& l, const GraphContext& ctx, const Tensor<double>& x) {
  ad::Tape<double> tape;
  return l.forward(tape, tape.constant(x), ctx).value();
}

struct Built {
  ParamSet<double> params;
  std::unique_ptr<ConvLayer<double>> conv;
  Built(const LayerSpec& s, std::uint64_t seed, bool perturb) {
    conv = std::make_unique<ConvLayer<double>>(s, "l", seed, params);
    if (perturb) randomize(params, seed + 17);
  }
};

inline std::string fmt(double v) {
  std::ostringstream os;
  os.precision(3);
  os << std::scientific << v;
  return os.str();
}

template <typename F>
PropertyResult timed(std::string name, F&& body) {
  PropertyResult r;
  r.name = std::move(name);
  const auto t0 = std::chrono::steady_clock::now();
  try {
    body(r);
  } catch (const std::exception& e) {
    r.passed = false;
    r.detail = std::string("exception: ") + e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

}  // namespace detail

inline std::string describe(const LayerSpec& s) {
  std::string d = std::string(to_string(s.kind));
  if (s.wrapper != Wrapper::None) d = std::string(to_string(s.wrapper)) + "-" + d;
  if (!s.center_weight || !s.self_loops) d += "†";
  if (s.pseudo_mode == PseudoMode::Degree) d += "/degree";
  if (s.feast_translation_invariant) d += "/ti";
  if (s.gin_train_eps) d += "/eps";
  if (s.gin_norm) d += "/norm";
  return d + "(M=" + std::to_string(s.kernel_size) + ")";
}

/// Every operator and its variants, unwrapped. Spirals of length <= 6 suffice.
inline std::vector<LayerSpec> operator_variants(std::size_t in, std::size_t out) {
  using detail::spec;
  std::vector<LayerSpec> v;
  v.push_back(spec(OpKind::Gcn, in, out));
  v.push_back(spec(OpKind::ChebNet, in, out, 3));
  auto cheb_dag = spec(OpKind::ChebNet, in, out, 3);
  cheb_dag.center_weight = false;
  v.push_back(cheb_dag);
  v.push_back(spec(OpKind::MoNet, in, out, 3));
  auto monet_deg = spec(OpKind::MoNet, in, out, 2);
  monet_deg.pseudo_mode = PseudoMode::Degree;
  v.push_back(monet_deg);
  v.push_back(spec(OpKind::FeaStNet, in, out, 4));
  auto feast_dag = spec(OpKind::FeaStNet, in, out, 3);
  feast_dag.self_loops = false;
  v.push_back(feast_dag);
  auto feast_ti = spec(OpKind::FeaStNet, in, out, 3);
  feast_ti.feast_translation_invariant = true;
  v.push_back(feast_ti);
  v.push_back(spec(OpKind::SpiralNet, in, out, 5));
  auto spiral_dag = spec(OpKind::SpiralNet, in, out, 4);
  spiral_dag.center_weight = false;
  v.push_back(spiral_dag);
  v.push_back(spec(OpKind::Gin, in, out));
  auto gin_eps = spec(OpKind::Gin, in, out);
  gin_eps.gin_train_eps = true;
  gin_eps.gin_eps = 0.3;
  gin_eps.gin_norm = true;
  v.push_back(gin_eps);
  v.push_back(spec(OpKind::SplineCnn, in, out, 3));
  auto spline_deg = spec(OpKind::SplineCnn, in, out, 4);
  spline_deg.pseudo_mode = PseudoMode::Degree;
  v.push_back(spline_deg);
  return v;
}

inline constexpr Wrapper kAllWrappers[] = {Wrapper::None, Wrapper::Residual, Wrapper::Affine};

/// Central-difference check of weights and inputs on a 20-vertex mesh.
inline std::vector<GradRow> gradcheck_operators(double tol = 1e-5, std::optional<OpKind> only = std::nullopt) {
  const auto mesh = testkit::grid_mesh(5, 4, 6);
  ContextOptions opts;
  opts.spiral_length = 6;
  const auto ctx = make_context(mesh, opts);
  const auto x0 = testkit::random_tensor<double>(20, 3, 1);
  const auto probe = testkit::random_tensor<double>(20, 4, 2);
  std::vector<GradRow> rows;
  for (Wrapper w : kAllWrappers) {
    for (auto s : operator_variants(3, 4)) {
      if (only && s.kind != *only) continue;
      s.wrapper = w;
      detail::Built l(s, 3, true);
      ad::Param<double> xin("x", x0);
      auto params = l.params.pointers();
      params.push_back(&xin);
      const auto report = grad_check<double>(
          [&](ad::Tape<double>& t) {
            auto y = l.conv->forward(t, t.leaf(xin), ctx);
            return ad::sum(ad::hadamard(y, t.constant(probe)));
          },
          params, 1e-6, tol);
      rows.push_back({describe(s), report.max_rel_error, report.worst_param, report.passed()});
    }
  }
  return rows;
}

inline PropertyResult gradient_fidelity(double tol = 1e-5) {
  return detail::timed("gradient fidelity", [&](PropertyResult& r) {
    const auto rows = gradcheck_operators(tol);
    double worst = 0.0;
    std::string where, failed;
    for (const auto& row : rows) {
      if (row.max_rel_error >= worst) {
        worst = row.max_rel_error;
        where = row.variant;
      }
      if (!row.passed) failed += " " + row.variant;
    }
    r.passed = failed.empty();
    r.detail = std::to_string(rows.size()) + " variants, max rel error " + detail::fmt(worst) + " (" + where + ")" +
               (failed.empty() ? "" : ", failed:" + failed);
  });
}

/// Aff-blocks with every conv parameter zeroed must reduce to X A + b.
inline PropertyResult affine_exactness() {
  return detail::timed("affine exactness", [](PropertyResult& r) {
    const auto mesh = testkit::grid_mesh(4, 4, 3);
    ContextOptions opts;
    opts.spiral_length = 6;
    const auto ctx = make_context(mesh, opts);
    const auto x = testkit::random_tensor<double>(16, 3, 4);
    double worst = 0.0;
    std::size_t count = 0;
    for (auto s : operator_variants(3, 5)) {
      s.wrapper = Wrapper::Affine;
      detail::Built l(s, 7, false);
      for (auto& p : l.params.items())
        if (p.name.rfind("l.affine.", 0) != 0) p.value.fill(0.0);
      auto& a = l.conv->param("affine.weight").value;
      auto& b = l.conv->param("affine.bias").value;
      a = testkit::random_tensor<double>(3, 5, 1 + count);
      b = testkit::random_tensor<double>(1, 5, 2 + count);
      const auto y = detail::run(*l.conv, ctx, x);
      Tensor<double> ref(16, 5);
      for (std::size_t i = 0; i < 16; ++i)
        for (std::size_t o = 0; o < 5; ++o) {
          double v = b(0, o);
          for (std::size_t c = 0; c < 3; ++c) v += x(i, c) * a(c, o);
          ref(i, o) = v;
        }
      worst = std::max(worst, max_abs_diff(y, ref));
      ++count;
    }
    r.passed = worst < 1e-14;
    r.detail = std::to_string(count) + " Aff-blocks, max abs error " + detail::fmt(worst);
  });
}

/// Degree-1 TPS through exactly affine data: the kernel part must vanish.
inline PropertyResult rbf_reproduction(std::uint64_t seed = 11) {
  return detail::timed("rbf affine reproduction", [&](PropertyResult& r) {
    const auto pts = testkit::random_tensor<double>(50, 2, seed, 0.0, 1.0);
    const double a0 = 0.7, a1 = -1.3, b = 0.25;
    Tensor<double> y(50, 1);
    for (std::size_t i = 0; i < 50; ++i) y(i, 0) = a0 * pts(i, 0) + a1 * pts(i, 1) + b;
    const auto m = rbf::fit(pts, y, rbf::Kernel{}, rbf::PolyDegree::Affine, 0.0);
    const double w = rbf::max_abs(m.weights);
    const double coef = std::max({std::abs(m.linear(0, 0) - a0), std::abs(m.linear(1, 0) - a1),
                                  std::abs(m.bias(0, 0) - b)});
    const double energy = rbf::bending_energy(m);
    const double resid = max_abs_diff(rbf::evaluate(m, pts), y);
    r.passed = w < 1e-8 && coef < 1e-8 && energy < 1e-10 && resid < 1e-8;
    r.detail = "|w|inf " + detail::fmt(w) + ", affine err " + detail::fmt(coef) + ", bending " +
               detail::fmt(energy) + ", residual " + detail::fmt(resid);
  });
}

/// conv(PX) == P conv(X) bit for bit. Random graphs for everything but spirals,
/// small meshes (with co-permuted spiral sequences) for every operator.
inline PropertyResult permutation_equivariance(std::size_t trials = 20) {
  return detail::timed("permutation equivariance", [&](PropertyResult& r) {
    std::size_t checks = 0;
    std::string failed;
    for (std::uint64_t t = 0; t < trials; ++t) {
      std::mt19937_64 rng(ad::detail::splitmix64(t + 101));
      const std::size_t n = 10 + rng() % 21;
      const auto g = testkit::random_graph(n, 0.2, t, t % 4 != 3);
      const auto gp = testkit::random_permutation(n, t + 7);
      const auto gctx = make_context(g);
      const auto gpctx = make_context(g.relabeled(gp));

      const std::size_t w = 3 + rng() % 4, h = 3 + rng() % (30 / w - 2);
      const auto mesh = testkit::grid_mesh(w, h, t + 3);
      const auto mp = testkit::random_permutation(mesh.num_vertices(), t + 13);
      ContextOptions opts;
      opts.spiral_length = 6;
      const auto mctx = make_context(mesh, opts);
      auto mpctx = make_context(testkit::relabel_mesh(mesh, mp), opts);
      mpctx.spirals = mctx.spirals->relabeled(mp);

      for (Wrapper wr : kAllWrappers) {
        for (auto s : operator_variants(3, 4)) {
          s.wrapper = wr;
          detail::Built l(s, t, true);
          auto check = [&](const GraphContext& c, const GraphContext& pc, std::span<const VertexId> p) {
            const auto x = testkit::random_tensor<double>(c.num_vertices(), 3, t + 5);
            const auto lhs = detail::run(*l.conv, pc, testkit::permute_rows(x, p));
            const auto rhs = testkit::permute_rows(detail::run(*l.conv, c, x), p);
            ++checks;
            if (!(lhs == rhs)) failed += " " + describe(s) + "@" + std::to_string(t);
          };
          if (s.kind != OpKind::SpiralNet) check(gctx, gpctx, gp);
          check(mctx, mpctx, mp);
        }
      }
    }
    r.passed = failed.empty();
    r.detail = std::to_string(checks) + " exact comparisons on " + std::to_string(2 * trials) + " graphs" +
               (failed.empty() ? "" : ", failed:" + failed.substr(0, 300));
  });
}

/// Library forward against naive per-vertex loops.
inline PropertyResult oracle_equivalence() {
  return detail::timed("oracle equivalence", [](PropertyResult& r) {
    double worst = 0.0;
    std::size_t checks = 0;
    for (std::uint64_t t = 0; t < 3; ++t) {
      const auto mesh = testkit::grid_mesh(5, 4 + t, 10 + t);
      ContextOptions opts;
      opts.spiral_length = 6;
      const auto ctx = make_context(mesh, opts);
      const auto g = testkit::random_graph(12 + 6 * t, 0.15, t, false);
      const auto gctx = make_context(g);
      for (Wrapper w : kAllWrappers) {
        for (auto s : operator_variants(3, 4)) {
          s.wrapper = w;
          detail::Built l(s, 100 + t, true);
          const auto x = testkit::random_tensor<double>(mesh.num_vertices(), 3, 20 + t);
          worst = std::max(worst, max_abs_diff(detail::run(*l.conv, ctx, x),
                                               testkit::oracle_forward(*l.conv, mesh.graph(), x, &*ctx.spirals)));
          ++checks;
          if (s.kind == OpKind::SpiralNet) continue;
          const auto xg = testkit::random_tensor<double>(g.num_vertices(), 3, 30 + t);
          worst = std::max(worst, max_abs_diff(detail::run(*l.conv, gctx, xg), testkit::oracle_forward(*l.conv, g, xg)));
          ++checks;
        }
      }
    }
    r.passed = worst < 1e-12;
    r.detail = std::to_string(checks) + " forwards, max abs error " + detail::fmt(worst);
  });
}

/// † variants cost the same parameters; Aff-Conv(M) has as many weight matrices as Conv(M+1).
inline PropertyResult parameter_parity() {
  return detail::timed("parameter parity", [](PropertyResult& r) {
    std::string failed;
    std::size_t cheb4 = 0;
    for (std::size_t m = 1; m <= 9; ++m) {
      for (OpKind k : {OpKind::ChebNet, OpKind::SpiralNet, OpKind::FeaStNet}) {
        arch::ConvTemplate plain, dag;
        plain.kind = dag.kind = k;
        plain.kernel_size = dag.kernel_size = m;
        if (k == OpKind::FeaStNet)
          dag.self_loops = false;
        else
          dag.center_weight = false;
        Model<double> a(arch::autoencoder(plain, arch::coma_levels()), 1);
        Model<double> b(arch::autoencoder(dag, arch::coma_levels()), 1);
        if (a.count_parameters() != b.count_parameters())
          failed += " " + std::string(to_string(k)) + "†(M=" + std::to_string(m) + ")";
        if (k == OpKind::ChebNet && m == 4) cheb4 = a.count_parameters();
      }
      for (OpKind k : {OpKind::ChebNet, OpKind::MoNet, OpKind::FeaStNet, OpKind::SpiralNet, OpKind::SplineCnn}) {
        auto aff = detail::spec(k, 3, 3, m, Wrapper::Affine);
        auto conv = detail::spec(k, 3, 3, m + 1);
        aff.pseudo_dim = conv.pseudo_dim = 1;
        if (weight_matrix_count(aff) != weight_matrix_count(conv))
          failed += " Aff-" + std::string(to_string(k)) + "(M=" + std::to_string(m) + ")";
      }
    }
    r.passed = failed.empty();
    r.detail = "ChebNet M=4 autoencoder has " + std::to_string(cheb4) + " parameters" +
               (failed.empty() ? "" : ", mismatches:" + failed);
  });
}

/// FeaStNet without self-loops and a single kernel ignores each vertex's own feature.
inline PropertyResult self_loop_ablation() {
  return detail::timed("self-loop ablation", [](PropertyResult& r) {
    constexpr std::size_t leaves = 6;
    std::vector<Edge> edges;
    for (VertexId j = 1; j <= leaves; ++j) edges.push_back({0, j});
    const auto ctx = make_context(Graph::undirected(leaves + 1, edges));
    auto s = detail::spec(OpKind::FeaStNet, 3, 4, 1);
    s.self_loops = false;
    detail::Built l(s, 5, true);
    auto looped_spec = s;
    looped_spec.self_loops = true;
    detail::Built looped(looped_spec, 5, true);

    const auto x = testkit::random_tensor<double>(leaves + 1, 3, 8);
    const auto y = detail::run(*l.conv, ctx, x);
    const auto yl = detail::run(*looped.conv, ctx, x);
    bool independent = true;
    double looped_change = 0.0;
    for (std::size_t i = 0; i <= leaves; ++i) {
      auto x2 = x;
      for (std::size_t c = 0; c < 3; ++c) x2(i, c) += 1.5 + static_cast<double>(c);
      const auto y2 = detail::run(*l.conv, ctx, x2);
      const auto yl2 = detail::run(*looped.conv, ctx, x2);
      for (std::size_t o = 0; o < 4; ++o) {
        if (y2(i, o) != y(i, o)) independent = false;
        looped_change = std::max(looped_change, std::abs(yl2(i, o) - yl(i, o)));
      }
    }
    // centre output is the leaf mean through the single weight, plus bias
    const auto& wt = l.conv->param("weight0").value;
    const auto& bias = l.conv->param("bias").value;
    double closed = 0.0;
    for (std::size_t o = 0; o < 4; ++o) {
      double v = 0.0;
      for (std::size_t j = 1; j <= leaves; ++j)
        for (std::size_t c = 0; c < 3; ++c) v += x(j, c) * wt(c, o);
      closed = std::max(closed, std::abs(v / leaves + bias(0, o) - y(0, o)));
    }
    r.passed = independent && closed < 1e-12 && looped_change > 1e-6;
    r.detail = std::string(independent ? "outputs unchanged" : "outputs CHANGED") +
               " under own-feature perturbation, centre closed-form error " + detail::fmt(closed) +
               ", with self-loops change " + detail::fmt(looped_change);
  });
}

/// Everything that needs no training.
inline std::vector<PropertyResult> run_all(double tol = 1e-5) {
  return {gradient_fidelity(tol), affine_exactness(),   rbf_reproduction(), permutation_equivariance(),
          oracle_equivalence(),   parameter_parity(),   self_loop_ablation()};
}

}  // namespace affconv::props
