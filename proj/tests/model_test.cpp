#include <gtest/gtest.h>

#include <cmath>

#include "affconv/gradcheck.hpp"
#include "affconv/model.hpp"
#include "affconv/testing/random_graphs.hpp"

using namespace affconv;

namespace {

arch::ConvTemplate tmpl(OpKind k, std::size_t m, Wrapper w = Wrapper::None) {
  arch::ConvTemplate t;
  t.kind = k;
  t.kernel_size = m;
  t.wrapper = w;
  return t;
}

std::size_t coma_count(arch::ConvTemplate t) {
  return Model<double>(arch::autoencoder(t, arch::coma_levels()), 0).count_parameters();
}

// rounds to the 0.1k precision used in the results table
double in_k(std::size_t n) { return std::round(static_cast<double>(n) / 100.0) / 10.0; }

Hierarchy grid_hierarchy(std::size_t w, std::size_t h, std::size_t levels, std::uint64_t seed = 1) {
  const auto mesh = testkit::grid_mesh(w, h, seed);
  ContextOptions opts;
  opts.spiral_length = 7;
  return make_hierarchy(make_context(mesh, opts), graclus_coarsen(mesh.graph(), levels));
}

}  // namespace

TEST(ModelCount, SingleLinear) {
  ModelSpec s;
  s.in_channels = 2;
  s.layers = {LayerEntry::linear(3)};
  EXPECT_EQ(Model<double>(s, 0).count_parameters(), 9u);
}

TEST(ModelCount, ComaAutoencoderTable) {
  // kernel sizes 4, 9, 14 from the reconstruction table
  const std::size_t ms[3] = {4, 9, 14};
  const double cheb[3] = {92.5, 154.9, 217.3};
  const double feast[3] = {93.8, 157.9, 221.9};
  const double feast_plus[3] = {106.6, 170.7, 234.8};
  const double aff_feast[3] = {106.3, 170.4, 234.4};
  const double monet[3] = {92.7, 155.4, 218.1};
  const double monet_plus[3] = {105.2, 167.9, 230.6};
  const double aff_monet[3] = {105.2, 167.9, 230.5};
  for (int i = 0; i < 3; ++i) {
    const std::size_t m = ms[i];
    auto dag = tmpl(OpKind::ChebNet, m);
    dag.center_weight = false;
    EXPECT_EQ(in_k(coma_count(tmpl(OpKind::ChebNet, m))), cheb[i]);
    EXPECT_EQ(coma_count(dag), coma_count(tmpl(OpKind::ChebNet, m)));
    EXPECT_EQ(coma_count(tmpl(OpKind::ChebNet, m, Wrapper::Residual)), coma_count(tmpl(OpKind::ChebNet, m)));
    EXPECT_EQ(in_k(coma_count(tmpl(OpKind::SpiralNet, m))), cheb[i]);

    auto f = tmpl(OpKind::FeaStNet, m);
    f.feast_translation_invariant = true;
    EXPECT_EQ(in_k(coma_count(f)), feast[i]);
    auto fplus = f;
    fplus.kernel_size = m + 1;
    EXPECT_EQ(in_k(coma_count(fplus)), feast_plus[i]);
    auto faff = f;
    faff.wrapper = Wrapper::Affine;
    EXPECT_EQ(in_k(coma_count(faff)), aff_feast[i]);
    auto fdag = f;
    fdag.self_loops = false;
    EXPECT_EQ(coma_count(fdag), coma_count(f));

    EXPECT_EQ(in_k(coma_count(tmpl(OpKind::MoNet, m))), monet[i]);
    EXPECT_EQ(in_k(coma_count(tmpl(OpKind::MoNet, m + 1))), monet_plus[i]);
    EXPECT_EQ(in_k(coma_count(tmpl(OpKind::MoNet, m, Wrapper::Affine))), aff_monet[i]);
  }
  auto f9 = tmpl(OpKind::FeaStNet, 9);
  f9.feast_translation_invariant = true;
  EXPECT_EQ(coma_count(f9), 157887u);
  f9.wrapper = Wrapper::Affine;
  EXPECT_EQ(coma_count(f9), 170367u);
  EXPECT_EQ(coma_count(tmpl(OpKind::ChebNet, 4)), 92499u);
}

TEST(ModelCount, SeedDoesNotMatter) {
  const auto s = arch::autoencoder(tmpl(OpKind::MoNet, 3), {30, 15, 8, 4, 2});
  EXPECT_EQ(Model<double>(s, 1).count_parameters(), Model<double>(s, 99).count_parameters());
}

TEST(ModelArch, PaperShapes) {
  const auto corr = arch::correspondence(tmpl(OpKind::Gcn, 1), 6890);
  EXPECT_EQ(corr.layers.back().type, LayerType::Softmax);
  EXPECT_EQ(corr.layers[corr.layers.size() - 2].type, LayerType::Linear);
  EXPECT_EQ(corr.layers[corr.layers.size() - 2].out, 6890u);
  EXPECT_EQ(Model<double>(corr, 0).output_channels(), 6890u);

  const auto ae = arch::autoencoder(tmpl(OpKind::ChebNet, 2), arch::coma_levels());
  std::size_t latent = 0;
  for (std::size_t k = 0; k < ae.layers.size(); ++k)
    if (ae.layers[k].type == LayerType::Flatten) latent = ae.layers[k + 1].out;
  EXPECT_EQ(latent, 16u);
  EXPECT_EQ(Model<double>(ae, 0).output_channels(), 3u);

  const auto cls = arch::classifier(tmpl(OpKind::Gin, 1));
  EXPECT_EQ(Model<double>(cls, 0).output_channels(), 10u);
}

TEST(ModelArch, InconsistentSpecsRejected) {
  auto code = [](const ModelSpec& s) {
    try {
      Model<double> m(s, 0);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::InvalidArgument;
  };
  ModelSpec s;
  s.layers = {LayerEntry::of(LayerType::Unpool)};
  EXPECT_EQ(code(s), ErrorCode::InconsistentChannels);
  s.layers = {LayerEntry::of(LayerType::Flatten)};  // no fixed sizes
  EXPECT_EQ(code(s), ErrorCode::InconsistentChannels);
  s.level_sizes = {10};
  s.layers = {LayerEntry::of(LayerType::Flatten), LayerEntry::make_conv(LayerSpec{})};
  EXPECT_EQ(code(s), ErrorCode::InconsistentChannels);
  s.layers = {LayerEntry::of(LayerType::Pool)};
  EXPECT_EQ(code(s), ErrorCode::InconsistentChannels);
  s.level_sizes = {10, 5};
  s.layers = {LayerEntry::linear(3), LayerEntry::of(LayerType::Flatten), LayerEntry::of(LayerType::Unflatten)};
  EXPECT_NO_THROW(Model<double>(s, 0));
}

TEST(ModelForward, AutoencoderOnGridHierarchy) {
  const auto h = grid_hierarchy(6, 6, 3);
  std::vector<std::size_t> sizes;
  for (const auto& l : h.levels) sizes.push_back(l.num_vertices());
  for (OpKind k : {OpKind::Gcn, OpKind::ChebNet, OpKind::MoNet, OpKind::FeaStNet, OpKind::Gin, OpKind::SplineCnn}) {
    Model<double> m(arch::autoencoder(tmpl(k, 2, Wrapper::Affine), sizes, {8, 8, 8}, 4), 3);
    const auto y = m.predict(h.levels[0].graph.positions(), h);
    EXPECT_EQ(y.rows(), 36u);
    EXPECT_EQ(y.cols(), 3u);
    EXPECT_TRUE(y.all_finite());
  }
}

TEST(ModelForward, SoftmaxRowsAndLogits) {
  const auto h = grid_hierarchy(4, 4, 0);
  Model<double> m(arch::correspondence(tmpl(OpKind::Gcn, 1, Wrapper::Residual), 16, 3, {4, 4, 4}, 4, 8), 2);
  const auto x = h.levels[0].graph.positions();
  const auto p = m.predict(x, h);
  for (std::size_t i = 0; i < 16; ++i) {
    double s = 0;
    for (double v : p.row(i)) s += v;
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  ad::Tape<double> t;
  ForwardOptions o;
  o.skip_final_softmax = true;
  const auto logits = m.forward(t, t.constant(x), h, o).value();
  ad::Tape<double> t2;
  EXPECT_LT(max_abs_diff(ad::row_softmax(t2.constant(logits)).value(), p), 1e-15);
}

TEST(ModelForward, DropoutOnlyWhenTraining) {
  const auto h = grid_hierarchy(4, 4, 0);
  Model<double> m(arch::correspondence(tmpl(OpKind::Gcn, 1), 16, 3, {4, 4, 4}, 4, 8), 2);
  const auto x = h.levels[0].graph.positions();
  ad::Tape<double> a, b, c;
  ForwardOptions train;
  train.training = true;
  train.dropout_seed = 5;
  const auto y1 = m.forward(a, a.constant(x), h, train).value();
  const auto y2 = m.forward(b, b.constant(x), h, train).value();
  EXPECT_EQ(y1, y2);
  EXPECT_NE(y1, m.forward(c, c.constant(x), h).value());
}

TEST(ModelGradient, ThreeConvModelWithPooling) {
  const auto h = grid_hierarchy(5, 4, 2, 3);
  for (OpKind k : {OpKind::ChebNet, OpKind::MoNet, OpKind::FeaStNet, OpKind::SplineCnn}) {
    ModelSpec s;
    s.in_channels = 3;
    auto t = tmpl(k, 2, Wrapper::Affine);
    s.layers = {LayerEntry::make_conv(t.make(4)), LayerEntry::of(LayerType::Elu), LayerEntry::of(LayerType::Pool),
                LayerEntry::make_conv(t.make(4)), LayerEntry::of(LayerType::Elu), LayerEntry::of(LayerType::Unpool),
                LayerEntry::make_conv(t.make(3))};
    Model<double> m(s, 4);
    const auto x = h.levels[0].graph.positions();
    const auto target = testkit::random_tensor<double>(20, 3, 5);
    const auto report = grad_check<double>(
        [&](ad::Tape<double>& tape) {
          auto y = m.forward(tape, tape.constant(x), h);
          auto d = ad::sub(y, tape.constant(target));
          return ad::mean(ad::hadamard(d, d));
        },
        m.params().pointers(), 1e-6, 1e-5);
    EXPECT_TRUE(report.passed()) << to_string(k) << " " << report.worst_param << " " << report.max_rel_error;
  }
}

TEST(ModelGradient, ClassifierWithGlobalAverage) {
  const auto g = testkit::random_graph(24, 0.2, 3);
  const auto h = make_hierarchy(make_context(g), graclus_coarsen(g, 4));
  auto t = tmpl(OpKind::Gin, 1, Wrapper::Affine);
  Model<double> m(arch::classifier(t, 3, 4, {4, 4, 4}, 6, 0.5), 1);
  const std::vector<std::size_t> label{2};
  const auto report = grad_check<double>(
      [&](ad::Tape<double>& tape) {
        ForwardOptions o;
        o.skip_final_softmax = true;
        return ad::cross_entropy(m.forward(tape, tape.constant(g.positions()), h, o), label);
      },
      m.params().pointers(), 1e-6, 1e-5);
  EXPECT_TRUE(report.passed()) << report.worst_param << " " << report.max_rel_error;
}
