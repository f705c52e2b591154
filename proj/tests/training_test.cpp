#include <gtest/gtest.h>

#include <cmath>

#include "affconv/report.hpp"
#include "affconv/testing/random_graphs.hpp"
#include "affconv/training.hpp"

using namespace affconv;
using namespace affconv::train;

namespace {

Hierarchy grid_hierarchy(std::size_t w, std::size_t h, std::size_t levels) {
  const auto mesh = testkit::grid_mesh(w, h, 1);
  ContextOptions opts;
  opts.spiral_length = 7;
  return make_hierarchy(make_context(mesh, opts), graclus_coarsen(mesh.graph(), levels));
}

// Reconstruction set of noisy copies of a 4x4 grid.
Dataset recon_dataset(std::size_t n, std::uint64_t seed) {
  Dataset d;
  d.task = Task::Reconstruction;
  d.hierarchies.push_back(grid_hierarchy(4, 4, 2));
  const auto base = d.hierarchies[0].levels[0].graph.positions();
  for (std::size_t i = 0; i < n; ++i) {
    auto noise = testkit::random_tensor<double>(base.rows(), base.cols(), seed + i, -0.05, 0.05);
    Tensor<double> x = base;
    for (std::size_t k = 0; k < x.size(); ++k) x.values()[k] += noise[k];
    (i % 4 == 3 ? d.test : d.train).push_back(Sample{x, x, {}, 0});
  }
  return d;
}

std::vector<std::size_t> level_sizes(const Hierarchy& h) {
  std::vector<std::size_t> s;
  for (const auto& l : h.levels) s.push_back(l.num_vertices());
  return s;
}

arch::ConvTemplate aff(OpKind k, std::size_t m) {
  arch::ConvTemplate t;
  t.kind = k;
  t.kernel_size = m;
  t.wrapper = Wrapper::Affine;
  return t;
}

std::vector<double> all_pairs_geodesic(const Graph& g) {
  // Floyd-Warshall over Euclidean edge lengths
  const std::size_t n = g.num_vertices();
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> d(n * n, inf);
  const auto& p = g.positions();
  for (std::size_t i = 0; i < n; ++i) d[i * n + i] = 0;
  for (const Edge& e : g.edges()) {
    double s = 0;
    for (std::size_t c = 0; c < 3; ++c) s += (p(e.source, c) - p(e.target, c)) * (p(e.source, c) - p(e.target, c));
    d[e.source * n + e.target] = std::sqrt(s);
  }
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) d[i * n + j] = std::min(d[i * n + j], d[i * n + k] + d[k * n + j]);
  return d;
}

}  // namespace

TEST(Adam, FirstStepIsLearningRate) {
  ad::Param<double> p("p", Tensor<double>::scalar(0.5));
  Adam<double> opt(AdamConfig{}, {&p});
  p.grad = Tensor<double>::scalar(1.0);
  opt.step(1e-3);
  // m_hat = v_hat = 1, so the step is lr / (1 + eps)
  EXPECT_NEAR(0.5 - p.value.item(), 1e-3 / (1.0 + 1e-8), 1e-15);
  EXPECT_EQ(opt.steps(), 1u);
}

TEST(Adam, ZeroGradientLeavesParams) {
  ad::Param<double> p("p", testkit::random_tensor<double>(3, 2, 4));
  const auto before = p.value;
  Adam<double> opt(AdamConfig{}, {&p});
  for (int i = 0; i < 5; ++i) {
    p.zero_grad();
    opt.step(1e-3);
  }
  EXPECT_EQ(p.value, before);
}

TEST(Adam, BadGradientShape) {
  ad::Param<double> p("p", Tensor<double>(2, 2));
  Adam<double> opt(AdamConfig{}, {&p});
  p.grad = Tensor<double>(1, 2);
  try {
    opt.step(1e-3);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ShapeMismatch);
  }
}

TEST(Adam, MatchesClosedFormSequence) {
  // scalar, constant gradient g: after t steps m_hat = g, v_hat = g^2
  ad::Param<double> p("p", Tensor<double>::scalar(0.0));
  Adam<double> opt(AdamConfig{}, {&p});
  double expected = 0.0;
  for (int t = 0; t < 4; ++t) {
    p.grad = Tensor<double>::scalar(-3.0);
    opt.step(0.01);
    expected += 0.01 * 3.0 / (3.0 + 1e-8);
  }
  EXPECT_NEAR(p.value.item(), expected, 1e-14);
}

TEST(Adam, CoupledWeightDecay) {
  AdamConfig c;
  c.weight_decay = 0.5;
  ad::Param<double> p("p", Tensor<double>::scalar(2.0));
  Adam<double> opt(c, {&p});
  p.grad = Tensor<double>::scalar(-1.0);  // effective gradient -1 + 0.5*2 = 0
  opt.step(1e-3);
  EXPECT_EQ(p.value.item(), 2.0);
}

TEST(Schedule, Decay) {
  AdamConfig c;
  c.decay_factor = 0.99;
  EXPECT_DOUBLE_EQ(learning_rate(c, 0), 1e-3);
  EXPECT_NEAR(learning_rate(c, 10), 1e-3 * std::pow(0.99, 10), 1e-18);
  c.decay_factor = 0.5;
  c.decay_every = 30;
  EXPECT_DOUBLE_EQ(learning_rate(c, 29), 1e-3);
  EXPECT_DOUBLE_EQ(learning_rate(c, 30), 5e-4);
  EXPECT_DOUBLE_EQ(learning_rate(c, 95), 1.25e-4);
}

TEST(Schedule, TaskDefaults) {
  const auto mesh = default_train_config(Task::Reconstruction);
  EXPECT_EQ(mesh.adam.lr, 1e-3);
  EXPECT_EQ(mesh.adam.decay_factor, 0.99);
  EXPECT_EQ(mesh.batch_size, 32u);
  EXPECT_EQ(default_train_config(Task::Correspondence).batch_size, 1u);
  const auto cls = default_train_config(Task::Classification);
  EXPECT_EQ(cls.epochs, 500u);
  EXPECT_EQ(cls.batch_size, 64u);
  EXPECT_EQ(cls.adam.decay_factor, 0.5);
  EXPECT_EQ(cls.adam.decay_every, 30u);
  EXPECT_EQ(cls.adam.weight_decay, 1e-4);
}

TEST(Loss, L1) {
  ad::Tape<double> t;
  const auto a = testkit::random_tensor<double>(5, 3, 1);
  EXPECT_EQ(l1_loss(t.constant(a), t.constant(a)).value().item(), 0.0);
  Tensor<double> b = a;
  for (double& v : b.values()) v -= 2.0;
  EXPECT_NEAR(l1_loss(t.constant(a), t.constant(b)).value().item(), 2.0, 1e-15);
  const auto c = testkit::random_tensor<double>(5, 3, 2);
  double s = 0;
  for (std::size_t i = 0; i < 15; ++i) s += std::abs(a[i] - c[i]);
  EXPECT_NEAR(l1_loss(t.constant(a), t.constant(c)).value().item(), s / 15.0, 1e-15);
  EXPECT_THROW(l1_loss(t.constant(a), t.constant(Tensor<double>(3, 5))), Error);
}

TEST(Loss, CrossEntropy) {
  ad::Tape<double> t;
  const std::vector<std::size_t> labels{0, 3, 1};
  EXPECT_NEAR(ad::cross_entropy(t.constant(Tensor<double>(3, 4)), labels).value().item(), std::log(4.0), 1e-15);
  Tensor<double> big(1, 3);
  big(0, 2) = 800.0;
  const std::vector<std::size_t> two{2};
  EXPECT_NEAR(ad::cross_entropy(t.constant(big), two).value().item(), 0.0, 1e-15);
  const auto z = testkit::random_tensor<double>(3, 4, 8, -3, 3);
  double expected = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    double s = 0;
    for (std::size_t c = 0; c < 4; ++c) s += std::exp(z(i, c));
    expected += std::log(s) - z(i, labels[i]);
  }
  EXPECT_NEAR(ad::cross_entropy(t.constant(z), labels).value().item(), expected / 3.0, 1e-14);
  const std::vector<std::size_t> bad{0, 4, 1};
  try {
    ad::cross_entropy(t.constant(z), bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::LabelOutOfRange);
  }
}

TEST(Metrics, ErrorStats) {
  const auto a = testkit::random_tensor<double>(4, 3, 1);
  const auto z = euclidean_error_stats(a, a);
  EXPECT_EQ(z.mean, 0.0);
  EXPECT_EQ(z.std, 0.0);
  EXPECT_EQ(z.median, 0.0);

  Tensor<double> p(1, 3), q(1, 3, std::vector<double>{3, 4, 0});
  const auto s = euclidean_error_stats(q, p);
  EXPECT_DOUBLE_EQ(s.mean, 5.0);
  EXPECT_DOUBLE_EQ(s.median, 5.0);
  EXPECT_EQ(s.std, 0.0);

  // lower median of {0, 2}
  const auto two = error_stats({2.0, 0.0});
  EXPECT_EQ(two.mean, 1.0);
  EXPECT_EQ(two.std, 1.0);
  EXPECT_EQ(two.median, 0.0);
  EXPECT_EQ(error_stats({5, 1, 4, 2, 3}).median, 3.0);
  EXPECT_THROW(euclidean_error_stats(a, Tensor<double>(3, 3)), Error);
}

TEST(Metrics, CurveSteps) {
  const auto mesh = testkit::grid_mesh(5, 2, 0);  // 10 vertices on a 5x2 strip
  const Graph& g = mesh.graph();
  const double diam = geodesic_diameter(g);
  std::vector<std::size_t> truth(g.num_vertices());
  std::iota(truth.begin(), truth.end(), std::size_t{0});
  const auto perfect = correspondence_accuracy_curve(truth, truth, g);
  for (const auto& p : perfect) EXPECT_EQ(p.accuracy, 100.0);

  // every prediction one grid step away along x
  std::vector<std::size_t> pred(truth.size());
  const auto& pos = g.positions();
  double step = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    for (const Edge& e : g.out_edges(i))
      if (pos(e.target, 1) == pos(i, 1) && std::abs(pos(e.target, 0) - pos(i, 0)) > 0.5) {
        pred[i] = e.target;
        step = std::abs(pos(e.target, 0) - pos(i, 0));
        break;
      }
  }
  const double r = step / diam;
  const auto c = correspondence_accuracy_curve(pred, truth, g, {0.0, r * 0.999, r, r * 2});
  EXPECT_EQ(c[0].accuracy, 0.0);
  EXPECT_EQ(c[1].accuracy, 0.0);
  EXPECT_EQ(c[2].accuracy, 100.0);
  EXPECT_EQ(c[3].accuracy, 100.0);
}

TEST(Metrics, CurveMatchesBruteForce) {
  const auto mesh = testkit::grid_mesh(5, 2, 7);
  const Graph& g = mesh.graph();
  const std::size_t n = g.num_vertices();
  const auto d = all_pairs_geodesic(g);
  double diam = 0;
  for (double v : d) diam = std::max(diam, v);
  EXPECT_NEAR(geodesic_diameter(g), diam, 1e-12);

  std::mt19937_64 rng(3);
  std::vector<std::size_t> pred(n), truth(n);
  for (std::size_t i = 0; i < n; ++i) {
    pred[i] = rng() % n;
    truth[i] = rng() % n;
  }
  const auto radii = default_radii();
  const auto curve = correspondence_accuracy_curve(pred, truth, g, radii);
  for (std::size_t k = 0; k < radii.size(); ++k) {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n; ++i) hits += d[truth[i] * n + pred[i]] <= radii[k] * diam ? 1 : 0;
    EXPECT_NEAR(curve[k].accuracy, 100.0 * hits / n, 1e-12);
    if (k > 0) {
      EXPECT_GE(curve[k].accuracy, curve[k - 1].accuracy);
    }
    EXPECT_GE(curve[k].accuracy, 0.0);
    EXPECT_LE(curve[k].accuracy, 100.0);
  }
}

TEST(Metrics, CurveRejectsDisconnected) {
  Graph g(4, {{0, 1}, {1, 0}, {2, 3}, {3, 2}}, testkit::random_tensor<double>(4, 3, 1));
  const std::vector<std::size_t> l{0, 1, 2, 3};
  try {
    correspondence_accuracy_curve(l, l, g);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DisconnectedMesh);
  }
}

TEST(Normalizer, RoundTrip) {
  const auto d = recon_dataset(8, 3);
  const auto n = Normalizer::fit(d.train);
  ASSERT_TRUE(n.active);
  const auto& x = d.train[0].x;
  EXPECT_LT(max_abs_diff(n.invert(n.apply(x)), x), 1e-14);
  // standardised training features have zero mean per entry
  Tensor<double> mean(x.rows(), x.cols());
  for (const auto& s : d.train) {
    const auto z = n.apply(s.x);
    for (std::size_t i = 0; i < z.size(); ++i) mean.values()[i] += z[i] / d.train.size();
  }
  for (double v : mean.values()) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(Train, ZeroEpochsChangesNothing) {
  const auto d = recon_dataset(8, 1);
  Model<double> m(arch::autoencoder(aff(OpKind::ChebNet, 2), level_sizes(d.hierarchies[0]), {4, 4}, 3), 5);
  const auto before = checkpoint_from_params(m.params().pointers());
  TrainConfig cfg;
  cfg.epochs = 0;
  const auto r = fit(m, d, cfg);
  EXPECT_TRUE(r.log.empty());
  EXPECT_EQ(serialize_checkpoint(checkpoint_from_params(m.params().pointers())), serialize_checkpoint(before));
  EXPECT_EQ(r.metrics.samples, d.test.size());
  EXPECT_GT(r.metrics.error.mean, 0.0);
  EXPECT_EQ(r.metrics.error.count, d.test.size() * 16);
}

TEST(Train, BitReproducible) {
  const auto d = recon_dataset(8, 2);
  auto run = [&](std::size_t threads) {
    Model<double> m(arch::autoencoder(aff(OpKind::MoNet, 2), level_sizes(d.hierarchies[0]), {4, 4}, 3), 9);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 3;
    cfg.seed = 11;
    cfg.threads = threads;
    const auto r = fit(m, d, cfg);
    return serialize_checkpoint(make_checkpoint(m, r.norm)) + metrics_to_json(r.metrics) + train_log_to_csv(r.log);
  };
  const auto a = run(1);
  EXPECT_EQ(a, run(1));
  EXPECT_EQ(a, run(3));
}

TEST(Train, SingleSampleLossDecreasesForAffOperators) {
  auto d = recon_dataset(1, 4);
  ASSERT_EQ(d.train.size(), 1u);
  const auto sizes = level_sizes(d.hierarchies[0]);
  for (OpKind k : {OpKind::Gcn, OpKind::ChebNet, OpKind::MoNet, OpKind::FeaStNet, OpKind::SpiralNet, OpKind::Gin,
                   OpKind::SplineCnn}) {
    // coarse levels are plain graphs without spirals, so SpiralNet stays at full resolution
    ModelSpec spec = arch::autoencoder(aff(k, 2), sizes, {4, 4}, 3);
    if (k == OpKind::SpiralNet) {
      const auto t = aff(k, 7);
      spec = ModelSpec{3, {}, {LayerEntry::make_conv(t.make(8)), LayerEntry::of(LayerType::Elu),
                               LayerEntry::make_conv(t.make(3))}};
    }
    Model<double> m(spec, 2);
    TrainConfig cfg;
    cfg.epochs = 10;
    cfg.normalize = false;
    const auto r = fit(m, d, cfg);
    ASSERT_EQ(r.log.size(), 10u);
    for (std::size_t e = 1; e < r.log.size(); ++e)
      EXPECT_LT(r.log[e].train_loss, r.log[e - 1].train_loss) << to_string(k) << " epoch " << e;
  }
}

TEST(Train, ClassificationAndCorrespondenceRun) {
  Dataset cls;
  cls.task = Task::Classification;
  cls.num_classes = 3;
  for (std::uint64_t s = 0; s < 6; ++s) {
    const auto g = testkit::random_graph(12, 0.3, s);
    cls.hierarchies.push_back(make_hierarchy(make_context(g), graclus_coarsen(g, 4)));
    Tensor<double> x(12, 1, static_cast<double>(s % 3));
    (s < 4 ? cls.train : cls.test).push_back(Sample{x, {}, {s % 3}, s});
  }
  arch::ConvTemplate t;
  t.kind = OpKind::Gin;
  t.wrapper = Wrapper::Affine;
  Model<double> m(arch::classifier(t, 1, 3, {4, 4, 4}, 6, 0.5), 1);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 2;
  const auto r = fit(m, cls, cfg);
  EXPECT_GE(r.metrics.accuracy, 0.0);
  EXPECT_LE(r.metrics.accuracy, 100.0);

  Dataset corr;
  corr.task = Task::Correspondence;
  corr.hierarchies.push_back(grid_hierarchy(4, 4, 0));
  const auto& pos = corr.hierarchies[0].levels[0].graph.positions();
  std::vector<std::size_t> ids(16);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  corr.train.push_back(Sample{pos, {}, ids, 0});
  Model<double> cm(arch::correspondence(aff(OpKind::Gcn, 1), 16, 3, {4, 4, 4}, 4, 8, 0.0), 3);
  cfg.radii = {0.0, 0.1, 0.5, 1.0};
  const auto rc = fit(cm, corr, cfg);
  ASSERT_EQ(rc.metrics.curve.size(), 4u);
  EXPECT_EQ(rc.metrics.curve.back().accuracy, 100.0);
  EXPECT_EQ(rc.metrics.accuracy, rc.metrics.curve.front().accuracy);
}

TEST(Report, JsonAndCsv) {
  Metrics m;
  m.task = Task::Correspondence;
  m.samples = 2;
  m.loss = 0.25;
  m.curve = {{0.0, 50.0}, {0.1, 75.5}};
  m.accuracy = 50.0;
  const auto back = metrics_from_json(metrics_to_json(m));
  EXPECT_EQ(back.curve.size(), 2u);
  EXPECT_EQ(back.curve[1].accuracy, 75.5);
  EXPECT_EQ(metrics_to_csv(m), "radius,accuracy\n0,50\n0.1,75.5\n");

  Metrics r;
  r.error = {1.5, 0.5, 1.25, 10};
  const auto rb = metrics_from_json(metrics_to_json(r));
  EXPECT_EQ(rb.error.median, 1.25);
  EXPECT_EQ(metrics_to_csv(rb), "mean_error,std_error,median_error,loss\n1.5,0.5,1.25,0\n");
  EXPECT_THROW(metrics_from_json("{\"task\": 1}"), Error);
}

TEST(Report, CheckpointCarriesNormalizer) {
  const auto d = recon_dataset(4, 5);
  const auto sizes = level_sizes(d.hierarchies[0]);
  const std::vector<std::size_t> two_levels(sizes.begin(), sizes.begin() + 2);
  Model<double> m(arch::autoencoder(aff(OpKind::Gcn, 1), two_levels, {4}, 2), 1);
  const auto n = Normalizer::fit(d.train);
  const auto ck = deserialize_checkpoint(serialize_checkpoint(make_checkpoint(m, n)));
  const auto back = normalizer_from_checkpoint(ck);
  EXPECT_TRUE(back.active);
  EXPECT_EQ(back.mean, n.mean);
  EXPECT_EQ(back.std, n.std);
  Model<double> m2(arch::autoencoder(aff(OpKind::Gcn, 1), two_levels, {4}, 2), 77);
  load_params(ck, m2.params().pointers());
  EXPECT_EQ(m2.predict(d.train[0].x, d.hierarchies[0]), m.predict(d.train[0].x, d.hierarchies[0]));
}
