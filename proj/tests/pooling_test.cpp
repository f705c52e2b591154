#include <gtest/gtest.h>

#include <filesystem>

#include "affconv/pooling.hpp"
#include "affconv/testing/random_graphs.hpp"

using namespace affconv;

namespace {

Graph path4() { return Graph::undirected(4, std::vector<Edge>{{0, 1}, {1, 2}, {2, 3}}); }

}  // namespace

TEST(Graclus, PathPairsUp) {
  EXPECT_EQ(graclus_match(path4()), (std::vector<std::size_t>{0, 0, 1, 1}));
  const auto levels = graclus_coarsen(path4(), 1);
  ASSERT_EQ(levels.size(), 1u);
  EXPECT_EQ(levels[0].coarse_size(), 2u);
  EXPECT_EQ(levels[0].coarse.edges(), (std::vector<Edge>{{0, 1}, {1, 0}}));
}

TEST(Graclus, SingleVertexAndTriangle) {
  EXPECT_EQ(graclus_match(Graph(1, {})), (std::vector<std::size_t>{0}));
  const auto k3 = Graph::undirected(3, std::vector<Edge>{{0, 1}, {1, 2}, {0, 2}});
  EXPECT_EQ(graclus_match(k3), (std::vector<std::size_t>{0, 0, 1}));
  EXPECT_EQ(graclus_coarsen(k3, 1)[0].coarse_size(), 2u);
}

TEST(Graclus, SmallestUnmatchedNeighbourWins) {
  // 0-2, 0-3, 1-3: vertex 0 takes 2, vertex 1 takes 3
  const auto g = Graph::undirected(4, std::vector<Edge>{{0, 2}, {0, 3}, {1, 3}});
  EXPECT_EQ(graclus_match(g), (std::vector<std::size_t>{0, 1, 0, 1}));
}

TEST(Graclus, TwoLevelsShrinkByAboutFour) {
  const auto g = testkit::grid_mesh(8, 8).graph();
  const auto levels = graclus_coarsen(g, 2);
  EXPECT_EQ(levels[0].fine_size(), 64u);
  EXPECT_LE(levels[1].coarse_size(), 64u / 3);
  EXPECT_GE(levels[1].coarse_size(), 64u / 4);
  for (const auto& l : levels) {
    EXPECT_NO_THROW(l.validate());
    EXPECT_TRUE(l.coarse.is_symmetric());
    EXPECT_TRUE(l.coarse.has_positions());
  }
  EXPECT_EQ(graclus_coarsen(g, 2)[1].down, levels[1].down);
}

TEST(Pooling, AveragesPairsAndPreservesConstants) {
  const auto level = graclus_coarsen(path4(), 1)[0];
  ad::Tape<double> t;
  const auto x = Tensor<double>::from_rows({{1, 10}, {3, 20}, {5, 30}, {8, 40}});
  const auto y = pool_apply(t.constant(x), level, true).value();
  EXPECT_EQ(y, Tensor<double>::from_rows({{2, 15}, {6.5, 35}}));

  const auto c = Tensor<double>(4, 2, 0.7);
  const auto down = pool_apply(t.constant(c), level, true);
  EXPECT_EQ(down.value(), Tensor<double>(2, 2, 0.7));
  EXPECT_LT(max_abs_diff(pool_apply(down, level, false).value(), c), 1e-10);
}

TEST(Pooling, IdentityLevel) {
  const auto g = path4();
  PoolingLevel id{SparseMatrix::identity(4), SparseMatrix::identity(4), g};
  ad::Tape<double> t;
  const auto x = testkit::random_tensor<double>(4, 3, 1);
  EXPECT_EQ(pool_apply(t.constant(x), id, true).value(), x);
}

TEST(Pooling, RejectsBadRows) {
  PoolingLevel bad{SparseMatrix(2, 4, {{0, 0, 0.5}, {1, 1, 1.0}}), SparseMatrix(4, 2, {}), Graph(2, {})};
  EXPECT_THROW(bad.validate(), Error);
}

TEST(Pooling, FilesRoundTrip) {
  const auto dir = (std::filesystem::temp_directory_path() / "affconv_pool_test").string();
  std::filesystem::remove_all(dir);
  const auto mesh = testkit::grid_mesh(6, 5, 2);
  const auto levels = graclus_coarsen(mesh.graph(), 3);
  save_pooling(dir, levels);
  const auto back = load_pooling(dir, 0, mesh.positions());
  ASSERT_EQ(back.size(), 3u);
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_EQ(back[k].down, levels[k].down);
    EXPECT_EQ(back[k].up, levels[k].up);
    EXPECT_EQ(back[k].coarse.edges(), levels[k].coarse.edges());
    EXPECT_EQ(back[k].coarse.positions(), levels[k].coarse.positions());
  }
  EXPECT_EQ(load_pooling(dir, 2).size(), 2u);
  EXPECT_THROW(load_pooling(dir, 4), Error);
  std::filesystem::remove_all(dir);
}
