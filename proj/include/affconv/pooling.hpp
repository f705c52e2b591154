#pragma once

#include <cmath>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "affconv/autodiff.hpp"
#include "affconv/error.hpp"
#include "affconv/graph.hpp"
#include "affconv/io.hpp"
#include "affconv/sparse.hpp"

namespace affconv {

/// One coarsening step: down is (coarse x fine), up is (fine x coarse).
struct PoolingLevel {
  SparseMatrix down;
  SparseMatrix up;
  Graph coarse;

  std::size_t fine_size() const noexcept { return down.cols(); }
  std::size_t coarse_size() const noexcept { return down.rows(); }

  void validate(double tol = 1e-10) const {
    require(up.rows() == down.cols() && up.cols() == down.rows(), ErrorCode::ShapeMismatch,
            "pooling up matrix must be the transposed shape of down");
    require(coarse.num_vertices() == down.rows(), ErrorCode::ShapeMismatch,
            "coarse graph has " + std::to_string(coarse.num_vertices()) + " vertices, down matrix " +
                std::to_string(down.rows()) + " rows");
    const auto sd = down.row_sums();
    for (std::size_t r = 0; r < sd.size(); ++r)
      require(std::abs(sd[r] - 1.0) <= tol, ErrorCode::InvalidArgument,
              "down matrix row " + std::to_string(r) + " sums to " + format_double(sd[r]));
    const auto su = up.row_sums();
    for (std::size_t r = 0; r < su.size(); ++r)
      require(std::abs(su[r] - 1.0) <= tol, ErrorCode::InvalidArgument,
              "up matrix row " + std::to_string(r) + " sums to " + format_double(su[r]));
  }
};

/// Greedy matching: vertices in ascending order, each unmatched vertex pairs with
/// its smallest-index unmatched neighbour. Returns cluster id per vertex,
/// clusters numbered in order of their smallest member.
inline std::vector<std::size_t> graclus_match(const Graph& g) {
  const std::size_t n = g.num_vertices();
  constexpr std::size_t none = static_cast<std::size_t>(-1);
  std::vector<std::size_t> cluster(n, none);
  std::size_t next = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (cluster[i] != none) continue;
    cluster[i] = next;
    for (const Edge& e : g.out_edges(i)) {  // sorted by target
      if (e.target != i && cluster[e.target] == none) {
        cluster[e.target] = next;
        break;
      }
    }
    ++next;
  }
  return cluster;
}

/// Builds a level from a cluster assignment: down averages members, up copies
/// the cluster value back to each member, coarse edges join clusters that share
/// a fine edge, coarse positions are member means.
inline PoolingLevel level_from_clusters(const Graph& g, const std::vector<std::size_t>& cluster) {
  const std::size_t n = g.num_vertices();
  require(cluster.size() == n, ErrorCode::ShapeMismatch, "cluster assignment size");
  std::size_t k = 0;
  for (std::size_t c : cluster) k = std::max(k, c + 1);
  std::vector<std::size_t> size(k, 0);
  for (std::size_t c : cluster) ++size[c];
  std::vector<Triplet> down, up;
  for (std::size_t i = 0; i < n; ++i) {
    require(size[cluster[i]] > 0, ErrorCode::InvalidArgument, "empty cluster");
    down.push_back({cluster[i], i, 1.0 / static_cast<double>(size[cluster[i]])});
    up.push_back({i, cluster[i], 1.0});
  }
  for (std::size_t c = 0; c < k; ++c) require(size[c] > 0, ErrorCode::InvalidArgument, "cluster ids must be dense");
  std::vector<Edge> edges;
  for (const Edge& e : g.edges()) {
    const std::size_t a = cluster[e.source], b = cluster[e.target];
    if (a != b) edges.push_back({a, b});
  }
  std::sort(edges.begin(), edges.end(), [](const Edge& x, const Edge& y) {
    return std::tie(x.source, x.target) < std::tie(y.source, y.target);
  });
  edges.erase(std::unique(edges.begin(), edges.end(),
                          [](const Edge& x, const Edge& y) { return x.source == y.source && x.target == y.target; }),
              edges.end());
  SparseMatrix d(k, n, std::move(down));
  std::optional<Tensor<double>> pos;
  if (g.has_positions()) pos = d.multiply(g.positions());
  return PoolingLevel{std::move(d), SparseMatrix(n, k, std::move(up)), Graph(k, std::move(edges), std::move(pos))};
}

/// `levels` successive greedy matchings; two levels shrink by about 4.
inline std::vector<PoolingLevel> graclus_coarsen(const Graph& g, std::size_t levels) {
  std::vector<PoolingLevel> out;
  const Graph* cur = &g;
  for (std::size_t l = 0; l < levels; ++l) {
    out.push_back(level_from_clusters(*cur, graclus_match(*cur)));
    cur = &out.back().coarse;
  }
  return out;
}

/// X' = down X or up X, differentiable. The level must outlive the tape.
template <typename T>
ad::Var<T> pool_apply(ad::Var<T> x, const PoolingLevel& level, bool down) {
  return ad::spmm(down ? level.down : level.up, x);
}

// Files for level k inside a directory:
//   level<k>_down.coo   level<k>_up.coo   level<k>_graph.txt (edge list of the coarse graph)
inline std::string pooling_file(const std::string& dir, std::size_t k, const std::string& what) {
  return (std::filesystem::path(dir) / ("level" + std::to_string(k) + "_" + what)).string();
}

inline void save_pooling(const std::string& dir, const std::vector<PoolingLevel>& levels) {
  std::filesystem::create_directories(dir);
  for (std::size_t k = 0; k < levels.size(); ++k) {
    write_text_file(pooling_file(dir, k, "down.coo"), to_coo(levels[k].down));
    write_text_file(pooling_file(dir, k, "up.coo"), to_coo(levels[k].up));
    write_text_file(pooling_file(dir, k, "graph.txt"), to_edge_list(levels[k].coarse));
  }
}

/// Loads levels 0..count-1 (count 0: as many as exist). Coarse positions are
/// pooled from `fine_positions` when given.
inline std::vector<PoolingLevel> load_pooling(const std::string& dir, std::size_t count = 0,
                                              std::optional<Tensor<double>> fine_positions = std::nullopt) {
  std::vector<PoolingLevel> out;
  for (std::size_t k = 0; count == 0 || k < count; ++k) {
    const std::string down_path = pooling_file(dir, k, "down.coo");
    if (count == 0 && !std::filesystem::exists(down_path)) break;
    PoolingLevel level{parse_coo(read_text_file(down_path)), parse_coo(read_text_file(pooling_file(dir, k, "up.coo"))),
                       parse_edge_list(read_text_file(pooling_file(dir, k, "graph.txt")))};
    if (fine_positions) {
      require(fine_positions->rows() == level.down.cols(), ErrorCode::ShapeMismatch,
              "pooling level " + std::to_string(k) + " expects " + std::to_string(level.down.cols()) +
                  " fine vertices");
      fine_positions = level.down.multiply(*fine_positions);
      level.coarse = level.coarse.with_positions(*fine_positions);
    }
    if (k > 0)
      require(out.back().coarse_size() == level.fine_size(), ErrorCode::ShapeMismatch,
              "pooling level " + std::to_string(k) + " does not chain with level " + std::to_string(k - 1));
    level.validate(1e-8);
    out.push_back(std::move(level));
  }
  require(!out.empty(), ErrorCode::IoError, "no pooling matrices found in " + dir);
  return out;
}

}  // namespace affconv
