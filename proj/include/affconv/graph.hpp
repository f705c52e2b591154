#pragma once

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "affconv/error.hpp"
#include "affconv/sparse.hpp"
#include "affconv/tensor.hpp"

namespace affconv {

using VertexId = std::size_t;

/// Directed edge (source, target): target is a neighbour of source, messages
/// flow target -> source, and a_{source,target} = 1.
struct Edge {
  VertexId source = 0;
  VertexId target = 0;
  friend auto operator<=>(const Edge&, const Edge&) = default;
};

class Graph {
 public:
  Graph() = default;

  Graph(std::size_t num_vertices, std::vector<Edge> edges,
        std::optional<Tensor<double>> positions = std::nullopt)
      : num_vertices_(num_vertices), edges_(std::move(edges)), positions_(std::move(positions)) {
    require(num_vertices_ > 0, ErrorCode::InvalidGraph, "graph needs at least one vertex");
    std::sort(edges_.begin(), edges_.end());
    for (std::size_t k = 0; k < edges_.size(); ++k) {
      const Edge& e = edges_[k];
      require(e.source < num_vertices_ && e.target < num_vertices_, ErrorCode::InvalidGraph,
              "edge (" + std::to_string(e.source) + ", " + std::to_string(e.target) +
                  ") outside vertex range " + std::to_string(num_vertices_));
      require(k == 0 || edges_[k - 1] != e, ErrorCode::InvalidGraph,
              "duplicate edge (" + std::to_string(e.source) + ", " + std::to_string(e.target) + ")");
      if (e.source == e.target) has_self_loops_ = true;
    }
    if (positions_) {
      require(positions_->rows() == num_vertices_ && positions_->cols() >= 1,
              ErrorCode::InvalidGraph,
              "positions " + positions_->shape_string() + " do not match " +
                  std::to_string(num_vertices_) + " vertices");
    }
    offsets_.assign(num_vertices_ + 1, 0);
    for (const Edge& e : edges_) ++offsets_[e.source + 1];
    for (std::size_t i = 0; i < num_vertices_; ++i) offsets_[i + 1] += offsets_[i];
  }

  /// Builds a graph holding both directions of every pair; duplicates are merged.
  static Graph undirected(std::size_t num_vertices, std::span<const Edge> pairs,
                          std::optional<Tensor<double>> positions = std::nullopt) {
    std::vector<Edge> both;
    both.reserve(2 * pairs.size());
    for (const Edge& e : pairs) {
      both.push_back(e);
      if (e.source != e.target) both.push_back({e.target, e.source});
    }
    std::sort(both.begin(), both.end());
    both.erase(std::unique(both.begin(), both.end()), both.end());
    return Graph(num_vertices, std::move(both), std::move(positions));
  }

  std::size_t num_vertices() const noexcept { return num_vertices_; }
  std::size_t num_edges() const noexcept { return edges_.size(); }
  const std::vector<Edge>& edges() const noexcept { return edges_; }
  bool has_self_loops() const noexcept { return has_self_loops_; }
  bool has_positions() const noexcept { return positions_.has_value(); }

  const Tensor<double>& positions() const {
    require(positions_.has_value(), ErrorCode::MissingPositions, "graph has no vertex positions");
    return *positions_;
  }
  const std::optional<Tensor<double>>& maybe_positions() const noexcept { return positions_; }

  /// Outgoing edges of vertex i, i.e. its neighbourhood, in ascending target order.
  std::span<const Edge> out_edges(VertexId i) const {
    return {edges_.data() + offsets_[i], offsets_[i + 1] - offsets_[i]};
  }
  std::size_t edge_offset(VertexId i) const { return offsets_[i]; }

  bool has_edge(VertexId i, VertexId j) const {
    const auto row = out_edges(i);
    return std::binary_search(row.begin(), row.end(), Edge{i, j});
  }

  bool is_symmetric() const {
    return std::all_of(edges_.begin(), edges_.end(),
                       [&](const Edge& e) { return has_edge(e.target, e.source); });
  }

  Graph with_self_loops() const {
    auto edges = edges_;
    for (VertexId i = 0; i < num_vertices_; ++i)
      if (!has_edge(i, i)) edges.push_back({i, i});
    return Graph(num_vertices_, std::move(edges), positions_);
  }

  Graph without_self_loops() const {
    std::vector<Edge> edges;
    edges.reserve(edges_.size());
    for (const Edge& e : edges_)
      if (e.source != e.target) edges.push_back(e);
    return Graph(num_vertices_, std::move(edges), positions_);
  }

  Graph with_positions(Tensor<double> positions) const {
    return Graph(num_vertices_, edges_, std::move(positions));
  }

  /// Vertex i becomes permutation[i].
  Graph relabeled(std::span<const VertexId> permutation) const {
    require(permutation.size() == num_vertices_, ErrorCode::InvalidArgument,
            "permutation size mismatch");
    std::vector<Edge> edges;
    edges.reserve(edges_.size());
    for (const Edge& e : edges_) edges.push_back({permutation[e.source], permutation[e.target]});
    std::optional<Tensor<double>> pos;
    if (positions_) {
      Tensor<double> p(num_vertices_, positions_->cols());
      for (VertexId i = 0; i < num_vertices_; ++i)
        for (std::size_t c = 0; c < p.cols(); ++c) p(permutation[i], c) = (*positions_)(i, c);
      pos = std::move(p);
    }
    return Graph(num_vertices_, std::move(edges), std::move(pos));
  }

 private:
  std::size_t num_vertices_ = 0;
  std::vector<Edge> edges_;
  std::optional<Tensor<double>> positions_;
  bool has_self_loops_ = false;
  std::vector<std::size_t> offsets_;
};

/// d_ii = number of outgoing edges of i; a self-loop counts once.
inline std::vector<std::size_t> degree_vector(const Graph& g) {
  std::vector<std::size_t> deg(g.num_vertices(), 0);
  for (const Edge& e : g.edges()) ++deg[e.source];
  return deg;
}

enum class IsolatedPolicy { Lenient, Strict };

/// D^{-1/2} A D^{-1/2}. Zero-degree rows and columns stay empty in lenient mode.
inline SparseMatrix normalized_adjacency(const Graph& g,
                                         IsolatedPolicy policy = IsolatedPolicy::Lenient) {
  const auto deg = degree_vector(g);
  if (policy == IsolatedPolicy::Strict) {
    for (VertexId i = 0; i < deg.size(); ++i)
      require(deg[i] > 0, ErrorCode::IsolatedVertex,
              "vertex " + std::to_string(i) + " has no neighbours");
  }
  std::vector<Triplet> entries;
  entries.reserve(g.num_edges());
  for (const Edge& e : g.edges()) {
    if (deg[e.source] == 0 || deg[e.target] == 0) continue;
    entries.push_back({e.source, e.target,
                       1.0 / std::sqrt(static_cast<double>(deg[e.source]) *
                                       static_cast<double>(deg[e.target]))});
  }
  return SparseMatrix(g.num_vertices(), g.num_vertices(), std::move(entries));
}

/// The Chebyshev expansion operator L = -D^{-1/2} A D^{-1/2}.
inline SparseMatrix chebyshev_operator(const Graph& g,
                                       IsolatedPolicy policy = IsolatedPolicy::Lenient) {
  return normalized_adjacency(g, policy).scaled(-1.0);
}

/// Renormalised propagation matrix D~^{-1/2} (A + I) D~^{-1/2}.
inline SparseMatrix gcn_propagation_matrix(const Graph& g) {
  require(!g.has_self_loops(), ErrorCode::SelfLoopPresent,
          "gcn propagation adds its own self-loops");
  return normalized_adjacency(g.with_self_loops());
}

enum class PseudoMode { Cartesian, Degree };

/// One pseudo-coordinate row per edge, aligned with Graph::edges().
struct PseudoCoords {
  Tensor<double> values;
  std::size_t dim() const noexcept { return values.cols(); }
  std::size_t num_edges() const noexcept { return values.rows(); }
};

/// Cartesian: u_ij = pos_j - pos_i. Degree: (d_i^{-1/2}, d_j^{-1/2}) divided by the
/// per-component maximum over all edges.
inline PseudoCoords pseudo_coordinates(const Graph& g, PseudoMode mode) {
  const auto& edges = g.edges();
  if (mode == PseudoMode::Cartesian) {
    const auto& pos = g.positions();
    Tensor<double> u(edges.size(), pos.cols());
    for (std::size_t k = 0; k < edges.size(); ++k)
      for (std::size_t c = 0; c < pos.cols(); ++c)
        u(k, c) = pos(edges[k].target, c) - pos(edges[k].source, c);
    return {std::move(u)};
  }
  const auto deg = degree_vector(g);
  Tensor<double> u(edges.size(), 2);
  double max0 = 0.0;
  double max1 = 0.0;
  for (std::size_t k = 0; k < edges.size(); ++k) {
    const double di = static_cast<double>(deg[edges[k].source]);
    const double dj = static_cast<double>(deg[edges[k].target]);
    u(k, 0) = 1.0 / std::sqrt(di);
    u(k, 1) = dj > 0 ? 1.0 / std::sqrt(dj) : 0.0;
    max0 = std::max(max0, u(k, 0));
    max1 = std::max(max1, u(k, 1));
  }
  for (std::size_t k = 0; k < edges.size(); ++k) {
    if (max0 > 0) u(k, 0) /= max0;
    if (max1 > 0) u(k, 1) /= max1;
  }
  return {std::move(u)};
}

/// Maps pseudo-coordinates into [0,1]^d by u / (2 max|u|) + 1/2 (global scale).
inline PseudoCoords to_unit_cube(const PseudoCoords& u) {
  double scale = 0.0;
  for (double v : u.values.values()) scale = std::max(scale, std::abs(v));
  Tensor<double> out = u.values;
  for (double& v : out.values()) v = scale > 0 ? v / (2.0 * scale) + 0.5 : 0.5;
  return {std::move(out)};
}

}  // namespace affconv
