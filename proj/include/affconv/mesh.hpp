#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <queue>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "affconv/error.hpp"
#include "affconv/graph.hpp"

namespace affconv {

using Face = std::array<VertexId, 3>;

/// Triangle mesh: positions (N x 3), faces, and the undirected edge closure of the faces.
class Mesh {
 public:
  Mesh() = default;

  Mesh(Tensor<double> positions, std::vector<Face> faces) : faces_(std::move(faces)) {
    require(positions.cols() == 3, ErrorCode::InvalidGraph, "mesh positions must be N x 3");
    const std::size_t n = positions.rows();
    std::vector<Edge> pairs;
    pairs.reserve(3 * faces_.size());
    std::map<std::pair<VertexId, VertexId>, int> half_edges;
    for (const Face& f : faces_) {
      for (int k = 0; k < 3; ++k) {
        require(f[k] < n, ErrorCode::InvalidGraph,
                "face index " + std::to_string(f[k]) + " outside " + std::to_string(n) + " vertices");
      }
      require(f[0] != f[1] && f[1] != f[2] && f[0] != f[2], ErrorCode::InvalidGraph,
              "degenerate face with repeated vertex");
      for (int k = 0; k < 3; ++k) {
        const VertexId a = f[k];
        const VertexId b = f[(k + 1) % 3];
        pairs.push_back({a, b});
        if (++half_edges[{a, b}] > 1) consistently_oriented_ = false;
      }
    }
    graph_ = Graph::undirected(n, pairs, std::move(positions));
  }

  const Graph& graph() const noexcept { return graph_; }
  const std::vector<Face>& faces() const noexcept { return faces_; }
  const Tensor<double>& positions() const { return graph_.positions(); }
  std::size_t num_vertices() const noexcept { return graph_.num_vertices(); }
  bool consistently_oriented() const noexcept { return consistently_oriented_; }

  Mesh with_positions(Tensor<double> positions) const { return Mesh(std::move(positions), faces_); }

 private:
  Graph graph_;
  std::vector<Face> faces_;
  bool consistently_oriented_ = true;
};

/// Per-vertex spiral index sequences of fixed length, row-major N x length.
struct Spirals {
  std::size_t length = 0;
  std::vector<VertexId> indices;
  std::vector<bool> fallback;  // true where fan traversal failed and BFS rings were used

  std::size_t num_vertices() const noexcept { return length == 0 ? 0 : indices.size() / length; }
  std::span<const VertexId> row(VertexId i) const { return {indices.data() + i * length, length}; }

  /// Co-permutes the sequences: vertex i becomes permutation[i].
  Spirals relabeled(std::span<const VertexId> permutation) const {
    Spirals out{length, std::vector<VertexId>(indices.size()), std::vector<bool>(fallback.size())};
    for (VertexId i = 0; i < num_vertices(); ++i) {
      for (std::size_t k = 0; k < length; ++k)
        out.indices[permutation[i] * length + k] = permutation[indices[i * length + k]];
      out.fallback[permutation[i]] = fallback[i];
    }
    return out;
  }
};

namespace detail {

// Counter-clockwise one-ring of v: cyclic for interior vertices, linear from the
// boundary for open fans. nullopt when the fan cannot be walked in one chain.
inline std::optional<std::vector<VertexId>> fan_order(
    const std::vector<std::vector<std::pair<VertexId, VertexId>>>& successors, VertexId v) {
  const auto& succ = successors[v];
  if (succ.empty()) return std::vector<VertexId>{};
  std::map<VertexId, VertexId> next;
  std::map<VertexId, int> indegree;
  for (const auto& [b, c] : succ) {
    if (!next.emplace(b, c).second) return std::nullopt;
    if (++indegree[c] > 1) return std::nullopt;
  }
  std::vector<VertexId> nodes;
  for (const auto& [b, c] : succ) {
    nodes.push_back(b);
    nodes.push_back(c);
  }
  std::sort(nodes.begin(), nodes.end());
  nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());

  VertexId start = nodes.front();
  std::size_t starts = 0;
  for (VertexId u : nodes) {
    if (indegree.find(u) == indegree.end()) {
      start = u;
      ++starts;
    }
  }
  if (starts > 1) return std::nullopt;

  std::vector<VertexId> order{start};
  VertexId cur = start;
  while (true) {
    auto it = next.find(cur);
    if (it == next.end() || it->second == start) break;
    cur = it->second;
    order.push_back(cur);
    if (order.size() > nodes.size()) return std::nullopt;
  }
  if (order.size() != nodes.size()) return std::nullopt;
  return order;
}

inline std::vector<VertexId> bfs_ring_spiral(const Graph& g, VertexId center, std::size_t length) {
  std::vector<VertexId> seq{center};
  std::vector<bool> seen(g.num_vertices(), false);
  seen[center] = true;
  std::vector<VertexId> ring{center};
  while (seq.size() < length && !ring.empty()) {
    std::vector<VertexId> next_ring;
    for (VertexId v : ring)
      for (const Edge& e : g.out_edges(v))
        if (!seen[e.target]) {
          seen[e.target] = true;
          next_ring.push_back(e.target);
        }
    std::sort(next_ring.begin(), next_ring.end());
    seq.insert(seq.end(), next_ring.begin(), next_ring.end());
    ring = std::move(next_ring);
  }
  return seq;
}

}  // namespace detail

/// Ring-by-ring spiral starting at the centre. The first ring starts at the
/// smallest-index neighbour and runs counter-clockwise; every later vertex walks
/// its own fan counter-clockwise from its earliest-visited neighbour. Sequences
/// are truncated or padded (repeating the last vertex) to `length`.
inline Spirals spiral_sequences(const Mesh& mesh, std::size_t length) {
  require(length >= 1, ErrorCode::InvalidArgument, "spiral length must be >= 1");
  const Graph& g = mesh.graph();
  const std::size_t n = g.num_vertices();

  std::vector<std::vector<std::pair<VertexId, VertexId>>> successors(n);
  for (const Face& f : mesh.faces())
    for (int k = 0; k < 3; ++k) successors[f[k]].emplace_back(f[(k + 1) % 3], f[(k + 2) % 3]);

  std::vector<std::optional<std::vector<VertexId>>> fans(n);
  if (mesh.consistently_oriented())
    for (VertexId v = 0; v < n; ++v) fans[v] = detail::fan_order(successors, v);

  Spirals out{length, std::vector<VertexId>(n * length), std::vector<bool>(n, false)};
  std::vector<std::size_t> visit_rank(n, 0);
  std::vector<VertexId> touched;

  for (VertexId center = 0; center < n; ++center) {
    std::vector<VertexId> seq{center};
    bool ok = true;
    for (VertexId t : touched) visit_rank[t] = 0;
    touched.clear();
    auto mark = [&](VertexId v) {
      visit_rank[v] = seq.size();
      touched.push_back(v);
    };
    visit_rank[center] = 1;
    touched.push_back(center);

    if (!fans[center]) {
      ok = false;
    } else {
      std::vector<VertexId> ring = *fans[center];
      if (!ring.empty()) {
        auto smallest = std::min_element(ring.begin(), ring.end());
        std::rotate(ring.begin(), smallest, ring.end());
      }
      for (VertexId v : ring) {
        seq.push_back(v);
        mark(v);
      }
      while (ok && seq.size() < length && !ring.empty()) {
        std::vector<VertexId> next_ring;
        for (VertexId v : ring) {
          if (!fans[v]) {
            ok = false;
            break;
          }
          std::vector<VertexId> fan = *fans[v];
          auto anchor = fan.end();
          for (auto it = fan.begin(); it != fan.end(); ++it)
            if (visit_rank[*it] != 0 && (anchor == fan.end() || visit_rank[*it] < visit_rank[*anchor]))
              anchor = it;
          if (anchor != fan.end()) std::rotate(fan.begin(), anchor, fan.end());
          for (VertexId w : fan) {
            if (visit_rank[w] != 0) continue;
            seq.push_back(w);
            mark(w);
            next_ring.push_back(w);
          }
        }
        ring = std::move(next_ring);
      }
    }
    if (!ok) {
      seq = detail::bfs_ring_spiral(g, center, length);
      out.fallback[center] = true;
    }
    for (std::size_t k = 0; k < length; ++k)
      out.indices[center * length + k] = k < seq.size() ? seq[k] : seq.back();
  }
  return out;
}

/// BFS-ring spirals for plain graphs without faces; every row is flagged as fallback.
inline Spirals spiral_sequences(const Graph& g, std::size_t length) {
  require(length >= 1, ErrorCode::InvalidArgument, "spiral length must be >= 1");
  const std::size_t n = g.num_vertices();
  Spirals out{length, std::vector<VertexId>(n * length), std::vector<bool>(n, true)};
  for (VertexId c = 0; c < n; ++c) {
    const auto seq = detail::bfs_ring_spiral(g, c, length);
    for (std::size_t k = 0; k < length; ++k)
      out.indices[c * length + k] = k < seq.size() ? seq[k] : seq.back();
  }
  return out;
}

/// Dijkstra over Euclidean edge lengths. Unreachable vertices get +infinity.
inline std::vector<double> geodesic_distances(const Graph& g, VertexId source) {
  require(source < g.num_vertices(), ErrorCode::InvalidArgument, "geodesic source out of range");
  const auto& pos = g.positions();
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> dist(g.num_vertices(), inf);
  using Item = std::pair<double, VertexId>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> queue;
  dist[source] = 0.0;
  queue.push({0.0, source});
  while (!queue.empty()) {
    const auto [d, v] = queue.top();
    queue.pop();
    if (d > dist[v]) continue;
    for (const Edge& e : g.out_edges(v)) {
      double len2 = 0.0;
      for (std::size_t c = 0; c < pos.cols(); ++c) {
        const double diff = pos(e.target, c) - pos(v, c);
        len2 += diff * diff;
      }
      const double nd = d + std::sqrt(len2);
      if (nd < dist[e.target]) {
        dist[e.target] = nd;
        queue.push({nd, e.target});
      }
    }
  }
  return dist;
}

inline std::vector<double> geodesic_distances(const Mesh& m, VertexId source) {
  return geodesic_distances(m.graph(), source);
}

/// Largest finite-or-infinite pairwise geodesic distance.
inline double geodesic_diameter(const Graph& g) {
  double diameter = 0.0;
  for (VertexId s = 0; s < g.num_vertices(); ++s)
    for (double d : geodesic_distances(g, s)) diameter = std::max(diameter, d);
  return diameter;
}

}  // namespace affconv
