#pragma once

#include <optional>
#include <vector>

#include "affconv/error.hpp"
#include "affconv/graph.hpp"
#include "affconv/mesh.hpp"
#include "affconv/sparse.hpp"

namespace affconv {

struct ContextOptions {
  std::size_t spiral_length = 0;  // 0: no spirals
  IsolatedPolicy policy = IsolatedPolicy::Lenient;
};

/// Everything an operator needs from one graph, precomputed once and shared
/// read-only by every layer and tape that runs on it.
struct GraphContext {
  Graph graph;   // no self-loops
  Graph looped;  // graph plus one self-loop per vertex
  std::vector<std::size_t> src, dst;            // edge endpoints of `graph`
  std::vector<std::size_t> loop_src, loop_dst;  // edge endpoints of `looped`
  std::vector<std::size_t> looped_index;        // position of each `graph` edge inside `looped`
  SparseMatrix gcn;   // renormalised propagation matrix
  SparseMatrix cheb;  // -D^{-1/2} A D^{-1/2}
  std::optional<PseudoCoords> cartesian;       // on looped edges
  std::optional<PseudoCoords> degree;          // on looped edges
  std::optional<PseudoCoords> unit_cartesian;  // cartesian mapped into [0,1]^d
  std::optional<Spirals> spirals;
  IsolatedPolicy policy = IsolatedPolicy::Lenient;

  std::size_t num_vertices() const noexcept { return graph.num_vertices(); }

  const PseudoCoords& pseudo(PseudoMode mode) const {
    const auto& p = mode == PseudoMode::Cartesian ? cartesian : degree;
    require(p.has_value(), ErrorCode::MissingPseudoCoords,
            mode == PseudoMode::Cartesian ? "cartesian pseudo-coordinates need vertex positions"
                                          : "degree pseudo-coordinates missing");
    return *p;
  }

  /// Pseudo-coordinates in [0,1]^d as consumed by the B-spline basis.
  const PseudoCoords& spline_pseudo(PseudoMode mode) const {
    if (mode == PseudoMode::Degree) return pseudo(mode);
    require(unit_cartesian.has_value(), ErrorCode::MissingPseudoCoords,
            "cartesian pseudo-coordinates need vertex positions");
    return *unit_cartesian;
  }

  const Spirals& spiral_table(std::size_t length) const {
    require(spirals.has_value(), ErrorCode::SpiralUnavailable, "no spiral sequences for this graph (needs a mesh)");
    require(spirals->length >= length, ErrorCode::SpiralUnavailable,
            "spirals of length " + std::to_string(spirals->length) + " but " + std::to_string(length) +
                " requested");
    return *spirals;
  }
};

namespace detail {

inline void split_edges(const Graph& g, std::vector<std::size_t>& src, std::vector<std::size_t>& dst) {
  src.clear();
  dst.clear();
  src.reserve(g.num_edges());
  dst.reserve(g.num_edges());
  for (const Edge& e : g.edges()) {
    src.push_back(e.source);
    dst.push_back(e.target);
  }
}

}  // namespace detail

inline GraphContext make_context(const Graph& input, const ContextOptions& opts = {}) {
  GraphContext ctx;
  ctx.policy = opts.policy;
  ctx.graph = input.has_self_loops() ? input.without_self_loops() : input;
  ctx.looped = ctx.graph.with_self_loops();
  detail::split_edges(ctx.graph, ctx.src, ctx.dst);
  detail::split_edges(ctx.looped, ctx.loop_src, ctx.loop_dst);
  ctx.looped_index.reserve(ctx.src.size());
  for (std::size_t e = 0, l = 0; e < ctx.src.size(); ++e) {
    while (ctx.loop_src[l] != ctx.src[e] || ctx.loop_dst[l] != ctx.dst[e]) ++l;
    ctx.looped_index.push_back(l);
  }
  ctx.gcn = gcn_propagation_matrix(ctx.graph);
  ctx.cheb = chebyshev_operator(ctx.graph, opts.policy);
  if (ctx.graph.has_positions()) {
    ctx.cartesian = pseudo_coordinates(ctx.looped, PseudoMode::Cartesian);
    ctx.unit_cartesian = to_unit_cube(*ctx.cartesian);
  }
  ctx.degree = pseudo_coordinates(ctx.looped, PseudoMode::Degree);
  return ctx;
}

/// Plain graphs have no face fans, so spirals are only built for meshes.
inline GraphContext make_context(const Mesh& mesh, const ContextOptions& opts = {}) {
  GraphContext ctx = make_context(mesh.graph(), opts);
  if (opts.spiral_length > 0) ctx.spirals = spiral_sequences(mesh, opts.spiral_length);
  return ctx;
}

}  // namespace affconv
