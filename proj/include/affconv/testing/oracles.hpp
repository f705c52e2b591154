#pragma once

// Naive per-vertex reference implementations. They read the graph and the
// layer's parameter values directly and share no code with the operators
// beyond the Tensor container.

#include <algorithm>
#include <cmath>
#include <vector>

#include "affconv/graph.hpp"
#include "affconv/mesh.hpp"
#include "affconv/operators.hpp"
#include "affconv/tensor.hpp"

namespace affconv::testkit {

using Dense = std::vector<std::vector<double>>;

inline Dense dense_adjacency(const Graph& g) {
  const std::size_t n = g.num_vertices();
  Dense a(n, std::vector<double>(n, 0.0));
  for (const Edge& e : g.edges())
    if (e.source != e.target) a[e.source][e.target] = 1.0;
  return a;
}

inline Dense dense_mul(const Dense& a, const Dense& b) {
  const std::size_t n = a.size(), m = b.empty() ? 0 : b[0].size(), k = b.size();
  Dense out(n, std::vector<double>(m, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t t = 0; t < k; ++t) out[i][j] += a[i][t] * b[t][j];
  return out;
}

inline Dense to_dense(const Tensor<double>& t) {
  Dense out(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t c = 0; c < t.cols(); ++c) out[r][c] = t(r, c);
  return out;
}

inline Tensor<double> from_dense(const Dense& d, std::size_t cols) {
  Tensor<double> out(d.size(), cols);
  for (std::size_t r = 0; r < d.size(); ++r)
    for (std::size_t c = 0; c < cols; ++c) out(r, c) = d[r][c];
  return out;
}

// x_row (1 x in) times w (in x out), added into acc with weight s
inline void axpy_row(std::vector<double>& acc, const Tensor<double>& x, std::size_t row, const Tensor<double>& w,
                     double s) {
  for (std::size_t o = 0; o < w.cols(); ++o) {
    double v = 0.0;
    for (std::size_t c = 0; c < w.rows(); ++c) v += x(row, c) * w(c, o);
    acc[o] += s * v;
  }
}

inline std::vector<std::vector<std::size_t>> neighbour_lists(const Graph& g, bool self) {
  std::vector<std::vector<std::size_t>> nb(g.num_vertices());
  for (const Edge& e : g.edges())
    if (e.source != e.target) nb[e.source].push_back(e.target);
  if (self)
    for (std::size_t i = 0; i < nb.size(); ++i) nb[i].push_back(i);
  return nb;
}

// Pseudo-coordinate of edge (i, j) in the layer's convention.
struct OraclePseudo {
  const Graph& g;
  PseudoMode mode;
  bool unit = false;
  double max_abs = 0.0;
  double max_a = 0.0, max_b = 0.0;

  OraclePseudo(const Graph& graph, PseudoMode m, bool unit_cube) : g(graph), mode(m), unit(unit_cube) {
    const auto nb = neighbour_lists(g, true);
    for (std::size_t i = 0; i < nb.size(); ++i)
      for (std::size_t j : nb[i]) {
        if (mode == PseudoMode::Cartesian) {
          for (std::size_t k = 0; k < g.positions().cols(); ++k)
            max_abs = std::max(max_abs, std::abs(g.positions()(j, k) - g.positions()(i, k)));
        } else {
          max_a = std::max(max_a, deg_term(i));
          max_b = std::max(max_b, deg_term(j));
        }
      }
  }

  double deg_term(std::size_t v) const {
    // degree counted with the self-loop
    const double d = static_cast<double>(neighbour_lists(g, true)[v].size());
    return 1.0 / std::sqrt(d);
  }

  std::vector<double> operator()(std::size_t i, std::size_t j) const {
    std::vector<double> u;
    if (mode == PseudoMode::Cartesian) {
      for (std::size_t k = 0; k < g.positions().cols(); ++k) {
        double v = g.positions()(j, k) - g.positions()(i, k);
        if (unit) v = max_abs > 0.0 ? v / (2.0 * max_abs) + 0.5 : 0.5;
        u.push_back(v);
      }
    } else {
      u.push_back(deg_term(i) / max_a);
      u.push_back(deg_term(j) / max_b);
    }
    return u;
  }
};

inline double hat(double u, std::size_t k, std::size_t m) {
  if (m == 1) return 1.0;
  return std::max(0.0, 1.0 - std::abs(u * static_cast<double>(m - 1) - static_cast<double>(k)));
}

/// Reference forward of a layer (including its wrapper) on graph g.
/// `spirals` is only read for spiralnet.
inline Tensor<double> oracle_forward(const ConvLayer<double>& layer, const Graph& g, const Tensor<double>& x,
                                     const Spirals* spirals = nullptr) {
  const LayerSpec& s = layer.spec();
  const std::size_t n = g.num_vertices(), out_c = s.out_channels;
  auto P = [&](const std::string& local) -> const Tensor<double>& { return layer.param(local).value; };
  Dense out(n, std::vector<double>(out_c, 0.0));
  const bool has_bias = s.wrapper != Wrapper::Affine;
  const Dense a = dense_adjacency(g);

  switch (s.kind) {
    case OpKind::Gcn: {
      std::vector<double> dt(n, 1.0);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) dt[i] += a[i][j];
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double w = (a[i][j] + (i == j ? 1.0 : 0.0)) / std::sqrt(dt[i] * dt[j]);
          if (w != 0.0) axpy_row(out[i], x, j, P("theta"), w);
        }
      break;
    }
    case OpKind::ChebNet: {
      std::vector<double> d(n, 0.0);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) d[i] += a[i][j];
      Dense l(n, std::vector<double>(n, 0.0));
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
          if (a[i][j] != 0.0) l[i][j] = -a[i][j] / std::sqrt(d[i] * d[j]);
      Dense id(n, std::vector<double>(n, 0.0));
      for (std::size_t i = 0; i < n; ++i) id[i][i] = 1.0;
      // Chebyshev polynomials of the matrix, then applied to X
      std::vector<Dense> poly{id, l};
      const std::size_t first = s.center_weight ? 0 : 1;
      while (poly.size() < first + s.kernel_size) {
        Dense next = dense_mul(l, poly.back());
        const Dense& prev = poly[poly.size() - 2];
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < n; ++j) next[i][j] = 2.0 * next[i][j] - prev[i][j];
        poly.push_back(std::move(next));
      }
      for (std::size_t k = 0; k < s.kernel_size; ++k) {
        const Dense tx = dense_mul(poly[k + first], to_dense(x));
        const Tensor<double> txt = from_dense(tx, x.cols());
        for (std::size_t i = 0; i < n; ++i) axpy_row(out[i], txt, i, P("theta" + std::to_string(k)), 1.0);
      }
      break;
    }
    case OpKind::MoNet: {
      const auto nb = neighbour_lists(g, s.self_loops);
      const OraclePseudo pseudo(g, s.pseudo_mode, false);
      const auto& mu = P("mu");
      const auto& lv = P("log_sigma2");
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j : nb[i]) {
          const auto u = pseudo(i, j);
          for (std::size_t m = 0; m < s.kernel_size; ++m) {
            double q = 0.0;
            for (std::size_t k = 0; k < u.size(); ++k) {
              const double diff = u[k] - mu(m, k);
              q += diff * diff / std::exp(lv(m, k));
            }
            axpy_row(out[i], x, j, P("theta" + std::to_string(m)), std::exp(-0.5 * q));
          }
        }
      break;
    }
    case OpKind::FeaStNet: {
      const auto nb = neighbour_lists(g, s.self_loops);
      const auto& u = P("u");
      const auto& c = P("c");
      for (std::size_t i = 0; i < n; ++i) {
        if (nb[i].empty()) continue;
        for (std::size_t j : nb[i]) {
          std::vector<double> logit(s.kernel_size);
          for (std::size_t m = 0; m < s.kernel_size; ++m) {
            double v = c(0, m);
            for (std::size_t ch = 0; ch < x.cols(); ++ch) {
              if (s.feast_translation_invariant)
                v += u(ch, m) * (x(j, ch) - x(i, ch));
              else
                v += u(ch, m) * x(i, ch) + P("v")(ch, m) * x(j, ch);
            }
            logit[m] = v;
          }
          const double mx = *std::max_element(logit.begin(), logit.end());
          double z = 0.0;
          for (double& v : logit) z += (v = std::exp(v - mx));
          for (std::size_t m = 0; m < s.kernel_size; ++m)
            axpy_row(out[i], x, j, P("weight" + std::to_string(m)),
                     logit[m] / z / static_cast<double>(nb[i].size()));
        }
      }
      break;
    }
    case OpKind::SpiralNet: {
      const std::size_t offset = s.center_weight ? 0 : 1;
      const auto& w = P("weight");
      for (std::size_t i = 0; i < n; ++i) {
        const auto seq = spirals->row(i);
        for (std::size_t k = 0; k < s.kernel_size; ++k)
          for (std::size_t ch = 0; ch < x.cols(); ++ch)
            for (std::size_t o = 0; o < out_c; ++o) out[i][o] += x(seq[k + offset], ch) * w(k * x.cols() + ch, o);
      }
      break;
    }
    case OpKind::Gin: {
      const double eps = s.gin_train_eps ? P("eps")(0, 0) : s.gin_eps;
      const auto nb = neighbour_lists(g, false);
      Dense h(n);
      for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> agg(x.cols());
        for (std::size_t ch = 0; ch < x.cols(); ++ch) {
          agg[ch] = (1.0 + eps) * x(i, ch);
          for (std::size_t j : nb[i]) agg[ch] += x(j, ch);
        }
        std::vector<double> hid(out_c, 0.0);
        for (std::size_t o = 0; o < out_c; ++o) {
          double v = P("mlp0.bias")(0, o);
          for (std::size_t ch = 0; ch < x.cols(); ++ch) v += agg[ch] * P("mlp0.weight")(ch, o);
          hid[o] = std::max(0.0, v);
        }
        for (std::size_t o = 0; o < out_c; ++o)
          for (std::size_t t = 0; t < out_c; ++t) out[i][o] += hid[t] * P("mlp1.weight")(t, o);
        if (has_bias)
          for (std::size_t o = 0; o < out_c; ++o) out[i][o] += P("bias")(0, o);
      }
      if (s.gin_norm) {
        for (std::size_t o = 0; o < out_c; ++o) {
          double mean = 0.0, var = 0.0;
          for (std::size_t i = 0; i < n; ++i) mean += out[i][o];
          mean /= static_cast<double>(n);
          for (std::size_t i = 0; i < n; ++i) var += (out[i][o] - mean) * (out[i][o] - mean);
          var /= static_cast<double>(n);
          for (std::size_t i = 0; i < n; ++i)
            out[i][o] = (out[i][o] - mean) / std::sqrt(var + 1e-5) * P("norm.scale")(0, o) + P("norm.shift")(0, o);
        }
      }
      break;
    }
    case OpKind::SplineCnn: {
      const auto nb = neighbour_lists(g, s.self_loops);
      const OraclePseudo pseudo(g, s.pseudo_mode, true);
      const std::size_t m = s.kernel_size;
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j : nb[i]) {
          const auto u = pseudo(i, j);
          std::size_t count = 1;
          for (std::size_t k = 0; k < u.size(); ++k) count *= m;
          for (std::size_t b = 0; b < count; ++b) {
            double coef = 1.0;
            std::size_t rest = b;
            for (std::size_t k = 0; k < u.size(); ++k) {
              coef *= hat(u[k], rest % m, m);
              rest /= m;
            }
            if (coef != 0.0)
              axpy_row(out[i], x, j, P("weight" + std::to_string(b)), coef / static_cast<double>(nb[i].size()));
          }
        }
      }
      break;
    }
  }

  if (has_bias && s.kind != OpKind::Gin)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t o = 0; o < out_c; ++o) out[i][o] += P("bias")(0, o);

  if (s.wrapper == Wrapper::Affine) {
    for (std::size_t i = 0; i < n; ++i) {
      axpy_row(out[i], x, i, P("affine.weight"), 1.0);
      for (std::size_t o = 0; o < out_c; ++o) out[i][o] += P("affine.bias")(0, o);
    }
  } else if (s.wrapper == Wrapper::Residual) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t o = 0; o < std::min(out_c, x.cols()); ++o) out[i][o] += x(i, o);
  }
  return from_dense(out, out_c);
}

}  // namespace affconv::testkit
