#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>
#include <string_view>

#include "affconv/checkpoint.hpp"
#include "affconv/error.hpp"
#include "affconv/io.hpp"
#include "affconv/tensor.hpp"

namespace affconv::rbf {

enum class KernelKind { Tps, Polyharmonic, Gaussian };
enum class PolyDegree { None, Constant, Affine };

struct Kernel {
  KernelKind kind = KernelKind::Tps;
  int order = 3;       // polyharmonic exponent, odd
  double sigma = 1.0;  // gaussian width

  static Kernel tps() { return {}; }
  static Kernel polyharmonic(int k) { return {KernelKind::Polyharmonic, k, 1.0}; }
  static Kernel gaussian(double s) { return {KernelKind::Gaussian, 3, s}; }

  void validate() const {
    if (kind == KernelKind::Polyharmonic)
      require(order > 0 && order % 2 == 1, ErrorCode::InvalidArgument, "polyharmonic order must be odd and positive");
    if (kind == KernelKind::Gaussian)
      require(sigma > 0.0 && std::isfinite(sigma), ErrorCode::InvalidArgument, "gaussian sigma must be > 0");
  }

  double operator()(double r) const {
    switch (kind) {
      case KernelKind::Tps: return r > 0.0 ? r * r * std::log(r) : 0.0;
      case KernelKind::Polyharmonic: return std::pow(r, order);
      case KernelKind::Gaussian: return std::exp(-(r * r) / (2.0 * sigma * sigma));
    }
    return 0.0;
  }
};

inline std::string to_string(const Kernel& k) {
  switch (k.kind) {
    case KernelKind::Tps: return "tps";
    case KernelKind::Polyharmonic: return "polyharmonic:" + std::to_string(k.order);
    case KernelKind::Gaussian: return "gaussian:" + format_double(k.sigma);
  }
  return "?";
}

/// "tps", "polyharmonic[:k]" (default 3), "gaussian[:sigma]" (default 1).
inline Kernel parse_kernel(std::string_view s) {
  const auto colon = s.find(':');
  const std::string_view name = s.substr(0, colon);
  const std::string_view arg = colon == std::string_view::npos ? std::string_view{} : s.substr(colon + 1);
  Kernel k;
  if (name == "tps") {
    require(arg.empty(), ErrorCode::InvalidArgument, "tps takes no argument");
  } else if (name == "polyharmonic") {
    k.kind = KernelKind::Polyharmonic;
    if (!arg.empty()) k.order = static_cast<int>(parse_index(arg, "polyharmonic order"));
  } else if (name == "gaussian") {
    k.kind = KernelKind::Gaussian;
    if (!arg.empty()) k.sigma = parse_double(arg, "gaussian sigma");
  } else {
    fail(ErrorCode::InvalidArgument, "unknown rbf kernel '" + std::string(s) + "'");
  }
  k.validate();
  return k;
}

inline std::string to_string(PolyDegree d) {
  switch (d) {
    case PolyDegree::None: return "none";
    case PolyDegree::Constant: return "0";
    case PolyDegree::Affine: return "1";
  }
  return "?";
}

inline PolyDegree parse_degree(std::string_view s) {
  if (s == "none" || s == "-1") return PolyDegree::None;
  if (s == "0") return PolyDegree::Constant;
  if (s == "1") return PolyDegree::Affine;
  fail(ErrorCode::InvalidArgument, "polynomial degree must be none, 0 or 1, got '" + std::string(s) + "'");
}

struct Model {
  Kernel kernel;
  PolyDegree degree = PolyDegree::Affine;
  double lambda = 0.0;
  Tensor<double> centers;  // N x d
  Tensor<double> weights;  // N x q
  Tensor<double> linear;   // d x q (zero unless degree 1)
  Tensor<double> bias;     // 1 x q (zero when degree none)
  double rcond = 0.0;      // reciprocal condition estimate of the solved system

  std::size_t dim() const noexcept { return centers.cols(); }
  std::size_t outputs() const noexcept { return weights.cols(); }
};

inline double distance(const Tensor<double>& a, std::size_t i, const Tensor<double>& b, std::size_t j) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.cols(); ++k) {
    const double d = a(i, k) - b(j, k);
    s += d * d;
  }
  return std::sqrt(s);
}

/// Phi_ij = phi(|x_i - x_j|).
inline Tensor<double> kernel_matrix(const Tensor<double>& points, const Kernel& kernel) {
  require(points.rows() >= 1, ErrorCode::InvalidArgument, "kernel_matrix needs at least one point");
  const std::size_t n = points.rows();
  Tensor<double> phi(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    phi(i, i) = kernel(0.0);
    for (std::size_t j = i + 1; j < n; ++j) phi(i, j) = phi(j, i) = kernel(distance(points, i, points, j));
  }
  return phi;
}

inline std::size_t poly_terms(PolyDegree d, std::size_t dim) {
  switch (d) {
    case PolyDegree::None: return 0;
    case PolyDegree::Constant: return 1;
    case PolyDegree::Affine: return dim + 1;
  }
  return 0;
}

/// Solves [[Phi + lambda I, P], [P^T, 0]] [w; c] = [y; 0] with P = [1 | x].
inline Model fit(const Tensor<double>& points, const Tensor<double>& targets, const Kernel& kernel,
                 PolyDegree degree = PolyDegree::Affine, double lambda = 0.0) {
  kernel.validate();
  const std::size_t n = points.rows(), d = points.cols(), q = targets.cols();
  require(n >= 1 && d >= 1, ErrorCode::InvalidArgument, "rbf fit needs at least one point");
  require(targets.rows() == n, ErrorCode::DimensionMismatch,
          "rbf fit: " + std::to_string(n) + " points but " + std::to_string(targets.rows()) + " targets");
  require(q >= 1, ErrorCode::DimensionMismatch, "rbf fit: targets need at least one column");
  require(lambda >= 0.0 && std::isfinite(lambda), ErrorCode::InvalidArgument, "lambda must be finite and >= 0");
  require(points.all_finite() && targets.all_finite(), ErrorCode::NumericalFailure, "rbf fit: non-finite input");

  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      require(distance(points, i, points, j) > 0.0, ErrorCode::SingularSystem,
              "duplicate centres " + std::to_string(i) + " and " + std::to_string(j));

  const std::size_t m = poly_terms(degree, d);
  Eigen::MatrixXd p(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    if (m > 0) p(i, 0) = 1.0;
    if (degree == PolyDegree::Affine)
      for (std::size_t k = 0; k < d; ++k) p(i, k + 1) = points(i, k);
  }
  if (m > 0) {
    Eigen::FullPivLU<Eigen::MatrixXd> plu(p);
    plu.setThreshold(1e-10);
    require(static_cast<std::size_t>(plu.rank()) == m, ErrorCode::SingularSystem,
            "points are affinely degenerate (polynomial block has rank " + std::to_string(plu.rank()) + " < " +
                std::to_string(m) + ")");
  }

  const Tensor<double> phi = kernel_matrix(points, kernel);
  Eigen::MatrixXd sys = Eigen::MatrixXd::Zero(n + m, n + m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) sys(i, j) = phi(i, j) + (i == j ? lambda : 0.0);
  sys.block(0, n, n, m) = p;
  sys.block(n, 0, m, n) = p.transpose();
  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(n + m, q);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < q; ++c) rhs(i, c) = targets(i, c);

  Eigen::PartialPivLU<Eigen::MatrixXd> lu(sys);
  const double rcond = lu.rcond();
  require(rcond > 1e-15, ErrorCode::SingularSystem,
          "rbf system is singular to working precision (rcond " + format_double(rcond) + ")");
  const Eigen::MatrixXd sol = lu.solve(rhs);
  require(sol.allFinite(), ErrorCode::SingularSystem, "rbf solve produced non-finite values");

  Model model;
  model.kernel = kernel;
  model.degree = degree;
  model.lambda = lambda;
  model.centers = points;
  model.rcond = rcond;
  model.weights = Tensor<double>(n, q);
  model.linear = Tensor<double>(d, q);
  model.bias = Tensor<double>(1, q);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < q; ++c) model.weights(i, c) = sol(i, c);
  for (std::size_t c = 0; c < q; ++c) {
    if (m > 0) model.bias(0, c) = sol(n, c);
    if (degree == PolyDegree::Affine)
      for (std::size_t k = 0; k < d; ++k) model.linear(k, c) = sol(n + 1 + k, c);
  }
  return model;
}

/// f(x) = sum_i w_i phi(|x - x_i|) + x A + b.
inline Tensor<double> evaluate(const Model& model, const Tensor<double>& queries) {
  require(queries.cols() == model.dim(), ErrorCode::DimensionMismatch,
          "query dimension " + std::to_string(queries.cols()) + " but model dimension " +
              std::to_string(model.dim()));
  const std::size_t q = model.outputs();
  Tensor<double> out(queries.rows(), q);
  for (std::size_t r = 0; r < queries.rows(); ++r) {
    for (std::size_t i = 0; i < model.centers.rows(); ++i) {
      const double phi = model.kernel(distance(queries, r, model.centers, i));
      for (std::size_t c = 0; c < q; ++c) out(r, c) += model.weights(i, c) * phi;
    }
    for (std::size_t c = 0; c < q; ++c) {
      double v = model.bias(0, c);
      for (std::size_t k = 0; k < model.dim(); ++k) v += queries(r, k) * model.linear(k, c);
      out(r, c) += v;
    }
  }
  return out;
}

/// w^T Phi w summed over output channels, clamped at zero. TPS with affine part only.
inline double bending_energy(const Model& model) {
  require(model.kernel.kind == KernelKind::Tps && model.degree == PolyDegree::Affine, ErrorCode::WrongKernel,
          "bending energy is defined for degree-1 thin plate splines");
  const Tensor<double> phi = kernel_matrix(model.centers, model.kernel);
  double e = 0.0;
  for (std::size_t c = 0; c < model.outputs(); ++c)
    for (std::size_t i = 0; i < phi.rows(); ++i)
      for (std::size_t j = 0; j < phi.cols(); ++j) e += model.weights(i, c) * phi(i, j) * model.weights(j, c);
  return std::max(0.0, e);
}

inline double max_abs(const Tensor<double>& t) {
  double m = 0.0;
  for (double v : t.values()) m = std::max(m, std::abs(v));
  return m;
}

inline Checkpoint to_checkpoint(const Model& m) {
  Checkpoint ck;
  ck.meta = {{"kind", "rbf"},
             {"kernel", to_string(m.kernel)},
             {"degree", to_string(m.degree)},
             {"lambda", format_double(m.lambda)},
             {"rcond", format_double(m.rcond)}};
  ck.tensors = {{"centers", m.centers}, {"weights", m.weights}, {"linear", m.linear}, {"bias", m.bias}};
  return ck;
}

inline Model from_checkpoint(const Checkpoint& ck) {
  require(ck.meta_value("kind") == "rbf", ErrorCode::ParseError, "checkpoint does not hold an rbf model");
  Model m;
  m.kernel = parse_kernel(ck.meta_value("kernel", "tps"));
  m.degree = parse_degree(ck.meta_value("degree", "1"));
  m.lambda = parse_double(ck.meta_value("lambda", "0"), "rbf lambda");
  m.rcond = parse_double(ck.meta_value("rcond", "0"), "rbf rcond");
  auto get = [&](const std::string& name) {
    const NamedTensor* t = ck.find(name);
    require(t != nullptr, ErrorCode::ParseError, "rbf checkpoint lacks '" + name + "'");
    return t->value;
  };
  m.centers = get("centers");
  m.weights = get("weights");
  m.linear = get("linear");
  m.bias = get("bias");
  require(m.weights.rows() == m.centers.rows() && m.linear.rows() == m.centers.cols() &&
              m.linear.cols() == m.weights.cols() && m.bias.cols() == m.weights.cols(),
          ErrorCode::ShapeMismatch, "rbf checkpoint tensors have inconsistent shapes");
  return m;
}

}  // namespace affconv::rbf
