#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "affconv/autodiff.hpp"

namespace affconv::ad {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coordinates = 0;
  double tol = 0.0;

  bool passed() const noexcept { return max_rel_error < tol; }
};

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({1.0, std::abs(analytic), std::abs(numeric)});
}

/// Compares backward() with central differences for every coordinate of every
/// parameter. `f` records a scalar function of the params on the given tape.
/// `max_per_param` > 0 caps the number of coordinates probed per parameter
/// (evenly strided).
template <typename T>
GradCheckReport grad_check(const std::function<Var<T>(Tape<T>&)>& f, const std::vector<Param<T>*>& params,
                           double eps = 1e-5, double tol = 1e-5, std::size_t max_per_param = 0) {
  for (Param<T>* p : params) p->zero_grad();
  {
    Tape<T> tape;
    tape.backward(f(tape));
  }
  auto evaluate = [&]() {
    Tape<T> tape;
    return static_cast<double>(f(tape).value().item());
  };

  GradCheckReport report;
  report.tol = tol;
  for (Param<T>* p : params) {
    const std::size_t n = p->size();
    const std::size_t stride = (max_per_param == 0 || n <= max_per_param) ? 1 : (n + max_per_param - 1) / max_per_param;
    for (std::size_t k = 0; k < n; k += stride) {
      const T saved = p->value[k];
      p->value[k] = saved + static_cast<T>(eps);
      const double up = evaluate();
      p->value[k] = saved - static_cast<T>(eps);
      const double down = evaluate();
      p->value[k] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double analytic = static_cast<double>(p->grad[k]);
      const double err = relative_error(analytic, numeric);
      ++report.coordinates;
      if (report.coordinates == 1 || err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_param = p->name;
        report.worst_index = k;
        report.worst_analytic = analytic;
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace affconv::ad
