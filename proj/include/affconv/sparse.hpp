#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <tuple>
#include <vector>

#include "affconv/error.hpp"
#include "affconv/summation.hpp"
#include "affconv/tensor.hpp"

namespace affconv {

struct Triplet {
  std::size_t row = 0;
  std::size_t col = 0;
  double value = 0.0;
};

/// COO matrix with entries kept in (row, col) order and no duplicate coordinates.
class SparseMatrix {
 public:
  SparseMatrix() = default;

  SparseMatrix(std::size_t rows, std::size_t cols, std::vector<Triplet> entries)
      : rows_(rows), cols_(cols), entries_(std::move(entries)) {
    std::sort(entries_.begin(), entries_.end(), [](const Triplet& a, const Triplet& b) {
      return std::tie(a.row, a.col) < std::tie(b.row, b.col);
    });
    for (std::size_t k = 0; k < entries_.size(); ++k) {
      const auto& e = entries_[k];
      require(e.row < rows_ && e.col < cols_, ErrorCode::InvalidArgument,
              "sparse entry (" + std::to_string(e.row) + ", " + std::to_string(e.col) +
                  ") outside " + std::to_string(rows_) + "x" + std::to_string(cols_));
      require(k == 0 || entries_[k - 1].row != e.row || entries_[k - 1].col != e.col,
              ErrorCode::InvalidArgument,
              "duplicate sparse coordinate (" + std::to_string(e.row) + ", " +
                  std::to_string(e.col) + ")");
    }
    row_offsets_.assign(rows_ + 1, 0);
    for (const auto& e : entries_) ++row_offsets_[e.row + 1];
    for (std::size_t r = 0; r < rows_; ++r) row_offsets_[r + 1] += row_offsets_[r];
  }

  static SparseMatrix identity(std::size_t n) {
    std::vector<Triplet> entries;
    entries.reserve(n);
    for (std::size_t i = 0; i < n; ++i) entries.push_back({i, i, 1.0});
    return SparseMatrix(n, n, std::move(entries));
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t nnz() const noexcept { return entries_.size(); }
  const std::vector<Triplet>& entries() const noexcept { return entries_; }

  std::span<const Triplet> row_entries(std::size_t r) const {
    return {entries_.data() + row_offsets_[r], row_offsets_[r + 1] - row_offsets_[r]};
  }

  double at(std::size_t r, std::size_t c) const {
    for (const auto& e : row_entries(r))
      if (e.col == c) return e.value;
    return 0.0;
  }

  SparseMatrix transposed() const {
    std::vector<Triplet> t;
    t.reserve(entries_.size());
    for (const auto& e : entries_) t.push_back({e.col, e.row, e.value});
    return SparseMatrix(cols_, rows_, std::move(t));
  }

  SparseMatrix scaled(double factor) const {
    auto copy = entries_;
    for (auto& e : copy) e.value *= factor;
    return SparseMatrix(rows_, cols_, std::move(copy));
  }

  std::vector<double> row_sums() const {
    std::vector<double> sums(rows_, 0.0);
    for (const auto& e : entries_) sums[e.row] += e.value;
    return sums;
  }

  Tensor<double> to_dense() const {
    Tensor<double> out(rows_, cols_);
    for (const auto& e : entries_) out(e.row, e.col) = e.value;
    return out;
  }

  /// Dense product this * x with order-independent row accumulation.
  template <typename T>
  Tensor<T> multiply(const Tensor<T>& x) const {
    require(x.rows() == cols_, ErrorCode::ShapeMismatch,
            "sparse " + std::to_string(rows_) + "x" + std::to_string(cols_) + " times dense " +
                x.shape_string());
    const std::size_t c = x.cols();
    Tensor<T> out(rows_, c);
    std::vector<std::size_t> order;
    for (std::size_t r = 0; r < rows_; ++r) {
      const auto row = row_entries(r);
      if (row.empty()) continue;
      order.resize(row.size());
      for (std::size_t k = 0; k < row.size(); ++k) order[k] = k;
      canonical_order(std::span<std::size_t>(order), [&](std::size_t a, std::size_t b) {
        const auto ka = total_order_key(row[a].value), kb = total_order_key(row[b].value);
        if (ka != kb) return ka < kb;
        return lex_less(x.data() + row[a].col * c, x.data() + row[b].col * c, c);
      });
      T* o = out.data() + r * c;
      for (std::size_t k : order) {
        const T v = static_cast<T>(row[k].value);
        const T* xr = x.data() + row[k].col * c;
        for (std::size_t ch = 0; ch < c; ++ch) o[ch] += v * xr[ch];
      }
    }
    return out;
  }

  /// Plain transpose-product this^T * g, used for gradients where summation order is irrelevant.
  template <typename T>
  Tensor<T> multiply_transposed(const Tensor<T>& g) const {
    require(g.rows() == rows_, ErrorCode::ShapeMismatch, "sparse transpose product shape");
    const std::size_t c = g.cols();
    Tensor<T> out(cols_, c);
    for (const auto& e : entries_) {
      const T v = static_cast<T>(e.value);
      for (std::size_t ch = 0; ch < c; ++ch) out(e.col, ch) += v * g(e.row, ch);
    }
    return out;
  }

  friend bool operator==(const SparseMatrix& a, const SparseMatrix& b) {
    if (a.rows_ != b.rows_ || a.cols_ != b.cols_ || a.entries_.size() != b.entries_.size())
      return false;
    for (std::size_t k = 0; k < a.entries_.size(); ++k) {
      const auto& x = a.entries_[k];
      const auto& y = b.entries_[k];
      if (x.row != y.row || x.col != y.col || x.value != y.value) return false;
    }
    return true;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<Triplet> entries_;
  std::vector<std::size_t> row_offsets_;
};

}  // namespace affconv
