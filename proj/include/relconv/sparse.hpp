#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "relconv/error.hpp"
#include "relconv/tensor.hpp"

namespace relconv {

struct Triplet {
  std::size_t row = 0;
  std::size_t col = 0;
  double value = 0.0;

  bool operator==(const Triplet&) const = default;
};

/// Coordinate-format sparse matrix. Triplets are kept sorted by (row, col)
/// with no duplicate coordinates; a row index allows O(1) row access.
class SparseMatrix {
 public:
  SparseMatrix() = default;

  SparseMatrix(std::size_t rows, std::size_t cols, std::vector<Triplet> triplets)
      : rows_(rows), cols_(cols), triplets_(std::move(triplets)) {
    std::sort(triplets_.begin(), triplets_.end(), [](const Triplet& a, const Triplet& b) {
      return std::tie(a.row, a.col) < std::tie(b.row, b.col);
    });
    for (std::size_t i = 0; i < triplets_.size(); ++i) {
      const Triplet& t = triplets_[i];
      if (t.row >= rows_ || t.col >= cols_) {
        throw ShapeError("triplet (" + std::to_string(t.row) + ", " + std::to_string(t.col) +
                         ") outside " + std::to_string(rows_) + "x" + std::to_string(cols_) + " matrix");
      }
      if (i > 0 && triplets_[i - 1].row == t.row && triplets_[i - 1].col == t.col) {
        throw ShapeError("duplicate triplet at (" + std::to_string(t.row) + ", " + std::to_string(t.col) + ")");
      }
    }
    index_rows();
  }

  static SparseMatrix zeros(std::size_t rows, std::size_t cols) { return SparseMatrix(rows, cols, {}); }

  static SparseMatrix from_dense(const Tensor<double>& dense) {
    if (dense.rank() != 2) throw ShapeError("from_dense expects a matrix, got " + shape_string(dense.shape()));
    std::vector<Triplet> t;
    for (std::size_t i = 0; i < dense.dim(0); ++i)
      for (std::size_t j = 0; j < dense.dim(1); ++j)
        if (dense(i, j) != 0.0) t.push_back({i, j, dense(i, j)});
    return SparseMatrix(dense.dim(0), dense.dim(1), std::move(t));
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t nnz() const noexcept { return triplets_.size(); }
  std::span<const Triplet> triplets() const noexcept { return triplets_; }

  std::span<const Triplet> row(std::size_t i) const {
    return std::span<const Triplet>(triplets_).subspan(row_start_.at(i), row_start_.at(i + 1) - row_start_[i]);
  }

  double at(std::size_t i, std::size_t j) const {
    auto r = row(i);
    auto it = std::lower_bound(r.begin(), r.end(), j, [](const Triplet& t, std::size_t c) { return t.col < c; });
    return (it != r.end() && it->col == j) ? it->value : 0.0;
  }

  Tensor<double> to_dense() const {
    Tensor<double> out({rows_, cols_});
    for (const Triplet& t : triplets_) out(t.row, t.col) = t.value;
    return out;
  }

  SparseMatrix transposed() const {
    std::vector<Triplet> t;
    t.reserve(triplets_.size());
    for (const Triplet& e : triplets_) t.push_back({e.col, e.row, e.value});
    return SparseMatrix(cols_, rows_, std::move(t));
  }

  bool operator==(const SparseMatrix& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_ && triplets_ == o.triplets_;
  }

 private:
  void index_rows() {
    row_start_.assign(rows_ + 1, 0);
    for (const Triplet& t : triplets_) ++row_start_[t.row + 1];
    for (std::size_t i = 0; i < rows_; ++i) row_start_[i + 1] += row_start_[i];
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<Triplet> triplets_;
  std::vector<std::size_t> row_start_{0};
};

}  // namespace relconv
