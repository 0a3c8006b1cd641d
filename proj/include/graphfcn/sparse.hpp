#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "graphfcn/errors.hpp"
#include "graphfcn/tensor.hpp"

namespace gfcn {

struct SparseEntry {
  std::size_t row = 0;
  std::size_t col = 0;
  double weight = 0.0;

  bool operator==(const SparseEntry&) const = default;
};

/// Compressed sparse row matrix. Entries are kept sorted row-major, unique,
/// and free of explicit zeros.
class SparseMatrix {
 public:
  SparseMatrix() = default;

  /// Duplicate coordinates are summed; resulting zeros are dropped.
  SparseMatrix(std::size_t rows, std::size_t cols, std::vector<SparseEntry> triples)
      : rows_(rows), cols_(cols) {
    for (const auto& e : triples) {
      if (e.row >= rows || e.col >= cols) {
        throw DimensionError("sparse entry (" + std::to_string(e.row) + "," +
                             std::to_string(e.col) + ") outside " +
                             std::to_string(rows) + "x" + std::to_string(cols));
      }
    }
    std::sort(triples.begin(), triples.end(), [](const auto& a, const auto& b) {
      return a.row != b.row ? a.row < b.row : a.col < b.col;
    });
    for (const auto& e : triples) {
      if (!entries_.empty() && entries_.back().row == e.row && entries_.back().col == e.col) {
        entries_.back().weight += e.weight;
      } else {
        entries_.push_back(e);
      }
    }
    std::erase_if(entries_, [](const SparseEntry& e) { return e.weight == 0.0; });
    build_row_index();
  }

  static SparseMatrix identity(std::size_t n) {
    std::vector<SparseEntry> t;
    t.reserve(n);
    for (std::size_t i = 0; i < n; ++i) t.push_back({i, i, 1.0});
    return SparseMatrix(n, n, std::move(t));
  }

  static SparseMatrix from_dense(const Tensor& d) {
    if (d.rank() != 2) throw DimensionError("from_dense expects rank 2");
    std::vector<SparseEntry> t;
    for (std::size_t i = 0; i < d.dim(0); ++i)
      for (std::size_t j = 0; j < d.dim(1); ++j)
        if (d.at(i, j) != 0.0) t.push_back({i, j, d.at(i, j)});
    return SparseMatrix(d.dim(0), d.dim(1), std::move(t));
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t nnz() const noexcept { return entries_.size(); }
  std::span<const SparseEntry> entries() const noexcept { return entries_; }

  std::span<const SparseEntry> row(std::size_t i) const {
    return std::span<const SparseEntry>(entries_).subspan(row_ptr_[i],
                                                          row_ptr_[i + 1] - row_ptr_[i]);
  }

  double at(std::size_t i, std::size_t j) const {
    auto r = row(i);
    auto it = std::lower_bound(r.begin(), r.end(), j,
                               [](const SparseEntry& e, std::size_t c) { return e.col < c; });
    return (it != r.end() && it->col == j) ? it->weight : 0.0;
  }

  SparseMatrix transposed() const {
    std::vector<SparseEntry> t;
    t.reserve(entries_.size());
    for (const auto& e : entries_) t.push_back({e.col, e.row, e.weight});
    return SparseMatrix(cols_, rows_, std::move(t));
  }

  bool is_symmetric(double tol = 0.0) const {
    if (rows_ != cols_) return false;
    for (const auto& e : entries_) {
      if (std::abs(at(e.col, e.row) - e.weight) > tol) return false;
    }
    return true;
  }

  Tensor to_dense() const {
    Tensor d({rows_, cols_});
    for (const auto& e : entries_) d.at(e.row, e.col) = e.weight;
    return d;
  }

  /// this · x for a dense rank-2 (or rank-1) operand.
  Tensor multiply(const Tensor& x) const {
    const bool vec = x.rank() == 1;
    if ((x.rank() != 1 && x.rank() != 2) || x.dim(0) != cols_) {
      throw DimensionError("sparse product: " + std::to_string(rows_) + "x" +
                           std::to_string(cols_) + " times " + shape_str(x.shape()));
    }
    const std::size_t n = vec ? 1 : x.dim(1);
    Tensor out(vec ? Shape{rows_} : Shape{rows_, n});
    auto xd = x.data();
    auto od = out.data();
    for (std::size_t i = 0; i < rows_; ++i) {
      for (const auto& e : row(i)) {
        for (std::size_t j = 0; j < n; ++j) od[i * n + j] += e.weight * xd[e.col * n + j];
      }
    }
    return out;
  }

  bool operator==(const SparseMatrix& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_ && entries_ == o.entries_;
  }

 private:
  void build_row_index() {
    row_ptr_.assign(rows_ + 1, 0);
    for (const auto& e : entries_) ++row_ptr_[e.row + 1];
    for (std::size_t i = 0; i < rows_; ++i) row_ptr_[i + 1] += row_ptr_[i];
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<SparseEntry> entries_;
  std::vector<std::size_t> row_ptr_{0};
};

}  // namespace gfcn
