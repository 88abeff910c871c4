#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "texsr/error.hpp"

namespace texsr {

/// Row-compressed sparse matrix with exact transpose action.
///
/// Column indices within a row are strictly increasing, which gives the
/// "no duplicates" invariant and a canonical layout for bitwise comparisons.
class SparseLinearMap {
 public:
  SparseLinearMap() : row_offsets_{0} {}

  SparseLinearMap(std::size_t rows, std::size_t cols, std::vector<std::uint64_t> row_offsets,
                  std::vector<std::uint32_t> columns, std::vector<double> values)
      : rows_(rows),
        cols_(cols),
        row_offsets_(std::move(row_offsets)),
        columns_(std::move(columns)),
        values_(std::move(values)) {
    validate();
  }

  static SparseLinearMap identity(std::size_t n) {
    std::vector<std::uint64_t> off(n + 1);
    std::vector<std::uint32_t> col(n);
    for (std::size_t i = 0; i < n; ++i) {
      off[i] = i;
      col[i] = static_cast<std::uint32_t>(i);
    }
    off[n] = n;
    return {n, n, std::move(off), std::move(col), std::vector<double>(n, 1.0)};
  }

  [[nodiscard]] std::size_t rows() const { return rows_; }
  [[nodiscard]] std::size_t cols() const { return cols_; }
  [[nodiscard]] std::size_t nnz() const { return values_.size(); }
  [[nodiscard]] const std::vector<std::uint64_t>& row_offsets() const { return row_offsets_; }
  [[nodiscard]] const std::vector<std::uint32_t>& columns() const { return columns_; }
  [[nodiscard]] const std::vector<double>& values() const { return values_; }

  [[nodiscard]] std::span<const std::uint32_t> row_columns(std::size_t r) const {
    return {columns_.data() + row_offsets_[r], row_offsets_[r + 1] - row_offsets_[r]};
  }
  [[nodiscard]] std::span<const double> row_values(std::size_t r) const {
    return {values_.data() + row_offsets_[r], row_offsets_[r + 1] - row_offsets_[r]};
  }
  [[nodiscard]] double row_sum(std::size_t r) const {
    double s = 0.0;
    for (double v : row_values(r)) s += v;
    return s;
  }

  /// y = A x
  void apply(std::span<const double> x, std::span<double> y) const {
    if (x.size() != cols_ || y.size() != rows_) {
      throw StructuralError("sparse apply: expected x of " + std::to_string(cols_) + " and y of " +
                            std::to_string(rows_) + ", got " + std::to_string(x.size()) + "/" +
                            std::to_string(y.size()));
    }
    for (std::size_t r = 0; r < rows_; ++r) {
      double s = 0.0;
      for (std::uint64_t k = row_offsets_[r]; k < row_offsets_[r + 1]; ++k) {
        s += values_[k] * x[columns_[k]];
      }
      y[r] = s;
    }
  }

  [[nodiscard]] std::vector<double> apply(std::span<const double> x) const {
    std::vector<double> y(rows_);
    apply(x, y);
    return y;
  }

  /// x = A^T y. Scatters in row order, so the summation order is fixed.
  void apply_adjoint(std::span<const double> y, std::span<double> x) const {
    if (y.size() != rows_ || x.size() != cols_) {
      throw StructuralError("sparse apply_adjoint: expected y of " + std::to_string(rows_) +
                            " and x of " + std::to_string(cols_) + ", got " +
                            std::to_string(y.size()) + "/" + std::to_string(x.size()));
    }
    std::fill(x.begin(), x.end(), 0.0);
    for (std::size_t r = 0; r < rows_; ++r) {
      const double yr = y[r];
      if (yr == 0.0) continue;
      for (std::uint64_t k = row_offsets_[r]; k < row_offsets_[r + 1]; ++k) {
        x[columns_[k]] += values_[k] * yr;
      }
    }
  }

  [[nodiscard]] std::vector<double> apply_adjoint(std::span<const double> y) const {
    std::vector<double> x(cols_);
    apply_adjoint(y, x);
    return x;
  }

  [[nodiscard]] SparseLinearMap transpose() const {
    std::vector<std::uint64_t> off(cols_ + 1, 0);
    for (auto c : columns_) ++off[c + 1];
    for (std::size_t c = 0; c < cols_; ++c) off[c + 1] += off[c];
    std::vector<std::uint32_t> col(nnz());
    std::vector<double> val(nnz());
    std::vector<std::uint64_t> cursor(off.begin(), off.end() - 1);
    // Rows are visited in increasing order, so each output row comes out sorted.
    for (std::size_t r = 0; r < rows_; ++r) {
      for (std::uint64_t k = row_offsets_[r]; k < row_offsets_[r + 1]; ++k) {
        const auto dst = cursor[columns_[k]]++;
        col[dst] = static_cast<std::uint32_t>(r);
        val[dst] = values_[k];
      }
    }
    return {cols_, rows_, std::move(off), std::move(col), std::move(val)};
  }

  /// Dense row-major copy; only meant for small test instances.
  [[nodiscard]] std::vector<double> to_dense() const {
    std::vector<double> d(rows_ * cols_, 0.0);
    for (std::size_t r = 0; r < rows_; ++r) {
      for (std::uint64_t k = row_offsets_[r]; k < row_offsets_[r + 1]; ++k) {
        d[r * cols_ + columns_[k]] = values_[k];
      }
    }
    return d;
  }

  friend bool operator==(const SparseLinearMap&, const SparseLinearMap&) = default;

 private:
  void validate() const {
    if (row_offsets_.size() != rows_ + 1) {
      throw StructuralError("sparse map: row offset array has " +
                            std::to_string(row_offsets_.size()) + " entries, expected " +
                            std::to_string(rows_ + 1));
    }
    if (row_offsets_.front() != 0 || row_offsets_.back() != columns_.size() ||
        columns_.size() != values_.size()) {
      throw StructuralError("sparse map: nnz mismatch between offsets, columns and values");
    }
    for (std::size_t r = 0; r < rows_; ++r) {
      if (row_offsets_[r + 1] < row_offsets_[r]) {
        throw StructuralError("sparse map: row offsets decrease at row " + std::to_string(r));
      }
      for (std::uint64_t k = row_offsets_[r]; k < row_offsets_[r + 1]; ++k) {
        if (columns_[k] >= cols_) {
          throw StructuralError("sparse map: column index " + std::to_string(columns_[k]) +
                                " out of range at row " + std::to_string(r) + ", entry " +
                                std::to_string(k));
        }
        if (k > row_offsets_[r] && columns_[k] <= columns_[k - 1]) {
          throw StructuralError("sparse map: columns not strictly increasing at row " +
                                std::to_string(r) + ", entry " + std::to_string(k));
        }
        if (!std::isfinite(values_[k])) {
          throw StructuralError("sparse map: non-finite value at entry " + std::to_string(k));
        }
      }
    }
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::uint64_t> row_offsets_;
  std::vector<std::uint32_t> columns_;
  std::vector<double> values_;
};

/// Accumulates a sparse map row by row. Entries within a row may arrive in any
/// order; duplicates are summed and exact zeros dropped.
class SparseBuilder {
 public:
  SparseBuilder(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols) {
    offsets_.reserve(rows + 1);
    offsets_.push_back(0);
  }

  void add(std::size_t col, double value) {
    if (col >= cols_) {
      throw StructuralError("sparse builder: column " + std::to_string(col) + " >= " +
                            std::to_string(cols_));
    }
    pending_.emplace_back(static_cast<std::uint32_t>(col), value);
  }

  void end_row() {
    std::sort(pending_.begin(), pending_.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    for (std::size_t i = 0; i < pending_.size();) {
      const auto c = pending_[i].first;
      double v = 0.0;
      while (i < pending_.size() && pending_[i].first == c) v += pending_[i++].second;
      if (v != 0.0) {
        columns_.push_back(c);
        values_.push_back(v);
      }
    }
    pending_.clear();
    offsets_.push_back(columns_.size());
  }

  /// Ends the current row with no entries.
  void empty_row() {
    pending_.clear();
    offsets_.push_back(columns_.size());
  }

  [[nodiscard]] SparseLinearMap build() && {
    if (offsets_.size() != rows_ + 1) {
      throw StructuralError("sparse builder: " + std::to_string(offsets_.size() - 1) +
                            " rows emitted, expected " + std::to_string(rows_));
    }
    return {rows_, cols_, std::move(offsets_), std::move(columns_), std::move(values_)};
  }

 private:
  std::size_t rows_;
  std::size_t cols_;
  std::vector<std::uint64_t> offsets_;
  std::vector<std::uint32_t> columns_;
  std::vector<double> values_;
  std::vector<std::pair<std::uint32_t, double>> pending_;
};

/// Explicit product C = A * B.
inline SparseLinearMap multiply(const SparseLinearMap& a, const SparseLinearMap& b) {
  if (a.cols() != b.rows()) {
    throw StructuralError("sparse multiply: inner dimensions " + std::to_string(a.cols()) +
                          " and " + std::to_string(b.rows()) + " differ");
  }
  SparseBuilder out(a.rows(), b.cols());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const auto ac = a.row_columns(r);
    const auto av = a.row_values(r);
    for (std::size_t i = 0; i < ac.size(); ++i) {
      const auto bc = b.row_columns(ac[i]);
      const auto bv = b.row_values(ac[i]);
      for (std::size_t j = 0; j < bc.size(); ++j) out.add(bc[j], av[i] * bv[j]);
    }
    out.end_row();
  }
  return std::move(out).build();
}

}  // namespace texsr
