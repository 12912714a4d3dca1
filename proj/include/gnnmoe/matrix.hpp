// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace gnnmoe {

struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

inline std::string shape_str(std::size_t r, std::size_t c) {
  return "(" + std::to_string(r) + "x" + std::to_string(c) + ")";
}

/// Dense row-major matrix of doubles.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows * cols)
      throw DimensionError("DenseMatrix: data length " + std::to_string(data_.size()) +
                           " does not match " + shape_str(rows, cols));
  }
  DenseMatrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ ? rows.begin()->size() : 0;
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw DimensionError("DenseMatrix: ragged initializer");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static DenseMatrix identity(std::size_t n) {
    DenseMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  bool same_shape(const DenseMatrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  DenseMatrix transpose() const {
    DenseMatrix t(cols_, rows_);
    for (std::size_t i = 0; i < rows_; ++i)
      for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
    return t;
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  DenseMatrix& operator+=(const DenseMatrix& o) {
    require_same(o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  friend bool operator==(const DenseMatrix&, const DenseMatrix&) = default;

 private:
  void require_same(const DenseMatrix& o, const char* what) const {
    if (!same_shape(o))
      throw DimensionError(std::string(what) + ": shape " + shape_str(rows_, cols_) + " vs " +
                           shape_str(o.rows_, o.cols_));
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// out (+)= a * b. `accumulate` adds into an existing out.
inline void gemm(const DenseMatrix& a, const DenseMatrix& b, DenseMatrix& out, bool accumulate = false) {
  if (a.cols() != b.rows())
    throw DimensionError("matmul: " + shape_str(a.rows(), a.cols()) + " * " + shape_str(b.rows(), b.cols()));
  if (!accumulate) out = DenseMatrix(a.rows(), b.cols());
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  for (std::size_t i = 0; i < n; ++i) {
    double* orow = out.data().data() + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a(i, p);
      if (av == 0.0) continue;
      const double* brow = b.data().data() + p * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
}

/// out (+)= aᵀ * b without materializing the transpose.
inline void gemm_tn(const DenseMatrix& a, const DenseMatrix& b, DenseMatrix& out, bool accumulate = false) {
  if (a.rows() != b.rows())
    throw DimensionError("matmul_tn: " + shape_str(a.rows(), a.cols()) + "ᵀ * " + shape_str(b.rows(), b.cols()));
  if (!accumulate) out = DenseMatrix(a.cols(), b.cols());
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  for (std::size_t i = 0; i < n; ++i) {
    const double* brow = b.data().data() + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a(i, p);
      if (av == 0.0) continue;
      double* orow = out.data().data() + p * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
}

/// out (+)= a * bᵀ.
inline void gemm_nt(const DenseMatrix& a, const DenseMatrix& b, DenseMatrix& out, bool accumulate = false) {
  if (a.cols() != b.cols())
    throw DimensionError("matmul_nt: " + shape_str(a.rows(), a.cols()) + " * " + shape_str(b.rows(), b.cols()) + "ᵀ");
  if (!accumulate) out = DenseMatrix(a.rows(), b.rows());
  const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = a.data().data() + i * k;
    for (std::size_t j = 0; j < m; ++j) {
      const double* brow = b.data().data() + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      out(i, j) += s;
    }
  }
}

inline DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  DenseMatrix out;
  gemm(a, b, out);
  return out;
}

inline double max_abs_diff(const DenseMatrix& a, const DenseMatrix& b) {
  if (!a.same_shape(b)) throw DimensionError("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// Compressed sparse row matrix. Structure is immutable once built.
class SparseMatrix {
 public:
  struct Triplet {
    std::size_t row;
    std::size_t col;
    double value;
  };

  SparseMatrix() : row_ptr_(1, 0) {}
  SparseMatrix(std::size_t rows, std::size_t cols, std::vector<std::size_t> row_ptr,
               std::vector<std::size_t> col_idx, std::vector<double> values)
      : rows_(rows), cols_(cols), row_ptr_(std::move(row_ptr)), col_idx_(std::move(col_idx)),
        values_(std::move(values)) {
    validate();
  }

  /// Builds from unordered triplets; duplicate coordinates are summed.
  static SparseMatrix from_triplets(std::size_t rows, std::size_t cols, std::vector<Triplet> t) {
    for (const auto& e : t)
      if (e.row >= rows || e.col >= cols)
        throw DimensionError("SparseMatrix: triplet (" + std::to_string(e.row) + "," + std::to_string(e.col) +
                             ") outside " + shape_str(rows, cols));
    std::sort(t.begin(), t.end(), [](const Triplet& a, const Triplet& b) {
      return a.row != b.row ? a.row < b.row : a.col < b.col;
    });
    std::vector<std::size_t> row_ptr(rows + 1, 0), col_idx;
    std::vector<double> values;
    col_idx.reserve(t.size());
    values.reserve(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (i > 0 && t[i].row == t[i - 1].row && t[i].col == t[i - 1].col) {
        values.back() += t[i].value;
        continue;
      }
      col_idx.push_back(t[i].col);
      values.push_back(t[i].value);
      ++row_ptr[t[i].row + 1];
    }
    for (std::size_t r = 0; r < rows; ++r) row_ptr[r + 1] += row_ptr[r];
    return SparseMatrix(rows, cols, std::move(row_ptr), std::move(col_idx), std::move(values));
  }

  static SparseMatrix identity(std::size_t n) {
    std::vector<std::size_t> rp(n + 1), ci(n);
    for (std::size_t i = 0; i <= n; ++i) rp[i] = i;
    for (std::size_t i = 0; i < n; ++i) ci[i] = i;
    return SparseMatrix(n, n, std::move(rp), std::move(ci), std::vector<double>(n, 1.0));
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t nnz() const { return values_.size(); }
  const std::vector<std::size_t>& row_ptr() const { return row_ptr_; }
  const std::vector<std::size_t>& col_idx() const { return col_idx_; }
  const std::vector<double>& values() const { return values_; }

  std::size_t row_nnz(std::size_t r) const { return row_ptr_[r + 1] - row_ptr_[r]; }
  std::span<const std::size_t> row_cols(std::size_t r) const {
    return {col_idx_.data() + row_ptr_[r], row_nnz(r)};
  }
  std::span<const double> row_values(std::size_t r) const { return {values_.data() + row_ptr_[r], row_nnz(r)}; }

  /// Value at (r, c), zero when not stored.
  double at(std::size_t r, std::size_t c) const {
    auto cols = row_cols(r);
    auto it = std::lower_bound(cols.begin(), cols.end(), c);
    if (it == cols.end() || *it != c) return 0.0;
    return values_[row_ptr_[r] + static_cast<std::size_t>(it - cols.begin())];
  }

  DenseMatrix to_dense() const {
    DenseMatrix d(rows_, cols_);
    for (std::size_t r = 0; r < rows_; ++r)
      for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) d(r, col_idx_[k]) = values_[k];
    return d;
  }

  SparseMatrix transpose() const {
    std::vector<Triplet> t;
    t.reserve(nnz());
    for (std::size_t r = 0; r < rows_; ++r)
      for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) t.push_back({col_idx_[k], r, values_[k]});
    return from_triplets(cols_, rows_, std::move(t));
  }

  bool is_symmetric(double tol = 0.0) const {
    if (rows_ != cols_) return false;
    for (std::size_t r = 0; r < rows_; ++r)
      for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k)
        if (std::abs(at(col_idx_[k], r) - values_[k]) > tol) return false;
    return true;
  }

 private:
  void validate() const {
    if (row_ptr_.size() != rows_ + 1) throw DimensionError("SparseMatrix: row_ptr length must be rows+1");
    if (row_ptr_.front() != 0 || row_ptr_.back() != values_.size() || col_idx_.size() != values_.size())
      throw DimensionError("SparseMatrix: row_ptr does not cover values");
    for (std::size_t r = 0; r < rows_; ++r) {
      if (row_ptr_[r] > row_ptr_[r + 1]) throw DimensionError("SparseMatrix: row_ptr decreasing");
      for (std::size_t k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) {
        if (col_idx_[k] >= cols_) throw DimensionError("SparseMatrix: column index out of range");
        if (k > row_ptr_[r] && col_idx_[k] <= col_idx_[k - 1])
          throw DimensionError("SparseMatrix: column indices not strictly increasing within row");
      }
    }
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::size_t> row_ptr_;
  std::vector<std::size_t> col_idx_;
  std::vector<double> values_;
};

/// out (+)= s * d.
inline void spmm(const SparseMatrix& s, const DenseMatrix& d, DenseMatrix& out, bool accumulate = false) {
  if (s.cols() != d.rows())
    throw DimensionError("spmm: " + shape_str(s.rows(), s.cols()) + " * " + shape_str(d.rows(), d.cols()));
  if (!accumulate) out = DenseMatrix(s.rows(), d.cols());
  const std::size_t m = d.cols();
  for (std::size_t r = 0; r < s.rows(); ++r) {
    double* orow = out.data().data() + r * m;
    auto cols = s.row_cols(r);
    auto vals = s.row_values(r);
    for (std::size_t k = 0; k < cols.size(); ++k) {
      const double* drow = d.data().data() + cols[k] * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += vals[k] * drow[j];
    }
  }
}

/// out (+)= sᵀ * d, scattering row contributions.
inline void spmm_t(const SparseMatrix& s, const DenseMatrix& d, DenseMatrix& out, bool accumulate = false) {
  if (s.rows() != d.rows())
    throw DimensionError("spmm_t: " + shape_str(s.rows(), s.cols()) + "ᵀ * " + shape_str(d.rows(), d.cols()));
  if (!accumulate) out = DenseMatrix(s.cols(), d.cols());
  const std::size_t m = d.cols();
  for (std::size_t r = 0; r < s.rows(); ++r) {
    const double* drow = d.data().data() + r * m;
    auto cols = s.row_cols(r);
    auto vals = s.row_values(r);
    for (std::size_t k = 0; k < cols.size(); ++k) {
      double* orow = out.data().data() + cols[k] * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += vals[k] * drow[j];
    }
  }
}

}  // namespace gnnmoe
