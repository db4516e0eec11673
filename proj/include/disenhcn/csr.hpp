#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "disenhcn/dense.hpp"

namespace disenhcn {

/// Optional observer called with (rows, cols, nnz) every time a CSR matrix is
/// finalized. Tests install it to verify that the adjacency construction never
/// materializes a structure keyed by entity-combination columns.
inline std::function<void(std::int64_t, std::int64_t, std::int64_t)>& csr_allocation_hook() {
  static std::function<void(std::int64_t, std::int64_t, std::int64_t)> hook;
  return hook;
}

/// Compressed-sparse-row matrix, 64-bit values. Canonical form: row_ptr
/// non-decreasing, columns strictly increasing within a row, no stored zeros.
struct CsrMatrix {
  std::int64_t n_rows = 0;
  std::int64_t n_cols = 0;
  std::vector<std::int64_t> row_ptr;  // length n_rows + 1
  std::vector<std::int32_t> col_idx;
  std::vector<double> values;

  CsrMatrix() : row_ptr(1, 0) {}
  CsrMatrix(std::int64_t rows, std::int64_t cols)
      : n_rows(rows), n_cols(cols), row_ptr(static_cast<std::size_t>(rows) + 1, 0) {}

  std::int64_t nnz() const { return static_cast<std::int64_t>(col_idx.size()); }
  std::int64_t row_nnz(std::int64_t i) const { return row_ptr[i + 1] - row_ptr[i]; }

  std::size_t memory_bytes() const {
    return row_ptr.size() * sizeof(std::int64_t) + col_idx.size() * sizeof(std::int32_t) +
           values.size() * sizeof(double);
  }

  /// Checks every structural invariant; throws on the first violation.
  void validate() const {
    if (n_rows < 0 || n_cols < 0) throw std::logic_error("csr: negative shape");
    if (row_ptr.size() != static_cast<std::size_t>(n_rows) + 1) throw std::logic_error("csr: row_ptr length");
    if (row_ptr.front() != 0) throw std::logic_error("csr: row_ptr[0] != 0");
    if (row_ptr.back() != nnz()) throw std::logic_error("csr: row_ptr back != nnz");
    if (col_idx.size() != values.size()) throw std::logic_error("csr: col/value length mismatch");
    for (std::int64_t i = 0; i < n_rows; ++i) {
      if (row_ptr[i] > row_ptr[i + 1]) throw std::logic_error("csr: row_ptr decreasing");
      for (std::int64_t p = row_ptr[i]; p < row_ptr[i + 1]; ++p) {
        if (col_idx[p] < 0 || col_idx[p] >= n_cols) throw std::logic_error("csr: column out of range");
        if (p > row_ptr[i] && col_idx[p] <= col_idx[p - 1])
          throw std::logic_error("csr: columns not strictly increasing");
        if (values[p] == 0.0) throw std::logic_error("csr: stored zero");
      }
    }
  }

  void notify_allocation() const {
    if (csr_allocation_hook()) csr_allocation_hook()(n_rows, n_cols, nnz());
  }

  DenseMatrix to_dense() const {
    DenseMatrix d(n_rows, n_cols);
    for (std::int64_t i = 0; i < n_rows; ++i)
      for (std::int64_t p = row_ptr[i]; p < row_ptr[i + 1]; ++p) d.at(i, col_idx[p]) += values[p];
    return d;
  }
};

/// Builds a canonical CSR matrix from (row, col, value) triplets. Duplicate
/// coordinates are summed; entries that are (or sum to) zero are dropped.
inline CsrMatrix from_triplets(std::int64_t n_rows, std::int64_t n_cols,
                               std::vector<std::tuple<std::int64_t, std::int64_t, double>> entries) {
  for (const auto& [i, j, v] : entries) {
    (void)v;
    if (i < 0 || i >= n_rows || j < 0 || j >= n_cols)
      throw std::out_of_range("from_triplets: entry (" + std::to_string(i) + "," + std::to_string(j) +
                              ") out of range for " + std::to_string(n_rows) + "x" + std::to_string(n_cols));
  }
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    return std::tie(std::get<0>(a), std::get<1>(a)) < std::tie(std::get<0>(b), std::get<1>(b));
  });
  CsrMatrix m(n_rows, n_cols);
  m.col_idx.reserve(entries.size());
  m.values.reserve(entries.size());
  std::size_t k = 0;
  for (std::int64_t i = 0; i < n_rows; ++i) {
    while (k < entries.size() && std::get<0>(entries[k]) == i) {
      const std::int64_t j = std::get<1>(entries[k]);
      double v = 0.0;
      while (k < entries.size() && std::get<0>(entries[k]) == i && std::get<1>(entries[k]) == j) {
        v += std::get<2>(entries[k]);
        ++k;
      }
      if (v != 0.0) {
        m.col_idx.push_back(static_cast<std::int32_t>(j));
        m.values.push_back(v);
      }
    }
    m.row_ptr[i + 1] = m.nnz();
  }
  m.notify_allocation();
  return m;
}

inline CsrMatrix transpose(const CsrMatrix& a) {
  CsrMatrix t(a.n_cols, a.n_rows);
  std::vector<std::int64_t> count(static_cast<std::size_t>(a.n_cols), 0);
  for (std::int32_t j : a.col_idx) ++count[static_cast<std::size_t>(j)];
  for (std::int64_t j = 0; j < a.n_cols; ++j) t.row_ptr[j + 1] = t.row_ptr[j] + count[j];
  t.col_idx.resize(a.col_idx.size());
  t.values.resize(a.values.size());
  std::vector<std::int64_t> cursor(t.row_ptr.begin(), t.row_ptr.end() - 1);
  for (std::int64_t i = 0; i < a.n_rows; ++i) {
    for (std::int64_t p = a.row_ptr[i]; p < a.row_ptr[i + 1]; ++p) {
      const std::int64_t pos = cursor[a.col_idx[p]]++;
      t.col_idx[pos] = static_cast<std::int32_t>(i);
      t.values[pos] = a.values[p];
    }
  }
  t.notify_allocation();
  return t;
}

/// Sparse * sparse, Gustavson row-by-row with a dense accumulator.
inline CsrMatrix spgemm(const CsrMatrix& a, const CsrMatrix& b) {
  if (a.n_cols != b.n_rows)
    throw std::invalid_argument("spgemm: inner dimensions " + std::to_string(a.n_cols) + " vs " +
                                std::to_string(b.n_rows));
  CsrMatrix c(a.n_rows, b.n_cols);
  std::vector<double> acc(static_cast<std::size_t>(b.n_cols), 0.0);
  std::vector<std::int64_t> mark(static_cast<std::size_t>(b.n_cols), -1);
  std::vector<std::int32_t> touched;
  for (std::int64_t i = 0; i < a.n_rows; ++i) {
    touched.clear();
    for (std::int64_t p = a.row_ptr[i]; p < a.row_ptr[i + 1]; ++p) {
      const std::int64_t k = a.col_idx[p];
      const double av = a.values[p];
      for (std::int64_t q = b.row_ptr[k]; q < b.row_ptr[k + 1]; ++q) {
        const std::int32_t j = b.col_idx[q];
        if (mark[j] != i) {
          mark[j] = i;
          acc[j] = 0.0;
          touched.push_back(j);
        }
        acc[j] += av * b.values[q];
      }
    }
    std::sort(touched.begin(), touched.end());
    for (std::int32_t j : touched) {
      if (acc[j] != 0.0) {
        c.col_idx.push_back(j);
        c.values.push_back(acc[j]);
      }
    }
    c.row_ptr[i + 1] = c.nnz();
  }
  c.notify_allocation();
  return c;
}

/// Sparse * dense.
inline DenseMatrix spmm_dense(const CsrMatrix& a, const DenseMatrix& x) {
  if (a.n_cols != x.n_rows)
    throw std::invalid_argument("spmm_dense: inner dimensions " + std::to_string(a.n_cols) + " vs " +
                                std::to_string(x.n_rows));
  DenseMatrix y(a.n_rows, x.n_cols);
  for (std::int64_t i = 0; i < a.n_rows; ++i) {
    double* yrow = &y.data[static_cast<std::size_t>(i * y.n_cols)];
    for (std::int64_t p = a.row_ptr[i]; p < a.row_ptr[i + 1]; ++p) {
      const double v = a.values[p];
      const double* xrow = &x.data[static_cast<std::size_t>(a.col_idx[p]) * x.n_cols];
      for (std::int64_t j = 0; j < x.n_cols; ++j) yrow[j] += v * xrow[j];
    }
  }
  return y;
}

/// Entrywise product. Output pattern is the intersection of the two patterns,
/// so the result never holds more entries than the smaller operand.
inline CsrMatrix hadamard(const CsrMatrix& a, const CsrMatrix& b) {
  if (a.n_rows != b.n_rows || a.n_cols != b.n_cols) throw std::invalid_argument("hadamard: shape mismatch");
  CsrMatrix c(a.n_rows, a.n_cols);
  std::int64_t cap = 0;
  for (std::int64_t i = 0; i < a.n_rows; ++i) cap += std::min(a.row_nnz(i), b.row_nnz(i));
  c.col_idx.reserve(cap);
  c.values.reserve(cap);
  for (std::int64_t i = 0; i < a.n_rows; ++i) {
    std::int64_t p = a.row_ptr[i], q = b.row_ptr[i];
    const std::int64_t pe = a.row_ptr[i + 1], qe = b.row_ptr[i + 1];
    while (p < pe && q < qe) {
      if (a.col_idx[p] < b.col_idx[q]) {
        ++p;
      } else if (a.col_idx[p] > b.col_idx[q]) {
        ++q;
      } else {
        const double v = a.values[p] * b.values[q];
        if (v != 0.0) {
          c.col_idx.push_back(a.col_idx[p]);
          c.values.push_back(v);
        }
        ++p;
        ++q;
      }
    }
    c.row_ptr[i + 1] = c.nnz();
  }
  c.notify_allocation();
  return c;
}

inline std::vector<double> row_sums(const CsrMatrix& a) {
  std::vector<double> d(static_cast<std::size_t>(a.n_rows), 0.0);
  for (std::int64_t i = 0; i < a.n_rows; ++i)
    for (std::int64_t p = a.row_ptr[i]; p < a.row_ptr[i + 1]; ++p) d[i] += a.values[p];
  return d;
}

inline void require_nonnegative(const CsrMatrix& a, const char* op) {
  for (double v : a.values)
    if (v < 0.0) throw std::invalid_argument(std::string(op) + ": negative entry");
}

/// M_ij = A_ij / sqrt(d_i * d_j) with d = row_sums(A). Rows or columns with
/// zero degree stay all-zero; no division happens for them.
inline CsrMatrix sym_normalize(const CsrMatrix& a) {
  if (a.n_rows != a.n_cols) throw std::invalid_argument("sym_normalize: matrix not square");
  require_nonnegative(a, "sym_normalize");
  const std::vector<double> d = row_sums(a);
  CsrMatrix m(a.n_rows, a.n_cols);
  m.col_idx.reserve(a.col_idx.size());
  m.values.reserve(a.values.size());
  for (std::int64_t i = 0; i < a.n_rows; ++i) {
    for (std::int64_t p = a.row_ptr[i]; p < a.row_ptr[i + 1]; ++p) {
      const std::int64_t j = a.col_idx[p];
      if (d[i] == 0.0 || d[j] == 0.0) continue;
      const double v = a.values[p] / std::sqrt(d[i] * d[j]);
      if (v != 0.0) {
        m.col_idx.push_back(a.col_idx[p]);
        m.values.push_back(v);
      }
    }
    m.row_ptr[i + 1] = m.nnz();
  }
  m.notify_allocation();
  return m;
}

/// M_ij = A_ij / d_i (mean aggregation). Zero-degree rows stay all-zero.
inline CsrMatrix row_normalize(const CsrMatrix& a) {
  require_nonnegative(a, "row_normalize");
  const std::vector<double> d = row_sums(a);
  CsrMatrix m(a.n_rows, a.n_cols);
  m.col_idx.reserve(a.col_idx.size());
  m.values.reserve(a.values.size());
  for (std::int64_t i = 0; i < a.n_rows; ++i) {
    for (std::int64_t p = a.row_ptr[i]; p < a.row_ptr[i + 1]; ++p) {
      if (d[i] == 0.0) continue;
      const double v = a.values[p] / d[i];
      if (v != 0.0) {
        m.col_idx.push_back(a.col_idx[p]);
        m.values.push_back(v);
      }
    }
    m.row_ptr[i + 1] = m.nnz();
  }
  m.notify_allocation();
  return m;
}

}  // namespace disenhcn
