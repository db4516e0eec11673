#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace disenhcn {

/// Row-major dense matrix of 64-bit floats. Carrier for embedding tables,
/// gradients and optimizer state.
struct DenseMatrix {
  std::int64_t n_rows = 0;
  std::int64_t n_cols = 0;
  std::vector<double> data;

  DenseMatrix() = default;
  DenseMatrix(std::int64_t rows, std::int64_t cols, double fill = 0.0)
      : n_rows(rows), n_cols(cols), data(static_cast<std::size_t>(rows * cols), fill) {
    if (rows < 0 || cols < 0) throw std::invalid_argument("DenseMatrix: negative shape");
  }

  double& at(std::int64_t i, std::int64_t j) { return data[static_cast<std::size_t>(i * n_cols + j)]; }
  double at(std::int64_t i, std::int64_t j) const { return data[static_cast<std::size_t>(i * n_cols + j)]; }

  std::int64_t size() const { return n_rows * n_cols; }
  bool same_shape(const DenseMatrix& o) const { return n_rows == o.n_rows && n_cols == o.n_cols; }

  void fill(double v) { std::fill(data.begin(), data.end(), v); }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

inline bool bitwise_equal(const DenseMatrix& a, const DenseMatrix& b) {
  return a.n_rows == b.n_rows && a.n_cols == b.n_cols && a.data == b.data;
}

inline double max_abs_diff(const DenseMatrix& a, const DenseMatrix& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

/// C += A * B, all dense. Plain triple loop; the matrices involved here are
/// attention-sized (chunk x chunk) or tall-skinny, nothing that warrants BLAS.
inline void gemm_accumulate(const DenseMatrix& a, const DenseMatrix& b, DenseMatrix& c) {
  if (a.n_cols != b.n_rows || c.n_rows != a.n_rows || c.n_cols != b.n_cols)
    throw std::invalid_argument("gemm: shape mismatch (" + std::to_string(a.n_rows) + "x" +
                                std::to_string(a.n_cols) + " * " + std::to_string(b.n_rows) + "x" +
                                std::to_string(b.n_cols) + ")");
  for (std::int64_t i = 0; i < a.n_rows; ++i) {
    for (std::int64_t k = 0; k < a.n_cols; ++k) {
      const double aik = a.at(i, k);
      if (aik == 0.0) continue;
      const double* brow = &b.data[static_cast<std::size_t>(k * b.n_cols)];
      double* crow = &c.data[static_cast<std::size_t>(i * c.n_cols)];
      for (std::int64_t j = 0; j < b.n_cols; ++j) crow[j] += aik * brow[j];
    }
  }
}

inline DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  DenseMatrix c(a.n_rows, b.n_cols);
  gemm_accumulate(a, b, c);
  return c;
}

inline DenseMatrix transpose(const DenseMatrix& a) {
  DenseMatrix t(a.n_cols, a.n_rows);
  for (std::int64_t i = 0; i < a.n_rows; ++i)
    for (std::int64_t j = 0; j < a.n_cols; ++j) t.at(j, i) = a.at(i, j);
  return t;
}

}  // namespace disenhcn
