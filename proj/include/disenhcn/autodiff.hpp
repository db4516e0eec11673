#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "disenhcn/csr.hpp"
#include "disenhcn/dense.hpp"
#include "disenhcn/rng.hpp"

namespace disenhcn::ad {

/// One differentiable quantity: a dense value plus a lazily allocated gradient
/// of the same shape. Values are computed eagerly at construction; gradients
/// flow when Tape::backward runs.
struct Node {
  DenseMatrix value;
  DenseMatrix grad;
  bool needs_grad = false;
  std::function<void(Node&)> backward_fn;  // empty for leaves

  std::int64_t rows() const { return value.n_rows; }
  std::int64_t cols() const { return value.n_cols; }

  DenseMatrix& ensure_grad() {
    if (grad.n_rows != value.n_rows || grad.n_cols != value.n_cols)
      grad = DenseMatrix(value.n_rows, value.n_cols);
    return grad;
  }
};

/// Records one forward evaluation. Nodes are created in topological order, so
/// reverse creation order is a valid backward schedule. A tape may be walked
/// backward at most once.
class Tape {
 public:
  Node* leaf(DenseMatrix value, bool needs_grad) {
    auto node = std::make_unique<Node>();
    node->value = std::move(value);
    node->needs_grad = needs_grad;
    nodes_.push_back(std::move(node));
    return nodes_.back().get();
  }

  Node* constant(DenseMatrix value) { return leaf(std::move(value), false); }

  Node* scalar(double v) {
    DenseMatrix m(1, 1);
    m.at(0, 0) = v;
    return constant(std::move(m));
  }

  /// y = A x with a constant sparse operator. The caller supplies A^T for the
  /// backward pass; pass the same pointer when A is symmetric.
  Node* spmm(const CsrMatrix* a, const CsrMatrix* a_transposed, Node* x) {
    Node* out = make(spmm_dense(*a, x->value), {x});
    if (out->needs_grad)
      out->backward_fn = [a_transposed, x](Node& self) {
        if (!x->needs_grad) return;
        DenseMatrix gx = spmm_dense(*a_transposed, self.grad);
        accumulate(x->ensure_grad(), gx);
      };
    return out;
  }

  Node* matmul(Node* a, Node* b) {
    Node* out = make(disenhcn::matmul(a->value, b->value), {a, b});
    if (out->needs_grad)
      out->backward_fn = [a, b](Node& self) {
        if (a->needs_grad) gemm_accumulate(self.grad, disenhcn::transpose(b->value), a->ensure_grad());
        if (b->needs_grad) gemm_accumulate(disenhcn::transpose(a->value), self.grad, b->ensure_grad());
      };
    return out;
  }

  Node* add(Node* a, Node* b) {
    require_same_shape(a, b, "add");
    DenseMatrix v = a->value;
    for (std::int64_t i = 0; i < v.size(); ++i) v.data[i] += b->value.data[i];
    Node* out = make(std::move(v), {a, b});
    if (out->needs_grad)
      out->backward_fn = [a, b](Node& self) {
        if (a->needs_grad) accumulate(a->ensure_grad(), self.grad);
        if (b->needs_grad) accumulate(b->ensure_grad(), self.grad);
      };
    return out;
  }

  Node* sub(Node* a, Node* b) {
    require_same_shape(a, b, "sub");
    DenseMatrix v = a->value;
    for (std::int64_t i = 0; i < v.size(); ++i) v.data[i] -= b->value.data[i];
    Node* out = make(std::move(v), {a, b});
    if (out->needs_grad)
      out->backward_fn = [a, b](Node& self) {
        if (a->needs_grad) accumulate(a->ensure_grad(), self.grad);
        if (b->needs_grad) {
          auto& g = b->ensure_grad();
          for (std::int64_t i = 0; i < self.grad.size(); ++i) g.data[i] -= self.grad.data[i];
        }
      };
    return out;
  }

  Node* scale(Node* a, double c) {
    DenseMatrix v = a->value;
    for (auto& x : v.data) x *= c;
    Node* out = make(std::move(v), {a});
    if (out->needs_grad)
      out->backward_fn = [a, c](Node& self) {
        auto& g = a->ensure_grad();
        for (std::int64_t i = 0; i < self.grad.size(); ++i) g.data[i] += c * self.grad.data[i];
      };
    return out;
  }

  /// Adds a 1 x c row vector to every row of x.
  Node* add_rowvec(Node* x, Node* b) {
    if (b->rows() != 1 || b->cols() != x->cols()) throw std::invalid_argument("add_rowvec: bad bias shape");
    DenseMatrix v = x->value;
    for (std::int64_t i = 0; i < v.n_rows; ++i)
      for (std::int64_t j = 0; j < v.n_cols; ++j) v.at(i, j) += b->value.at(0, j);
    Node* out = make(std::move(v), {x, b});
    if (out->needs_grad)
      out->backward_fn = [x, b](Node& self) {
        if (x->needs_grad) accumulate(x->ensure_grad(), self.grad);
        if (b->needs_grad) {
          auto& g = b->ensure_grad();
          for (std::int64_t i = 0; i < self.grad.n_rows; ++i)
            for (std::int64_t j = 0; j < self.grad.n_cols; ++j) g.at(0, j) += self.grad.at(i, j);
        }
      };
    return out;
  }

  /// Scales row i of x by w_i (w is n x 1).
  Node* mul_colvec(Node* x, Node* w) {
    if (w->cols() != 1 || w->rows() != x->rows()) throw std::invalid_argument("mul_colvec: bad weight shape");
    DenseMatrix v = x->value;
    for (std::int64_t i = 0; i < v.n_rows; ++i) {
      const double wi = w->value.at(i, 0);
      for (std::int64_t j = 0; j < v.n_cols; ++j) v.at(i, j) *= wi;
    }
    Node* out = make(std::move(v), {x, w});
    if (out->needs_grad)
      out->backward_fn = [x, w](Node& self) {
        if (x->needs_grad) {
          auto& g = x->ensure_grad();
          for (std::int64_t i = 0; i < self.grad.n_rows; ++i) {
            const double wi = w->value.at(i, 0);
            for (std::int64_t j = 0; j < self.grad.n_cols; ++j) g.at(i, j) += wi * self.grad.at(i, j);
          }
        }
        if (w->needs_grad) {
          auto& g = w->ensure_grad();
          for (std::int64_t i = 0; i < self.grad.n_rows; ++i) {
            double dot = 0.0;
            for (std::int64_t j = 0; j < self.grad.n_cols; ++j) dot += self.grad.at(i, j) * x->value.at(i, j);
            g.at(i, 0) += dot;
          }
        }
      };
    return out;
  }

  /// Row-wise inner products: out_i = <a_i, b_i>, an n x 1 column.
  Node* rows_dot(Node* a, Node* b) {
    require_same_shape(a, b, "rows_dot");
    DenseMatrix v(a->rows(), 1);
    for (std::int64_t i = 0; i < a->rows(); ++i) {
      double dot = 0.0;
      for (std::int64_t j = 0; j < a->cols(); ++j) dot += a->value.at(i, j) * b->value.at(i, j);
      v.at(i, 0) = dot;
    }
    Node* out = make(std::move(v), {a, b});
    if (out->needs_grad)
      out->backward_fn = [a, b](Node& self) {
        for (std::int64_t i = 0; i < a->rows(); ++i) {
          const double gi = self.grad.at(i, 0);
          if (a->needs_grad) {
            auto& g = a->ensure_grad();
            for (std::int64_t j = 0; j < a->cols(); ++j) g.at(i, j) += gi * b->value.at(i, j);
          }
          if (b->needs_grad) {
            auto& g = b->ensure_grad();
            for (std::int64_t j = 0; j < a->cols(); ++j) g.at(i, j) += gi * a->value.at(i, j);
          }
        }
      };
    return out;
  }

  Node* hadamard_dense(Node* a, Node* b) {
    require_same_shape(a, b, "hadamard_dense");
    DenseMatrix v = a->value;
    for (std::int64_t i = 0; i < v.size(); ++i) v.data[i] *= b->value.data[i];
    Node* out = make(std::move(v), {a, b});
    if (out->needs_grad)
      out->backward_fn = [a, b](Node& self) {
        if (a->needs_grad) {
          auto& g = a->ensure_grad();
          for (std::int64_t i = 0; i < self.grad.size(); ++i) g.data[i] += self.grad.data[i] * b->value.data[i];
        }
        if (b->needs_grad) {
          auto& g = b->ensure_grad();
          for (std::int64_t i = 0; i < self.grad.size(); ++i) g.data[i] += self.grad.data[i] * a->value.data[i];
        }
      };
    return out;
  }

  Node* concat_cols(const std::vector<Node*>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: empty input");
    const std::int64_t n = parts[0]->rows();
    std::int64_t total = 0;
    for (Node* p : parts) {
      if (p->rows() != n) throw std::invalid_argument("concat_cols: row mismatch");
      total += p->cols();
    }
    DenseMatrix v(n, total);
    std::int64_t off = 0;
    for (Node* p : parts) {
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < p->cols(); ++j) v.at(i, off + j) = p->value.at(i, j);
      off += p->cols();
    }
    Node* out = make(std::move(v), parts);
    if (out->needs_grad)
      out->backward_fn = [parts](Node& self) {
        std::int64_t off = 0;
        for (Node* p : parts) {
          if (p->needs_grad) {
            auto& g = p->ensure_grad();
            for (std::int64_t i = 0; i < p->rows(); ++i)
              for (std::int64_t j = 0; j < p->cols(); ++j) g.at(i, j) += self.grad.at(i, off + j);
          }
          off += p->cols();
        }
      };
    return out;
  }

  Node* slice_cols(Node* x, std::int64_t lo, std::int64_t hi) {
    if (lo < 0 || hi > x->cols() || lo >= hi) throw std::invalid_argument("slice_cols: bad range");
    DenseMatrix v(x->rows(), hi - lo);
    for (std::int64_t i = 0; i < x->rows(); ++i)
      for (std::int64_t j = lo; j < hi; ++j) v.at(i, j - lo) = x->value.at(i, j);
    Node* out = make(std::move(v), {x});
    if (out->needs_grad)
      out->backward_fn = [x, lo](Node& self) {
        auto& g = x->ensure_grad();
        for (std::int64_t i = 0; i < self.grad.n_rows; ++i)
          for (std::int64_t j = 0; j < self.grad.n_cols; ++j) g.at(i, lo + j) += self.grad.at(i, j);
      };
    return out;
  }

  /// Gathers rows by index; duplicate indices are allowed and their gradients
  /// accumulate.
  Node* row_select(Node* x, std::vector<std::int32_t> rows) {
    for (auto r : rows)
      if (r < 0 || r >= x->rows()) throw std::out_of_range("row_select: index out of range");
    DenseMatrix v(static_cast<std::int64_t>(rows.size()), x->cols());
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::int64_t j = 0; j < x->cols(); ++j) v.at(static_cast<std::int64_t>(i), j) = x->value.at(rows[i], j);
    Node* out = make(std::move(v), {x});
    if (out->needs_grad)
      out->backward_fn = [x, rows = std::move(rows)](Node& self) {
        auto& g = x->ensure_grad();
        for (std::size_t i = 0; i < rows.size(); ++i)
          for (std::int64_t j = 0; j < self.grad.n_cols; ++j)
            g.at(rows[i], j) += self.grad.at(static_cast<std::int64_t>(i), j);
      };
    return out;
  }

  Node* tanh(Node* x) {
    DenseMatrix v = x->value;
    for (auto& t : v.data) t = std::tanh(t);
    Node* out = make(std::move(v), {x});
    if (out->needs_grad)
      out->backward_fn = [x](Node& self) {
        auto& g = x->ensure_grad();
        for (std::int64_t i = 0; i < self.grad.size(); ++i) {
          const double y = self.value.data[i];
          g.data[i] += self.grad.data[i] * (1.0 - y * y);
        }
      };
    return out;
  }

  /// -ln(sigmoid(x)) = softplus(-x), computed without overflow for large |x|.
  Node* sigmoid_logloss(Node* x) {
    DenseMatrix v = x->value;
    for (auto& t : v.data) t = t > 0.0 ? std::log1p(std::exp(-t)) : -t + std::log1p(std::exp(t));
    Node* out = make(std::move(v), {x});
    if (out->needs_grad)
      out->backward_fn = [x](Node& self) {
        auto& g = x->ensure_grad();
        for (std::int64_t i = 0; i < self.grad.size(); ++i) {
          const double t = x->value.data[i];
          const double sig = t >= 0.0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t));
          g.data[i] += self.grad.data[i] * (sig - 1.0);
        }
      };
    return out;
  }

  Node* softmax_rows(Node* x) {
    if (x->cols() == 0) throw std::invalid_argument("softmax_rows: empty axis");
    DenseMatrix v = x->value;
    for (std::int64_t i = 0; i < v.n_rows; ++i) {
      double mx = v.at(i, 0);
      for (std::int64_t j = 1; j < v.n_cols; ++j) mx = std::max(mx, v.at(i, j));
      double sum = 0.0;
      for (std::int64_t j = 0; j < v.n_cols; ++j) {
        v.at(i, j) = std::exp(v.at(i, j) - mx);
        sum += v.at(i, j);
      }
      for (std::int64_t j = 0; j < v.n_cols; ++j) v.at(i, j) /= sum;
    }
    Node* out = make(std::move(v), {x});
    if (out->needs_grad)
      out->backward_fn = [x](Node& self) {
        auto& g = x->ensure_grad();
        for (std::int64_t i = 0; i < self.grad.n_rows; ++i) {
          double dot = 0.0;
          for (std::int64_t j = 0; j < self.grad.n_cols; ++j) dot += self.grad.at(i, j) * self.value.at(i, j);
          for (std::int64_t j = 0; j < self.grad.n_cols; ++j)
            g.at(i, j) += self.value.at(i, j) * (self.grad.at(i, j) - dot);
        }
      };
    return out;
  }

  Node* sum_all(Node* x) {
    DenseMatrix v(1, 1);
    for (double t : x->value.data) v.at(0, 0) += t;
    Node* out = make(std::move(v), {x});
    if (out->needs_grad)
      out->backward_fn = [x](Node& self) {
        auto& g = x->ensure_grad();
        const double gs = self.grad.at(0, 0);
        for (auto& t : g.data) t += gs;
      };
    return out;
  }

  Node* mean_all(Node* x) {
    if (x->value.size() == 0) throw std::invalid_argument("mean_all: empty input");
    return scale(sum_all(x), 1.0 / static_cast<double>(x->value.size()));
  }

  Node* square(Node* x) { return hadamard_dense(x, x); }

  /// sqrt(x + eps); the offset keeps the gradient finite at x = 0.
  Node* sqrt_eps(Node* x, double eps = 1e-10) {
    DenseMatrix v = x->value;
    for (auto& t : v.data) t = std::sqrt(t + eps);
    Node* out = make(std::move(v), {x});
    if (out->needs_grad)
      out->backward_fn = [x](Node& self) {
        auto& g = x->ensure_grad();
        for (std::int64_t i = 0; i < self.grad.size(); ++i)
          g.data[i] += self.grad.data[i] / (2.0 * self.value.data[i]);
      };
    return out;
  }

  /// max(x, 0) elementwise; subgradient 0 at the kink.
  Node* clamp_min0(Node* x) {
    DenseMatrix v = x->value;
    for (auto& t : v.data) t = std::max(t, 0.0);
    Node* out = make(std::move(v), {x});
    if (out->needs_grad)
      out->backward_fn = [x](Node& self) {
        auto& g = x->ensure_grad();
        for (std::int64_t i = 0; i < self.grad.size(); ++i)
          if (x->value.data[i] > 0.0) g.data[i] += self.grad.data[i];
      };
    return out;
  }

  Node* div(Node* a, Node* b) {
    require_same_shape(a, b, "div");
    DenseMatrix v = a->value;
    for (std::int64_t i = 0; i < v.size(); ++i) v.data[i] /= b->value.data[i];
    Node* out = make(std::move(v), {a, b});
    if (out->needs_grad)
      out->backward_fn = [a, b](Node& self) {
        for (std::int64_t i = 0; i < self.grad.size(); ++i) {
          const double gb = self.grad.data[i] / b->value.data[i];
          if (a->needs_grad) a->ensure_grad().data[i] += gb;
          if (b->needs_grad) b->ensure_grad().data[i] -= gb * self.value.data[i];
        }
      };
    return out;
  }

  /// Elementwise max; ties route the gradient to the first argument.
  Node* max2(Node* a, Node* b) {
    require_same_shape(a, b, "max2");
    DenseMatrix v = a->value;
    for (std::int64_t i = 0; i < v.size(); ++i) v.data[i] = std::max(a->value.data[i], b->value.data[i]);
    Node* out = make(std::move(v), {a, b});
    if (out->needs_grad)
      out->backward_fn = [a, b](Node& self) {
        for (std::int64_t i = 0; i < self.grad.size(); ++i) {
          if (a->value.data[i] >= b->value.data[i]) {
            if (a->needs_grad) a->ensure_grad().data[i] += self.grad.data[i];
          } else if (b->needs_grad) {
            b->ensure_grad().data[i] += self.grad.data[i];
          }
        }
      };
    return out;
  }

  /// D_ij = ||x_i - x_j||^2 over the rows of x (n x k -> n x n).
  Node* pairwise_sq_dists(Node* x) {
    const std::int64_t n = x->rows(), k = x->cols();
    DenseMatrix v(n, n);
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < n; ++j) {
        double d = 0.0;
        for (std::int64_t c = 0; c < k; ++c) {
          const double diff = x->value.at(i, c) - x->value.at(j, c);
          d += diff * diff;
        }
        v.at(i, j) = d;
      }
    Node* out = make(std::move(v), {x});
    if (out->needs_grad)
      out->backward_fn = [x, n, k](Node& self) {
        auto& g = x->ensure_grad();
        for (std::int64_t i = 0; i < n; ++i)
          for (std::int64_t j = 0; j < n; ++j) {
            const double w = 2.0 * (self.grad.at(i, j) + self.grad.at(j, i));
            if (w == 0.0) continue;
            for (std::int64_t c = 0; c < k; ++c)
              g.at(i, c) += w * (x->value.at(i, c) - x->value.at(j, c));
          }
      };
    return out;
  }

  /// Y = X - rowmean - colmean + grandmean over a square matrix. The operator
  /// is its own adjoint, so the backward pass reuses the same centering.
  Node* double_center(Node* x) {
    if (x->rows() != x->cols()) throw std::invalid_argument("double_center: matrix not square");
    Node* out = make(center(x->value), {x});
    if (out->needs_grad)
      out->backward_fn = [x](Node& self) { accumulate(x->ensure_grad(), center(self.grad)); };
    return out;
  }

  /// Reverse pass from a scalar root. May be called once per tape.
  void backward(Node* root) {
    if (root->rows() != 1 || root->cols() != 1) throw std::logic_error("backward: root must be 1x1");
    if (backward_done_) throw std::logic_error("backward: tape already consumed");
    backward_done_ = true;
    root->ensure_grad().at(0, 0) = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      Node& node = **it;
      if (node.backward_fn && node.needs_grad && node.grad.n_rows == node.value.n_rows) node.backward_fn(node);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  static void require_same_shape(Node* a, Node* b, const char* op) {
    if (!a->value.same_shape(b->value))
      throw std::invalid_argument(std::string(op) + ": shape mismatch (" + std::to_string(a->rows()) + "x" +
                                  std::to_string(a->cols()) + " vs " + std::to_string(b->rows()) + "x" +
                                  std::to_string(b->cols()) + ")");
  }

  static void accumulate(DenseMatrix& dst, const DenseMatrix& src) {
    for (std::int64_t i = 0; i < dst.size(); ++i) dst.data[i] += src.data[i];
  }

  static DenseMatrix center(const DenseMatrix& m) {
    const std::int64_t n = m.n_rows;
    std::vector<double> row_mean(n, 0.0), col_mean(n, 0.0);
    double grand = 0.0;
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < n; ++j) {
        row_mean[i] += m.at(i, j);
        col_mean[j] += m.at(i, j);
        grand += m.at(i, j);
      }
    for (auto& v : row_mean) v /= static_cast<double>(n);
    for (auto& v : col_mean) v /= static_cast<double>(n);
    grand /= static_cast<double>(n) * static_cast<double>(n);
    DenseMatrix out(n, n);
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < n; ++j) out.at(i, j) = m.at(i, j) - row_mean[i] - col_mean[j] + grand;
    return out;
  }

  Node* make(DenseMatrix value, const std::vector<Node*>& inputs) {
    auto node = std::make_unique<Node>();
    node->value = std::move(value);
    for (Node* in : inputs) node->needs_grad = node->needs_grad || in->needs_grad;
    nodes_.push_back(std::move(node));
    return nodes_.back().get();
  }

  std::vector<std::unique_ptr<Node>> nodes_;
  bool backward_done_ = false;
};

// -- finite-difference verification ------------------------------------------

struct ParamRef {
  std::string name;
  DenseMatrix* table;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  double mean_rel_err = 0.0;
  double tolerance = 0.0;
  std::string worst_param;
  std::int64_t worst_index = -1;
  std::size_t n_checked = 0;

  bool pass() const { return max_rel_err <= tolerance; }
};

/// Central-difference check of analytic gradients. loss_fn(nullptr) must
/// return the loss at the current parameters; loss_fn(&grads) must also fill
/// one gradient table per parameter, in order. Entries are subsampled above
/// max_entries (seeded), every entry is checked otherwise.
inline GradCheckReport finite_diff_check(
    const std::vector<ParamRef>& params,
    const std::function<double(std::vector<DenseMatrix>*)>& loss_fn, double h, double tolerance,
    std::size_t max_entries = 10000, std::uint64_t subsample_seed = 1) {
  std::vector<DenseMatrix> analytic;
  const double base = loss_fn(&analytic);
  if (!std::isfinite(base)) throw std::runtime_error("finite_diff_check: non-finite loss");
  if (analytic.size() != params.size())
    throw std::logic_error("finite_diff_check: gradient count mismatch");

  std::size_t total = 0;
  for (const auto& p : params) total += static_cast<std::size_t>(p.table->size());
  const bool subsample = total > max_entries;
  Rng rng(subsample_seed);

  GradCheckReport report;
  report.tolerance = tolerance;
  double err_sum = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    DenseMatrix& table = *params[pi].table;
    if (!analytic[pi].same_shape(table)) throw std::logic_error("finite_diff_check: gradient shape mismatch");
    for (std::int64_t i = 0; i < table.size(); ++i) {
      if (subsample && rng.uniform01() > static_cast<double>(max_entries) / static_cast<double>(total))
        continue;
      const double saved = table.data[i];
      table.data[i] = saved + h;
      const double up = loss_fn(nullptr);
      table.data[i] = saved - h;
      const double down = loss_fn(nullptr);
      table.data[i] = saved;
      if (!std::isfinite(up) || !std::isfinite(down))
        throw std::runtime_error("finite_diff_check: non-finite loss during perturbation");
      const double fd = (up - down) / (2.0 * h);
      const double adg = analytic[pi].data[i];
      const double rel = std::abs(adg - fd) / std::max({std::abs(adg), std::abs(fd), 1e-8});
      err_sum += rel;
      ++report.n_checked;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = params[pi].name;
        report.worst_index = i;
      }
    }
  }
  report.mean_rel_err = report.n_checked ? err_sum / static_cast<double>(report.n_checked) : 0.0;
  return report;
}

}  // namespace disenhcn::ad
