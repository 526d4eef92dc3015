#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <algorithm>
#include <initializer_list>
#include <memory>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "pwseg/error.hpp"

namespace pwseg {

/// Row-major dense matrix of doubles.
struct Matrix {
  std::size_t rows = 0, cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
  Matrix(std::size_t r, std::size_t c, std::vector<double> values)
      : rows(r), cols(c), data(std::move(values)) {
    require(data.size() == r * c, ErrorKind::shape, "matrix data length mismatch");
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::size_t size() const { return data.size(); }
  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
  std::string shape_str() const { return std::to_string(rows) + "x" + std::to_string(cols); }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

namespace la {

/// C += A * B
inline void gemm_acc(const Matrix& a, const Matrix& b, Matrix& c) {
  for (std::size_t i = 0; i < a.rows; ++i) {
    double* crow = &c.data[i * c.cols];
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = a.data[i * a.cols + k];
      if (aik == 0.0) continue;
      const double* brow = &b.data[k * b.cols];
      for (std::size_t j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
    }
  }
}

/// C += A * B^T
inline void gemm_nt_acc(const Matrix& a, const Matrix& b, Matrix& c) {
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* arow = &a.data[i * a.cols];
    for (std::size_t j = 0; j < b.rows; ++j) {
      const double* brow = &b.data[j * b.cols];
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols; ++k) s += arow[k] * brow[k];
      c.data[i * c.cols + j] += s;
    }
  }
}

/// C += A^T * B
inline void gemm_tn_acc(const Matrix& a, const Matrix& b, Matrix& c) {
  for (std::size_t k = 0; k < a.rows; ++k) {
    const double* arow = &a.data[k * a.cols];
    const double* brow = &b.data[k * b.cols];
    for (std::size_t i = 0; i < a.cols; ++i) {
      const double aki = arow[i];
      if (aki == 0.0) continue;
      double* crow = &c.data[i * c.cols];
      for (std::size_t j = 0; j < b.cols; ++j) crow[j] += aki * brow[j];
    }
  }
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  require(a.cols == b.rows, ErrorKind::shape, "matmul " + a.shape_str() + " * " + b.shape_str());
  Matrix c(a.rows, b.cols);
  gemm_acc(a, b, c);
  return c;
}

}  // namespace la

class Tape;

/// Handle to a node recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Matrix& value() const;
  const Matrix& grad() const;
  std::size_t rows() const { return value().rows; }
  std::size_t cols() const { return value().cols; }
  double scalar() const { return value().data.at(0); }
};

/// Records matrix operations in execution order and replays their adjoints in
/// reverse. Nodes are appended only after their inputs exist, so index order
/// is a topological order.
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t self)>;

  Var constant(Matrix value) { return push(std::move(value), {}, nullptr, false); }
  Var parameter(Matrix value) { return push(std::move(value), {}, nullptr, true); }

  /// Adds a node computed from `inputs`. `backward` reads grad(self) and
  /// accumulates into the inputs' grads; it runs only if some input needs a
  /// gradient.
  Var push(Matrix value, std::initializer_list<Var> inputs, Backward backward,
           bool force_grad = false) {
    return push(std::move(value), std::vector<Var>(inputs), std::move(backward), force_grad);
  }

  Var push(Matrix value, const std::vector<Var>& inputs, Backward backward,
           bool force_grad = false) {
    Node node;
    node.value = std::move(value);
    node.requires_grad = force_grad;
    for (const Var& in : inputs) {
      require(in.tape == this, ErrorKind::internal, "operand recorded on a different tape");
      require(in.id < nodes_.size(), ErrorKind::internal, "operand recorded after its consumer");
      node.requires_grad = node.requires_grad || nodes_[in.id].requires_grad;
      node.inputs.push_back(in.id);
    }
    if (node.requires_grad) node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return {this, nodes_.size() - 1};
  }

  const Matrix& value(std::size_t id) const {
    require(id < nodes_.size(), ErrorKind::internal, "node " + std::to_string(id) + " not on this tape");
    return nodes_[id].value;
  }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Gradient slot, zero-initialised on first access.
  Matrix& grad(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.size() != n.value.size()) n.grad = Matrix(n.value.rows, n.value.cols);
    return n.grad;
  }
  const Matrix& grad(std::size_t id) const { return nodes_[id].grad; }

  /// Reverse sweep from a 1x1 loss node. Each node is visited once.
  void backward(Var loss) {
    require(loss.tape == this, ErrorKind::internal, "loss recorded on a different tape");
    require(nodes_[loss.id].value.size() == 1, ErrorKind::shape, "backward needs a scalar loss");
    for (auto& n : nodes_) n.grad = Matrix();
    grad(loss.id).data[0] = 1.0;
    for (std::size_t id = loss.id + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.backward || n.grad.size() == 0) continue;
      for (std::size_t in : n.inputs)
        require(in < id, ErrorKind::internal, "cycle in computation graph");
      n.backward(*this, id);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape->value(id); }
inline const Matrix& Var::grad() const { return tape->grad(id); }

// Each op below records its forward value and a closure that maps the output
// adjoint to input adjoints.
namespace ad {

namespace detail {
inline void require_same(const Var& a, const Var& b, const char* op) {
  require(a.value().same_shape(b.value()), ErrorKind::shape,
          std::string(op) + ": " + a.value().shape_str() + " vs " + b.value().shape_str());
}
template <class F>
void acc_if(Tape& t, const Var& v, F&& f) {
  if (t.requires_grad(v.id)) f(t.grad(v.id));
}
}  // namespace detail

inline Var matmul(Var a, Var b) {
  Tape& t = *a.tape;
  Matrix out = la::matmul(a.value(), b.value());
  return t.push(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    detail::acc_if(t, a, [&](Matrix& ga) { la::gemm_nt_acc(g, b.value(), ga); });
    detail::acc_if(t, b, [&](Matrix& gb) { la::gemm_tn_acc(a.value(), g, gb); });
  });
}

/// A * B^T
inline Var matmul_nt(Var a, Var b) {
  Tape& t = *a.tape;
  require(a.cols() == b.cols(), ErrorKind::shape, "matmul_nt inner dims");
  Matrix out(a.rows(), b.rows());
  la::gemm_nt_acc(a.value(), b.value(), out);
  return t.push(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    detail::acc_if(t, a, [&](Matrix& ga) { la::gemm_acc(g, b.value(), ga); });
    detail::acc_if(t, b, [&](Matrix& gb) { la::gemm_tn_acc(g, a.value(), gb); });
  });
}

inline Var add(Var a, Var b) {
  detail::require_same(a, b, "add");
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += b.value().data[i];
  return a.tape->push(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    for (const Var& v : {a, b})
      detail::acc_if(t, v, [&](Matrix& gv) {
        for (std::size_t i = 0; i < g.size(); ++i) gv.data[i] += g.data[i];
      });
  });
}

inline Var sub(Var a, Var b) {
  detail::require_same(a, b, "sub");
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= b.value().data[i];
  return a.tape->push(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    detail::acc_if(t, a, [&](Matrix& ga) {
      for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i];
    });
    detail::acc_if(t, b, [&](Matrix& gb) {
      for (std::size_t i = 0; i < g.size(); ++i) gb.data[i] -= g.data[i];
    });
  });
}

/// Adds a 1 x cols row to every row of `a`.
inline Var add_row(Var a, Var row) {
  require(row.rows() == 1 && row.cols() == a.cols(), ErrorKind::shape, "add_row: bias shape");
  Matrix out = a.value();
  const std::size_t c = out.cols;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += row.value().data[i % c];
  return a.tape->push(std::move(out), {a, row}, [a, row](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    detail::acc_if(t, a, [&](Matrix& ga) {
      for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i];
    });
    detail::acc_if(t, row, [&](Matrix& gr) {
      for (std::size_t i = 0; i < g.size(); ++i) gr.data[i % g.cols] += g.data[i];
    });
  });
}

/// Elementwise product.
inline Var mul(Var a, Var b) {
  detail::require_same(a, b, "mul");
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= b.value().data[i];
  return a.tape->push(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    detail::acc_if(t, a, [&](Matrix& ga) {
      for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i] * b.value().data[i];
    });
    detail::acc_if(t, b, [&](Matrix& gb) {
      for (std::size_t i = 0; i < g.size(); ++i) gb.data[i] += g.data[i] * a.value().data[i];
    });
  });
}

inline Var scale(Var a, double s) {
  Matrix out = a.value();
  for (auto& v : out.data) v *= s;
  return a.tape->push(std::move(out), {a}, [a, s](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    Matrix& ga = t.grad(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += s * g.data[i];
  });
}

inline Var add_scalar(Var a, double s) {
  Matrix out = a.value();
  for (auto& v : out.data) v += s;
  return a.tape->push(std::move(out), {a}, [a](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    Matrix& ga = t.grad(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i];
  });
}

/// Sum of all entries, 1x1.
inline Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data) s += v;
  return a.tape->push(Matrix(1, 1, s), {a}, [a](Tape& t, std::size_t self) {
    const double g = t.grad(self).data[0];
    for (auto& v : t.grad(a.id).data) v += g;
  });
}

namespace detail {
template <class F, class D>
Var unary(Var a, F f, D df) {
  Matrix out = a.value();
  for (auto& v : out.data) v = f(v);
  return a.tape->push(std::move(out), {a}, [a, df](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    const Matrix& x = t.value(a.id);
    const Matrix& y = t.value(self);
    Matrix& ga = t.grad(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i] * df(x.data[i], y.data[i]);
  });
}
}  // namespace detail

inline Var relu(Var a) {
  return detail::unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

/// Exact GELU, x * Phi(x).
inline Var gelu(Var a) {
  return detail::unary(
      a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); },
      [](double x, double) {
        const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
        const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
        return cdf + x * pdf;
      });
}

inline double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Var softplus(Var a) {
  return detail::unary(
      a, [](double x) { return ad::softplus(x); }, [](double x, double) { return ad::sigmoid(x); });
}

inline Var sigmoid(Var a) {
  return detail::unary(
      a, [](double x) { return ad::sigmoid(x); }, [](double, double y) { return y * (1.0 - y); });
}

/// Row-wise softmax.
inline Var softmax_rows(Var a) {
  const Matrix& x = a.value();
  Matrix out(x.rows, x.cols);
  for (std::size_t i = 0; i < x.rows; ++i) {
    double mx = x(i, 0);
    for (std::size_t j = 1; j < x.cols; ++j) mx = std::max(mx, x(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < x.cols; ++j) z += out(i, j) = std::exp(x(i, j) - mx);
    for (std::size_t j = 0; j < x.cols; ++j) out(i, j) /= z;
  }
  return a.tape->push(std::move(out), {a}, [a](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    const Matrix& y = t.value(self);
    Matrix& ga = t.grad(a.id);
    for (std::size_t i = 0; i < y.rows; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < y.cols; ++j) dot += g(i, j) * y(i, j);
      for (std::size_t j = 0; j < y.cols; ++j) ga(i, j) += y(i, j) * (g(i, j) - dot);
    }
  });
}

/// Row-wise layer normalisation with learned 1 x cols scale and offset.
inline Var layer_norm(Var a, Var gamma, Var beta, double eps = 1e-5) {
  const Matrix& x = a.value();
  const std::size_t n = x.rows, k = x.cols;
  require(gamma.rows() == 1 && gamma.cols() == k && beta.rows() == 1 && beta.cols() == k,
          ErrorKind::shape, "layer_norm: parameter shape");
  Matrix xhat(n, k), out(n, k);
  std::vector<double> inv_std(n);
  for (std::size_t i = 0; i < n; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < k; ++j) mean += x(i, j);
    mean /= static_cast<double>(k);
    double var = 0.0;
    for (std::size_t j = 0; j < k; ++j) var += (x(i, j) - mean) * (x(i, j) - mean);
    var /= static_cast<double>(k);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < k; ++j) {
      xhat(i, j) = (x(i, j) - mean) * inv_std[i];
      out(i, j) = xhat(i, j) * gamma.value().data[j] + beta.value().data[j];
    }
  }
  return a.tape->push(std::move(out), {a, gamma, beta},
                      [a, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                          Tape& t, std::size_t self) {
                        const Matrix& g = t.grad(self);
                        const std::size_t n = g.rows, k = g.cols;
                        detail::acc_if(t, gamma, [&](Matrix& gg) {
                          for (std::size_t i = 0; i < n; ++i)
                            for (std::size_t j = 0; j < k; ++j) gg.data[j] += g(i, j) * xhat(i, j);
                        });
                        detail::acc_if(t, beta, [&](Matrix& gb) {
                          for (std::size_t i = 0; i < n; ++i)
                            for (std::size_t j = 0; j < k; ++j) gb.data[j] += g(i, j);
                        });
                        detail::acc_if(t, a, [&](Matrix& ga) {
                          const auto& gm = gamma.value().data;
                          const double kd = static_cast<double>(k);
                          for (std::size_t i = 0; i < n; ++i) {
                            double s1 = 0.0, s2 = 0.0;
                            for (std::size_t j = 0; j < k; ++j) {
                              const double d = g(i, j) * gm[j];
                              s1 += d;
                              s2 += d * xhat(i, j);
                            }
                            for (std::size_t j = 0; j < k; ++j) {
                              const double d = g(i, j) * gm[j];
                              ga(i, j) += inv_std[i] * (d - s1 / kd - xhat(i, j) * s2 / kd);
                            }
                          }
                        });
                      });
}

/// Columns [begin, begin + count).
inline Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  const Matrix& x = a.value();
  require(begin + count <= x.cols, ErrorKind::shape, "slice_cols out of range");
  Matrix out(x.rows, count);
  for (std::size_t i = 0; i < x.rows; ++i)
    for (std::size_t j = 0; j < count; ++j) out(i, j) = x(i, begin + j);
  return a.tape->push(std::move(out), {a}, [a, begin](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    Matrix& ga = t.grad(a.id);
    for (std::size_t i = 0; i < g.rows; ++i)
      for (std::size_t j = 0; j < g.cols; ++j) ga(i, begin + j) += g(i, j);
  });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), ErrorKind::shape, "concat_cols of nothing");
  Tape& t = *parts.front().tape;
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  for (const Var& p : parts) {
    require(p.rows() == rows, ErrorKind::shape, "concat_cols row mismatch");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::size_t off = 0;
  for (const Var& p : parts) {
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < p.cols(); ++j) out(i, off + j) = p.value()(i, j);
    off += p.cols();
  }
  return t.push(std::move(out), parts, [parts](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    std::size_t off = 0;
    for (const Var& p : parts) {
      detail::acc_if(t, p, [&](Matrix& gp) {
        for (std::size_t i = 0; i < gp.rows; ++i)
          for (std::size_t j = 0; j < gp.cols; ++j) gp(i, j) += g(i, off + j);
      });
      off += p.cols();
    }
  });
}

/// Fused pair layer for the score MLP: row (i * N + j) of the result is
/// relu(a_i + b_j + bias), for a, b of shape N x h and bias 1 x h.
inline Var pair_relu(Var a, Var b, Var bias) {
  const std::size_t n = a.rows(), h = a.cols();
  require(b.rows() == n && b.cols() == h && bias.rows() == 1 && bias.cols() == h, ErrorKind::shape,
          "pair_relu shapes");
  Matrix out(n * n, h);
  const auto& av = a.value().data;
  const auto& bv = b.value().data;
  const auto& cv = bias.value().data;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double* o = &out.data[(i * n + j) * h];
      for (std::size_t c = 0; c < h; ++c) {
        const double v = av[i * h + c] + bv[j * h + c] + cv[c];
        o[c] = v > 0.0 ? v : 0.0;
      }
    }
  return a.tape->push(std::move(out), {a, b, bias}, [a, b, bias, n, h](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    const Matrix& y = t.value(self);
    Matrix ga(n, h), gb(n, h), gc(1, h);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const std::size_t r = (i * n + j) * h;
        for (std::size_t c = 0; c < h; ++c) {
          if (y.data[r + c] <= 0.0) continue;
          const double d = g.data[r + c];
          ga.data[i * h + c] += d;
          gb.data[j * h + c] += d;
          gc.data[c] += d;
        }
      }
    detail::acc_if(t, a, [&](Matrix& m) { for (std::size_t i = 0; i < m.size(); ++i) m.data[i] += ga.data[i]; });
    detail::acc_if(t, b, [&](Matrix& m) { for (std::size_t i = 0; i < m.size(); ++i) m.data[i] += gb.data[i]; });
    detail::acc_if(t, bias, [&](Matrix& m) { for (std::size_t i = 0; i < m.size(); ++i) m.data[i] += gc.data[i]; });
  });
}

/// Reshapes column `col` of an (N*N) x c matrix into N x N, row-major over (i, j).
inline Var column_square(Var a, std::size_t col, std::size_t n) {
  const Matrix& x = a.value();
  require(x.rows == n * n && col < x.cols, ErrorKind::shape, "column_square shape");
  Matrix out(n, n);
  for (std::size_t r = 0; r < n * n; ++r) out.data[r] = x(r, col);
  return a.tape->push(std::move(out), {a}, [a, col](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    Matrix& ga = t.grad(a.id);
    for (std::size_t r = 0; r < g.size(); ++r) ga(r, col) += g.data[r];
  });
}

/// out.data[i] = a.data[index[i]] with the given output shape; index must be
/// a permutation or a selection without repeats.
inline Var gather(Var a, std::shared_ptr<const std::vector<std::size_t>> index, std::size_t rows,
                  std::size_t cols) {
  require(index->size() == rows * cols, ErrorKind::shape, "gather: index length");
  Matrix out(rows, cols);
  for (std::size_t i = 0; i < index->size(); ++i) out.data[i] = a.value().data.at((*index)[i]);
  return a.tape->push(std::move(out), {a}, [a, index](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    Matrix& ga = t.grad(a.id);
    for (std::size_t i = 0; i < index->size(); ++i) ga.data[(*index)[i]] += g.data[i];
  });
}

}  // namespace ad

inline bool all_finite(const Matrix& m) {
  for (double v : m.data)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace pwseg
