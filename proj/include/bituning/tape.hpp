/*
 * Copyright 2026 The bituning Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

// Reverse-mode automatic differentiation over dense matrices.
//
// A Tape records every operation of one forward pass as a node holding its
// value and a backward rule. Nodes are appended after their parents, so the
// tape is topologically ordered and backward() is a single reverse sweep.
// Gradients from several consumers of one value accumulate in its buffer.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bituning/tensor.hpp"

namespace bituning {

class Tape;

class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Receives the gradient of the node's output and pushes contributions to parents.
using BackwardFn = std::function<void(Tape&, std::span<const double>)>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true) {
    nodes_.push_back(Node{std::move(value), {}, requires_grad, {}});
    return Var(this, nodes_.size() - 1);
  }
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Records an operation. The backward rule is kept only when some parent
  /// participates in differentiation.
  Var record(Tensor value, std::initializer_list<Var> parents, BackwardFn backward) {
    bool needs = std::any_of(parents.begin(), parents.end(), [](const Var& p) { return p.requires_grad(); });
    nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(backward) : BackwardFn{}});
    return Var(this, nodes_.size() - 1);
  }

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  void accumulate(std::size_t id, std::span<const double> g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
  }

  /// Seeds d(loss)/d(loss) = 1 and sweeps the tape once in reverse.
  void backward(const Var& loss) {
    if (loss.value().size() != 1) {
      throw DimensionError("backward() needs a scalar, got " + bituning::to_string(loss.shape()));
    }
    const double one = 1.0;
    accumulate(loss.id(), std::span<const double>(&one, 1));
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.empty() || !n.backward) continue;
      n.backward(*this, n.grad);
    }
  }

  /// Gradient of the last backward() target with respect to `v`; zeros if untouched.
  Tensor grad(const Var& v) const {
    const Node& n = nodes_.at(v.id());
    if (n.grad.empty()) return Tensor(n.value.shape(), std::vector<double>(n.value.size(), 0.0));
    return Tensor(n.value.shape(), n.grad, "gradient");
  }

 private:
  struct Node {
    Tensor value;
    std::vector<double> grad;
    bool requires_grad;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }
inline bool Var::requires_grad() const { return tape_->requires_grad(id_); }

namespace detail {

inline void require_same_tape(const Var& a, const Var& b, const char* op) {
  if (&a.tape() != &b.tape()) throw DimensionError(std::string(op) + ": operands live on different tapes");
}

inline void require_same_shape(const Var& a, const Var& b, const char* op) {
  require_same_tape(a, b, op);
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

// out(m x n) += a(m x k) * b(k x n), with optional transposes of the stored operands.
inline void gemm_acc(std::span<const double> a, bool ta, std::span<const double> b, bool tb,
                     std::span<double> out, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ta ? a[p * m + i] : a[i * k + p];
      if (av == 0.0) continue;
      double* orow = out.data() + i * n;
      if (!tb) {
        const double* brow = b.data() + p * n;
        for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
      } else {
        for (std::size_t j = 0; j < n; ++j) orow[j] += av * b[j * k + p];
      }
    }
  }
}

}  // namespace detail

// Matrix product. Backward: dA = G * B^T, dB = A^T * G.
inline Var matmul(const Var& a, const Var& b) {
  detail::require_same_tape(a, b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  detail::gemm_acc(a.value().data(), false, b.value().data(), false, out, m, k, n);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(Tensor({m, n}, std::move(out), "matmul"), {a, b},
                         [ia, ib, m, k, n](Tape& t, std::span<const double> g) {
                           if (t.requires_grad(ia)) {
                             std::vector<double> ga(m * k, 0.0);
                             detail::gemm_acc(g, false, t.value(ib).data(), true, ga, m, n, k);
                             t.accumulate(ia, ga);
                           }
                           if (t.requires_grad(ib)) {
                             std::vector<double> gb(k * n, 0.0);
                             detail::gemm_acc(t.value(ia).data(), true, g, false, gb, k, m, n);
                             t.accumulate(ib, gb);
                           }
                         });
}

inline Var add(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.value().values());
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(Tensor(a.shape(), std::move(out), "add"), {a, b},
                         [ia, ib](Tape& t, std::span<const double> g) {
                           t.accumulate(ia, g);
                           t.accumulate(ib, g);
                         });
}

// a(m x n) + bias(1 x n) broadcast over rows.
inline Var add_row_bias(const Var& a, const Var& bias) {
  detail::require_same_tape(a, bias, "add_row_bias");
  const std::size_t m = a.rows(), n = a.cols();
  if (bias.rows() != 1 || bias.cols() != n) {
    throw DimensionError("add_row_bias: " + to_string(a.shape()) + " + " + to_string(bias.shape()));
  }
  std::vector<double> out(a.value().values());
  const auto bv = bias.value().data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bv[j];
  const std::size_t ia = a.id(), ib = bias.id();
  return a.tape().record(Tensor({m, n}, std::move(out), "add_row_bias"), {a, bias},
                         [ia, ib, m, n](Tape& t, std::span<const double> g) {
                           t.accumulate(ia, g);
                           if (!t.requires_grad(ib)) return;
                           std::vector<double> gb(n, 0.0);
                           for (std::size_t i = 0; i < m; ++i)
                             for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
                           t.accumulate(ib, gb);
                         });
}

// Elementwise (Hadamard) product.
inline Var mul(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "mul");
  const auto av = a.value().data(), bv = b.value().data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(Tensor(a.shape(), std::move(out), "mul"), {a, b},
                         [ia, ib](Tape& t, std::span<const double> g) {
                           const auto av = t.value(ia).data(), bv = t.value(ib).data();
                           std::vector<double> tmp(g.size());
                           if (t.requires_grad(ia)) {
                             for (std::size_t i = 0; i < g.size(); ++i) tmp[i] = g[i] * bv[i];
                             t.accumulate(ia, tmp);
                           }
                           if (t.requires_grad(ib)) {
                             for (std::size_t i = 0; i < g.size(); ++i) tmp[i] = g[i] * av[i];
                             t.accumulate(ib, tmp);
                           }
                         });
}

inline Var scale(const Var& a, double s) {
  std::vector<double> out(a.value().values());
  for (double& v : out) v *= s;
  const std::size_t ia = a.id();
  return a.tape().record(Tensor(a.shape(), std::move(out), "scale"), {a},
                         [ia, s](Tape& t, std::span<const double> g) {
                           std::vector<double> ga(g.begin(), g.end());
                           for (double& v : ga) v *= s;
                           t.accumulate(ia, ga);
                         });
}

inline Var relu(const Var& a) {
  std::vector<double> out(a.value().values());
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  const std::size_t ia = a.id();
  return a.tape().record(Tensor(a.shape(), std::move(out), "relu"), {a},
                         [ia](Tape& t, std::span<const double> g) {
                           const auto x = t.value(ia).data();
                           std::vector<double> ga(g.size());
                           for (std::size_t i = 0; i < g.size(); ++i) ga[i] = x[i] > 0.0 ? g[i] : 0.0;
                           t.accumulate(ia, ga);
                         });
}

inline Var sum(const Var& a) {
  const auto v = a.value().data();
  double s = 0.0;
  for (double x : v) s += x;
  const std::size_t ia = a.id(), n = v.size();
  return a.tape().record(Tensor::scalar(s), {a}, [ia, n](Tape& t, std::span<const double> g) {
    std::vector<double> ga(n, g[0]);
    t.accumulate(ia, ga);
  });
}

inline Var mean(const Var& a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw DimensionError("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

// Gathers rows by index; repeated indices are allowed and their gradients add up.
inline Var select_rows(const Var& a, std::vector<std::size_t> index) {
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out;
  out.reserve(index.size() * n);
  for (std::size_t r : index) {
    if (r >= m) throw DimensionError("select_rows: row " + std::to_string(r) + " of " + std::to_string(m));
    const auto src = a.value().row(r);
    out.insert(out.end(), src.begin(), src.end());
  }
  const std::size_t ia = a.id(), k = index.size();
  return a.tape().record(Tensor({k, n}, std::move(out), "select_rows"), {a},
                         [ia, m, n, index = std::move(index)](Tape& t, std::span<const double> g) {
                           std::vector<double> ga(m * n, 0.0);
                           for (std::size_t i = 0; i < index.size(); ++i)
                             for (std::size_t j = 0; j < n; ++j) ga[index[i] * n + j] += g[i * n + j];
                           t.accumulate(ia, ga);
                         });
}

inline Var transpose(const Var& a) {
  const std::size_t m = a.rows(), n = a.cols();
  const auto v = a.value().data();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = v[i * n + j];
  const std::size_t ia = a.id();
  return a.tape().record(Tensor({n, m}, std::move(out), "transpose"), {a},
                         [ia, m, n](Tape& t, std::span<const double> g) {
                           std::vector<double> ga(m * n);
                           for (std::size_t i = 0; i < m; ++i)
                             for (std::size_t j = 0; j < n; ++j) ga[i * n + j] = g[j * m + i];
                           t.accumulate(ia, ga);
                         });
}

// Stacks `top` above `bottom`; both must have the same column count.
inline Var concat_rows(const Var& top, const Var& bottom) {
  detail::require_same_tape(top, bottom, "concat_rows");
  if (top.cols() != bottom.cols()) {
    throw DimensionError("concat_rows: " + to_string(top.shape()) + " over " + to_string(bottom.shape()));
  }
  std::vector<double> out(top.value().values());
  const auto& b = bottom.value().values();
  out.insert(out.end(), b.begin(), b.end());
  const std::size_t it = top.id(), ib = bottom.id(), split = top.value().size();
  return top.tape().record(Tensor({top.rows() + bottom.rows(), top.cols()}, std::move(out), "concat_rows"),
                           {top, bottom}, [it, ib, split](Tape& t, std::span<const double> g) {
                             t.accumulate(it, g.first(split));
                             t.accumulate(ib, g.subspan(split));
                           });
}

// Rows with a Euclidean norm below this are rejected by row_l2_normalize.
inline constexpr double kNormEpsilon = 1e-12;

// y = x / |x| per row. Backward: dx = (g - y (y . g)) / |x|.
inline Var row_l2_normalize(const Var& a, double eps = kNormEpsilon) {
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(a.value().values());
  std::vector<double> norms(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double norm = l2_norm(a.value().row(i));
    if (!(norm >= eps)) {
      throw DegenerateInputError("row " + std::to_string(i) + " has norm " + std::to_string(norm) +
                                 " below " + std::to_string(eps));
    }
    norms[i] = norm;
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= norm;
  }
  const std::size_t ia = a.id();
  return a.tape().record(Tensor({m, n}, std::move(out), "row_l2_normalize"), {a},
                         [ia, m, n, norms = std::move(norms)](Tape& t, std::span<const double> g) {
                           const auto x = t.value(ia).data();
                           std::vector<double> ga(m * n);
                           for (std::size_t i = 0; i < m; ++i) {
                             const double inv = 1.0 / norms[i];
                             double yg = 0.0;
                             for (std::size_t j = 0; j < n; ++j) yg += x[i * n + j] * inv * g[i * n + j];
                             for (std::size_t j = 0; j < n; ++j)
                               ga[i * n + j] = (g[i * n + j] - x[i * n + j] * inv * yg) * inv;
                           }
                           t.accumulate(ia, ga);
                         });
}

// Row-wise log(softmax) with max subtraction. Backward: dx = g - softmax * sum(g).
inline Var log_softmax_row(const Var& a) {
  const std::size_t m = a.rows(), n = a.cols();
  if (n == 0) throw DimensionError("log_softmax_row over zero columns");
  const auto x = a.value().data();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = x.data() + i * n;
    const double mx = *std::max_element(row, row + n);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += std::exp(row[j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = row[j] - lse;
  }
  std::vector<double> probs(out.size());
  for (std::size_t i = 0; i < out.size(); ++i) probs[i] = std::exp(out[i]);
  const std::size_t ia = a.id();
  return a.tape().record(Tensor({m, n}, std::move(out), "log_softmax_row"), {a},
                         [ia, m, n, probs = std::move(probs)](Tape& t, std::span<const double> g) {
                           std::vector<double> ga(m * n);
                           for (std::size_t i = 0; i < m; ++i) {
                             double gs = 0.0;
                             for (std::size_t j = 0; j < n; ++j) gs += g[i * n + j];
                             for (std::size_t j = 0; j < n; ++j)
                               ga[i * n + j] = g[i * n + j] - probs[i * n + j] * gs;
                           }
                           t.accumulate(ia, ga);
                         });
}

}  // namespace bituning
