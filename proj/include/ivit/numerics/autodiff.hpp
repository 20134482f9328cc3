/*
 * Copyright 2026 The ivit Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

// Tape-based reverse-mode differentiation over dense matrices.
//
// A Tape records every node produced by the ops below together with a
// closure that pushes the node's gradient to its parents. Nodes live in a
// deque so references to values stay valid while the graph grows. Nodes that
// do not depend on a trainable parameter carry no closure and are skipped on
// the reverse sweep.

#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "ivit/error.hpp"
#include "ivit/numerics/matrix.hpp"

namespace ivit::ad {

template <class T>
class Tape;

template <class T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Matrix<T>& value() const { return tape->value(id); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  T scalar() const { return value()(0, 0); }
};

template <class T>
struct Gradients {
  std::map<std::string, Matrix<T>> by_name;
  // Parameters marked trainable that the seed does not depend on. Their
  // entries in by_name are zero.
  std::vector<std::string> disconnected;
};

template <class T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t)>;

  explicit Tape(bool record_gradients = true) : recording_(record_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }

  Var<T> constant(Matrix<T> value) { return push(std::move(value), false, nullptr); }

  Var<T> parameter(const std::string& name, Matrix<T> value, bool trainable = true) {
    const bool grad = recording_ && trainable;
    Var<T> v = push(std::move(value), grad, nullptr);
    nodes_[v.id].name = name;
    if (grad) params_.push_back(v.id);
    return v;
  }

  // Appends a node. `fn` is dropped when no gradient can flow through it.
  Var<T> push(Matrix<T> value, bool requires_grad, Backward fn) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = recording_ && requires_grad;
    if (n.requires_grad) n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var<T>{this, nodes_.size() - 1};
  }

  const Matrix<T>& value(std::size_t id) const { return nodes_[id].value; }
  bool needs(std::size_t id) const { return nodes_[id].requires_grad; }
  bool needs(const Var<T>& v) const { return needs(v.id); }
  const Matrix<T>& grad(std::size_t id) const { return nodes_[id].grad; }

  // Zero-initialized gradient accumulator of node `id`.
  Matrix<T>& slot(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) n.grad = Matrix<T>::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  std::size_t size() const { return nodes_.size(); }

  // Reverse sweep from a 1x1 seed; returns d(seed)/d(parameter) for every
  // trainable parameter recorded on this tape.
  Gradients<T> backward(const Var<T>& seed) {
    const Matrix<T>& s = value(seed.id);
    if (s.rows() != 1 || s.cols() != 1) {
      throw ValidationError("reverse_gradients: seed must be scalar, got " +
                            std::to_string(s.rows()) + "x" + std::to_string(s.cols()));
    }
    for (Node& n : nodes_) n.grad.resize(0, 0);
    if (needs(seed.id)) slot(seed.id)(0, 0) = T(1);
    for (std::size_t i = seed.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backward && n.grad.size() != 0) n.backward(*this, i);
    }
    Gradients<T> out;
    for (std::size_t id : params_) {
      const Node& n = nodes_[id];
      if (n.grad.size() == 0) {
        out.disconnected.push_back(n.name);
        out.by_name[n.name] = Matrix<T>::Zero(n.value.rows(), n.value.cols());
      } else {
        out.by_name[n.name] = n.grad;
      }
    }
    return out;
  }

 private:
  struct Node {
    Matrix<T> value;
    Matrix<T> grad;
    bool requires_grad = false;
    Backward backward;
    std::string name;
  };

  bool recording_;
  std::deque<Node> nodes_;
  std::vector<std::size_t> params_;
};

namespace detail {

template <class T>
void check_same_tape(const Var<T>& a, const Var<T>& b) {
  if (a.tape != b.tape) throw ValidationError("autodiff: operands recorded on different tapes");
}

template <class T>
void require_shape(bool ok, const char* op, const Var<T>& a, const Var<T>& b) {
  if (!ok) {
    throw ValidationError(std::string(op) + ": dimension mismatch " + std::to_string(a.rows()) +
                          "x" + std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                          std::to_string(b.cols()));
  }
}

}  // namespace detail

// a * b
template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  detail::check_same_tape(a, b);
  detail::require_shape(a.cols() == b.rows(), "matmul", a, b);
  Tape<T>& t = *a.tape;
  Matrix<T> out;
  out.noalias() = a.value() * b.value();
  const std::size_t ia = a.id, ib = b.id;
  return t.push(std::move(out), t.needs(ia) || t.needs(ib), [ia, ib](Tape<T>& t, std::size_t self) {
    const Matrix<T>& g = t.grad(self);
    if (t.needs(ia)) t.slot(ia).noalias() += g * t.value(ib).transpose();
    if (t.needs(ib)) t.slot(ib).noalias() += t.value(ia).transpose() * g;
  });
}

// a * b^T
template <class T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b) {
  detail::check_same_tape(a, b);
  detail::require_shape(a.cols() == b.cols(), "matmul_nt", a, b);
  Tape<T>& t = *a.tape;
  Matrix<T> out;
  out.noalias() = a.value() * b.value().transpose();
  const std::size_t ia = a.id, ib = b.id;
  return t.push(std::move(out), t.needs(ia) || t.needs(ib), [ia, ib](Tape<T>& t, std::size_t self) {
    const Matrix<T>& g = t.grad(self);
    if (t.needs(ia)) t.slot(ia).noalias() += g * t.value(ib);
    if (t.needs(ib)) t.slot(ib).noalias() += g.transpose() * t.value(ia);
  });
}

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::check_same_tape(a, b);
  detail::require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "add", a, b);
  Tape<T>& t = *a.tape;
  const std::size_t ia = a.id, ib = b.id;
  return t.push(a.value() + b.value(), t.needs(ia) || t.needs(ib), [ia, ib](Tape<T>& t, std::size_t self) {
    if (t.needs(ia)) t.slot(ia) += t.grad(self);
    if (t.needs(ib)) t.slot(ib) += t.grad(self);
  });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  detail::check_same_tape(a, b);
  detail::require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "sub", a, b);
  Tape<T>& t = *a.tape;
  const std::size_t ia = a.id, ib = b.id;
  return t.push(a.value() - b.value(), t.needs(ia) || t.needs(ib), [ia, ib](Tape<T>& t, std::size_t self) {
    if (t.needs(ia)) t.slot(ia) += t.grad(self);
    if (t.needs(ib)) t.slot(ib) -= t.grad(self);
  });
}

// Elementwise product.
template <class T>
Var<T> hadamard(const Var<T>& a, const Var<T>& b) {
  detail::check_same_tape(a, b);
  detail::require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "hadamard", a, b);
  Tape<T>& t = *a.tape;
  const std::size_t ia = a.id, ib = b.id;
  return t.push(a.value().cwiseProduct(b.value()), t.needs(ia) || t.needs(ib),
                [ia, ib](Tape<T>& t, std::size_t self) {
                  const Matrix<T>& g = t.grad(self);
                  if (t.needs(ia)) t.slot(ia) += g.cwiseProduct(t.value(ib));
                  if (t.needs(ib)) t.slot(ib) += g.cwiseProduct(t.value(ia));
                });
}

template <class T>
Var<T> scale(const Var<T>& a, T factor) {
  Tape<T>& t = *a.tape;
  const std::size_t ia = a.id;
  return t.push(a.value() * factor, t.needs(ia), [ia, factor](Tape<T>& t, std::size_t self) {
    t.slot(ia) += t.grad(self) * factor;
  });
}

// Affine bias: adds the 1 x cols row `bias` to every row of `a`.
template <class T>
Var<T> add_row(const Var<T>& a, const Var<T>& bias) {
  detail::check_same_tape(a, bias);
  detail::require_shape(bias.rows() == 1 && bias.cols() == a.cols(), "add_row", a, bias);
  Tape<T>& t = *a.tape;
  Matrix<T> out = a.value().rowwise() + bias.value().row(0);
  const std::size_t ia = a.id, ib = bias.id;
  return t.push(std::move(out), t.needs(ia) || t.needs(ib), [ia, ib](Tape<T>& t, std::size_t self) {
    const Matrix<T>& g = t.grad(self);
    if (t.needs(ia)) t.slot(ia) += g;
    if (t.needs(ib)) t.slot(ib) += g.colwise().sum();
  });
}

// x * w + b
template <class T>
Var<T> affine(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  return add_row(matmul(x, w), b);
}

// Row i of `a` multiplied by weights(i, 0).
template <class T>
Var<T> scale_rows(const Var<T>& a, const Var<T>& weights) {
  detail::check_same_tape(a, weights);
  detail::require_shape(weights.cols() == 1 && weights.rows() == a.rows(), "scale_rows", a, weights);
  Tape<T>& t = *a.tape;
  Matrix<T> out = weights.value().col(0).asDiagonal() * a.value();
  const std::size_t ia = a.id, iw = weights.id;
  return t.push(std::move(out), t.needs(ia) || t.needs(iw), [ia, iw](Tape<T>& t, std::size_t self) {
    const Matrix<T>& g = t.grad(self);
    if (t.needs(ia)) t.slot(ia) += t.value(iw).col(0).asDiagonal() * g;
    if (t.needs(iw)) t.slot(iw) += g.cwiseProduct(t.value(ia)).rowwise().sum();
  });
}

template <class T>
Var<T> softmax_rows(const Var<T>& a) {
  Tape<T>& t = *a.tape;
  const std::size_t ia = a.id;
  return t.push(ivit::softmax_rows(a.value()), t.needs(ia), [ia](Tape<T>& t, std::size_t self) {
    const Matrix<T>& y = t.value(self);
    const Matrix<T>& g = t.grad(self);
    const Matrix<T> gy = g.cwiseProduct(y);
    const auto dot = gy.rowwise().sum();
    t.slot(ia) += gy - (y.array().colwise() * dot.array()).matrix();
  });
}

template <class T>
Var<T> sigmoid(const Var<T>& a) {
  Tape<T>& t = *a.tape;
  const std::size_t ia = a.id;
  Matrix<T> out = (T(1) / (T(1) + (-a.value().array()).exp())).matrix();
  return t.push(std::move(out), t.needs(ia), [ia](Tape<T>& t, std::size_t self) {
    const auto y = t.value(self).array();
    t.slot(ia) += (t.grad(self).array() * y * (T(1) - y)).matrix();
  });
}

// GELU, tanh approximation.
template <class T>
Var<T> gelu(const Var<T>& a) {
  Tape<T>& t = *a.tape;
  const std::size_t ia = a.id;
  const T c = std::sqrt(T(2) / std::numbers::pi_v<T>);
  const T k = T(0.044715);
  const auto x = a.value().array();
  Matrix<T> out = (T(0.5) * x * (T(1) + (c * (x + k * x.cube())).tanh())).matrix();
  return t.push(std::move(out), t.needs(ia), [ia, c, k](Tape<T>& t, std::size_t self) {
    const auto x = t.value(ia).array();
    const auto th = (c * (x + k * x.cube())).tanh();
    const auto d = T(0.5) * (T(1) + th) + T(0.5) * x * (T(1) - th.square()) * c * (T(1) + T(3) * k * x.square());
    t.slot(ia) += (t.grad(self).array() * d).matrix();
  });
}

// Per-row layer normalization with learned 1 x cols scale and offset.
template <class T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& offset, T eps = T(1e-6)) {
  detail::check_same_tape(x, gain);
  detail::require_shape(gain.rows() == 1 && gain.cols() == x.cols(), "layer_norm", x, gain);
  detail::require_shape(offset.rows() == 1 && offset.cols() == x.cols(), "layer_norm", x, offset);
  Tape<T>& t = *x.tape;
  const Matrix<T>& xv = x.value();
  const Eigen::Index d = xv.cols();
  Matrix<T> xhat(xv.rows(), d);
  Matrix<T> rstd(xv.rows(), 1);
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    const T mean = xv.row(r).mean();
    const auto centered = xv.row(r).array() - mean;
    const T var = centered.square().mean();
    rstd(r, 0) = T(1) / std::sqrt(var + eps);
    xhat.row(r) = (centered * rstd(r, 0)).matrix();
  }
  Matrix<T> out = (xhat.array().rowwise() * gain.value().row(0).array()).matrix();
  out.rowwise() += offset.value().row(0);
  const std::size_t ix = x.id, ig = gain.id, io = offset.id;
  const bool grad = t.needs(ix) || t.needs(ig) || t.needs(io);
  return t.push(std::move(out), grad,
                [ix, ig, io, xhat = std::move(xhat), rstd = std::move(rstd)](Tape<T>& t, std::size_t self) {
                  const Matrix<T>& g = t.grad(self);
                  if (t.needs(ig)) t.slot(ig) += g.cwiseProduct(xhat).colwise().sum();
                  if (t.needs(io)) t.slot(io) += g.colwise().sum();
                  if (!t.needs(ix)) return;
                  const T n = static_cast<T>(xhat.cols());
                  const Matrix<T> dxhat = (g.array().rowwise() * t.value(ig).row(0).array()).matrix();
                  Matrix<T>& dx = t.slot(ix);
                  for (Eigen::Index r = 0; r < xhat.rows(); ++r) {
                    const T s1 = dxhat.row(r).sum();
                    const T s2 = dxhat.row(r).dot(xhat.row(r));
                    dx.row(r) += ((n * dxhat.row(r).array() - s1 - xhat.row(r).array() * s2) *
                                  (rstd(r, 0) / n))
                                     .matrix();
                  }
                });
}

template <class T>
Var<T> slice_cols(const Var<T>& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw ValidationError("slice_cols: range [" + std::to_string(start) + ", " +
                          std::to_string(start + count) + ") outside " + std::to_string(a.cols()) +
                          " columns");
  }
  Tape<T>& t = *a.tape;
  const std::size_t ia = a.id;
  return t.push(a.value().middleCols(start, count), t.needs(ia),
                [ia, start, count](Tape<T>& t, std::size_t self) {
                  t.slot(ia).middleCols(start, count) += t.grad(self);
                });
}

template <class T>
Var<T> slice_rows(const Var<T>& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) {
    throw ValidationError("slice_rows: range [" + std::to_string(start) + ", " +
                          std::to_string(start + count) + ") outside " + std::to_string(a.rows()) +
                          " rows");
  }
  Tape<T>& t = *a.tape;
  const std::size_t ia = a.id;
  return t.push(a.value().middleRows(start, count), t.needs(ia),
                [ia, start, count](Tape<T>& t, std::size_t self) {
                  t.slot(ia).middleRows(start, count) += t.grad(self);
                });
}

template <class T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  require(!parts.empty(), "concat_cols: no operands");
  Tape<T>& t = *parts.front().tape;
  Eigen::Index cols = 0;
  bool grad = false;
  for (const Var<T>& p : parts) {
    detail::check_same_tape(parts.front(), p);
    detail::require_shape(p.rows() == parts.front().rows(), "concat_cols", parts.front(), p);
    cols += p.cols();
    grad = grad || t.needs(p);
  }
  Matrix<T> out(parts.front().rows(), cols);
  std::vector<std::pair<std::size_t, Eigen::Index>> layout;
  Eigen::Index at = 0;
  for (const Var<T>& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    layout.emplace_back(p.id, at);
    at += p.cols();
  }
  return t.push(std::move(out), grad, [layout = std::move(layout)](Tape<T>& t, std::size_t self) {
    const Matrix<T>& g = t.grad(self);
    for (const auto& [id, offset] : layout) {
      if (t.needs(id)) t.slot(id) += g.middleCols(offset, t.value(id).cols());
    }
  });
}

template <class T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  require(!parts.empty(), "concat_rows: no operands");
  Tape<T>& t = *parts.front().tape;
  Eigen::Index rows = 0;
  bool grad = false;
  for (const Var<T>& p : parts) {
    detail::check_same_tape(parts.front(), p);
    detail::require_shape(p.cols() == parts.front().cols(), "concat_rows", parts.front(), p);
    rows += p.rows();
    grad = grad || t.needs(p);
  }
  Matrix<T> out(rows, parts.front().cols());
  std::vector<std::pair<std::size_t, Eigen::Index>> layout;
  Eigen::Index at = 0;
  for (const Var<T>& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    layout.emplace_back(p.id, at);
    at += p.rows();
  }
  return t.push(std::move(out), grad, [layout = std::move(layout)](Tape<T>& t, std::size_t self) {
    const Matrix<T>& g = t.grad(self);
    for (const auto& [id, offset] : layout) {
      if (t.needs(id)) t.slot(id) += g.middleRows(offset, t.value(id).rows());
    }
  });
}

// Elementwise mean of equally-shaped operands.
template <class T>
Var<T> mean_of(const std::vector<Var<T>>& parts) {
  require(!parts.empty(), "mean_of: no operands");
  Tape<T>& t = *parts.front().tape;
  Matrix<T> out = parts.front().value();
  bool grad = t.needs(parts.front());
  for (std::size_t i = 1; i < parts.size(); ++i) {
    detail::check_same_tape(parts.front(), parts[i]);
    detail::require_shape(parts[i].rows() == out.rows() && parts[i].cols() == out.cols(), "mean_of",
                          parts.front(), parts[i]);
    out += parts[i].value();
    grad = grad || t.needs(parts[i]);
  }
  const T inv = T(1) / static_cast<T>(parts.size());
  out *= inv;
  std::vector<std::size_t> ids;
  for (const Var<T>& p : parts) ids.push_back(p.id);
  return t.push(std::move(out), grad, [ids = std::move(ids), inv](Tape<T>& t, std::size_t self) {
    for (std::size_t id : ids) {
      if (t.needs(id)) t.slot(id) += t.grad(self) * inv;
    }
  });
}

template <class T>
Var<T> sum(const Var<T>& a) {
  Tape<T>& t = *a.tape;
  Matrix<T> out(1, 1);
  out(0, 0) = a.value().sum();
  const std::size_t ia = a.id;
  return t.push(std::move(out), t.needs(ia), [ia](Tape<T>& t, std::size_t self) {
    t.slot(ia).array() += t.grad(self)(0, 0);
  });
}

// Divides a 1 x n row by max(sum, 1e-12).
template <class T>
Var<T> normalize_l1(const Var<T>& a) {
  require(a.rows() == 1, "normalize_l1: expects a single row");
  Tape<T>& t = *a.tape;
  const T s = a.value().sum();
  const T denom = std::max(s, static_cast<T>(kNormFloor));
  const bool floored = s < static_cast<T>(kNormFloor);
  const std::size_t ia = a.id;
  return t.push(a.value() / denom, t.needs(ia), [ia, denom, floored](Tape<T>& t, std::size_t self) {
    const Matrix<T>& g = t.grad(self);
    if (floored) {
      t.slot(ia) += g / denom;
      return;
    }
    const T dot = g.cwiseProduct(t.value(self)).sum();
    t.slot(ia).array() += (g.array() - dot) / denom;
  });
}

// D_KL(p || q') for a 1 x n student row p and a fixed target q, with
// q' = (1 - smoothing) q + smoothing / n. Zero entries of p contribute 0.
template <class T>
Var<T> kl_div(const Var<T>& p, const std::vector<T>& target, T smoothing) {
  require(p.rows() == 1, "kl_div: student must be a single row");
  require(static_cast<std::size_t>(p.cols()) == target.size(),
          "kl_div: length mismatch (" + std::to_string(p.cols()) + " vs " + std::to_string(target.size()) + ")");
  require(smoothing >= T(0) && smoothing < T(1), "kl_div: smoothing must lie in [0, 1)");
  Tape<T>& t = *p.tape;
  const Eigen::Index n = p.cols();
  Matrix<T> log_q(1, n);
  const T uniform = T(1) / static_cast<T>(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    require(target[j] >= T(0), "kl_div: negative target entry at index " + std::to_string(j));
    log_q(0, j) = std::log((T(1) - smoothing) * target[j] + smoothing * uniform);
  }
  Matrix<T> out(1, 1);
  T total = 0;
  const Matrix<T>& pv = p.value();
  for (Eigen::Index j = 0; j < n; ++j) {
    if (pv(0, j) > T(0)) total += pv(0, j) * (std::log(pv(0, j)) - log_q(0, j));
  }
  out(0, 0) = total;
  const std::size_t ip = p.id;
  return t.push(std::move(out), t.needs(ip), [ip, log_q = std::move(log_q)](Tape<T>& t, std::size_t self) {
    const T g = t.grad(self)(0, 0);
    const Matrix<T>& pv = t.value(ip);
    Matrix<T>& dp = t.slot(ip);
    for (Eigen::Index j = 0; j < pv.cols(); ++j) {
      const T pj = std::max(pv(0, j), std::numeric_limits<T>::min());
      dp(0, j) += g * (std::log(pj) - log_q(0, j) + T(1));
    }
  });
}

// Softmax cross-entropy of a 1 x classes logit row against `label`.
template <class T>
Var<T> cross_entropy(const Var<T>& logits, int label) {
  require(logits.rows() == 1, "cross_entropy: logits must be a single row");
  if (label < 0 || label >= logits.cols()) {
    throw ValidationError("cross_entropy: label " + std::to_string(label) + " outside [0, " +
                          std::to_string(logits.cols()) + ")");
  }
  Tape<T>& t = *logits.tape;
  const Matrix<T> probs = ivit::softmax_rows(logits.value());
  const T peak = logits.value().maxCoeff();
  const T lse = peak + std::log((logits.value().array() - peak).exp().sum());
  Matrix<T> out(1, 1);
  out(0, 0) = lse - logits.value()(0, label);
  const std::size_t il = logits.id;
  return t.push(std::move(out), t.needs(il), [il, label, probs](Tape<T>& t, std::size_t self) {
    Matrix<T> d = probs;
    d(0, label) -= T(1);
    t.slot(il) += d * t.grad(self)(0, 0);
  });
}

template <class T>
Var<T> operator+(const Var<T>& a, const Var<T>& b) {
  return add(a, b);
}

template <class T>
Var<T> operator-(const Var<T>& a, const Var<T>& b) {
  return sub(a, b);
}

}  // namespace ivit::ad
