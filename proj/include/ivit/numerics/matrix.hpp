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

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ivit/error.hpp"

namespace ivit {

// Dense row-major matrix. Training runs with float, verification with double.
template <class T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using MatrixF = Matrix<float>;
using MatrixD = Matrix<double>;

// Floor applied to every L1 normalization denominator.
inline constexpr double kNormFloor = 1e-12;

template <class T>
bool all_finite(const Matrix<T>& m) {
  return m.allFinite();
}

template <class T>
void require_finite(const Matrix<T>& m, const std::string& what) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    if (!m.row(r).allFinite()) {
      throw ValidationError(what + ": non-finite value in row " + std::to_string(r));
    }
  }
}

// Row-wise softmax with per-row max subtraction.
template <class T>
Matrix<T> softmax_rows(const Matrix<T>& m) {
  require_finite(m, "softmax_rows");
  Matrix<T> out(m.rows(), m.cols());
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const T peak = m.row(r).maxCoeff();
    out.row(r) = (m.row(r).array() - peak).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

// D_KL(p || q') in nats, where q' = (1 - smoothing) q + smoothing / n.
// Terms with p_i == 0 contribute nothing.
template <class T>
T kl_rows(std::span<const T> p, std::span<const T> q, T smoothing) {
  require(p.size() == q.size(), "kl_rows: length mismatch (" + std::to_string(p.size()) +
                                    " vs " + std::to_string(q.size()) + ")");
  require(!p.empty(), "kl_rows: empty distribution");
  require(smoothing >= T(0) && smoothing < T(1), "kl_rows: smoothing must lie in [0, 1)");
  T p_sum = 0, q_sum = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    require(p[i] >= T(0) && q[i] >= T(0), "kl_rows: negative entry at index " + std::to_string(i));
    p_sum += p[i];
    q_sum += q[i];
  }
  require(std::abs(p_sum - T(1)) <= T(1e-4) && std::abs(q_sum - T(1)) <= T(1e-4),
          "kl_rows: inputs must each sum to 1 within 1e-4");
  const T uniform = T(1) / static_cast<T>(p.size());
  T total = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == T(0)) continue;
    const T qs = (T(1) - smoothing) * q[i] + smoothing * uniform;
    total += p[i] * std::log(p[i] / qs);
  }
  return total;
}

template <class T>
T kl_rows(const std::vector<T>& p, const std::vector<T>& q, T smoothing) {
  return kl_rows(std::span<const T>(p), std::span<const T>(q), smoothing);
}

template <class To, class From>
Matrix<To> cast(const Matrix<From>& m) {
  return m.template cast<To>();
}

}  // namespace ivit
