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

// Scaled dot-product attention and its split into a binary structure mask
// (which tokens relate) and a strength matrix (how strongly).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <variant>
#include <vector>

#include "ivit/error.hpp"
#include "ivit/numerics/matrix.hpp"

namespace ivit::interaction {

template <class T>
struct AttentionResult {
  Matrix<T> output;   // A * V
  Matrix<T> weights;  // A, row-stochastic
};

template <class T>
AttentionResult<T> attention(const Matrix<T>& q, const Matrix<T>& k, const Matrix<T>& v, Eigen::Index d_k) {
  require(q.cols() == d_k && k.cols() == d_k,
          "attention: Q and K must have d_k = " + std::to_string(d_k) + " columns");
  require(k.rows() == v.rows(), "attention: K has " + std::to_string(k.rows()) + " rows, V has " +
                                    std::to_string(v.rows()));
  Matrix<T> logits = q * k.transpose();
  logits /= std::sqrt(static_cast<T>(d_k));
  AttentionResult<T> out;
  out.weights = softmax_rows(logits);
  out.output = out.weights * v;
  return out;
}

using StructureMask = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ThresholdRule {
  double tau = 0.5;
};

struct TopKRule {
  Eigen::Index k = 1;
};

using BinarizationRule = std::variant<ThresholdRule, TopKRule>;

// ceil(T / 4)
inline TopKRule default_rule(Eigen::Index tokens) { return TopKRule{(tokens + 3) / 4}; }

template <class T>
struct Factorization {
  StructureMask structure;
  Matrix<T> strength;
};

template <class T>
Factorization<T> factorize_attention(const Matrix<T>& a, const BinarizationRule& rule) {
  Factorization<T> out;
  out.strength = a;
  out.structure = StructureMask::Zero(a.rows(), a.cols());
  if (const auto* th = std::get_if<ThresholdRule>(&rule)) {
    require(th->tau > 0.0 && th->tau <= 1.0, "factorize_attention: threshold must lie in (0, 1]");
    for (Eigen::Index i = 0; i < a.rows(); ++i)
      for (Eigen::Index j = 0; j < a.cols(); ++j)
        out.structure(i, j) = static_cast<double>(a(i, j)) >= th->tau ? 1 : 0;
    return out;
  }
  const Eigen::Index k = std::get<TopKRule>(rule).k;
  require(k >= 1 && k <= a.cols(), "factorize_attention: top-k needs k in [1, " +
                                       std::to_string(a.cols()) + "], got " + std::to_string(k));
  std::vector<Eigen::Index> order(static_cast<std::size_t>(a.cols()));
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    // Larger strength first; equal strengths keep the lower column index.
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index x, Eigen::Index y) { return a(i, x) > a(i, y); });
    for (Eigen::Index r = 0; r < k; ++r) out.structure(i, order[static_cast<std::size_t>(r)]) = 1;
  }
  return out;
}

// (structure ⊙ strength) * V
template <class T>
Matrix<T> structured_output(const StructureMask& structure, const Matrix<T>& strength, const Matrix<T>& v) {
  require(structure.rows() == strength.rows() && structure.cols() == strength.cols(),
          "structured_output: structure and strength shapes differ");
  require(strength.cols() == v.rows(), "structured_output: strength columns must match V rows");
  const Matrix<T> gated = strength.cwiseProduct(structure.template cast<T>());
  return gated * v;
}

}  // namespace ivit::interaction
