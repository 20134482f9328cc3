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

// Dual objective: task cross-entropy plus the KL alignment of the supervised
// pathway's class-token row to the teacher map.

#include <string>
#include <vector>

#include "ivit/error.hpp"
#include "ivit/model/ivit.hpp"
#include "ivit/numerics/autodiff.hpp"
#include "ivit/numerics/matrix.hpp"

namespace ivit::train {

// Which attention tensor the alignment term supervises.
enum class Pathway { interaction, original };

struct LossBreakdown {
  double task = 0;
  double alignment = 0;
  double total = 0;
};

// Head-averaged class-token row with the class column dropped, renormalized
// to sum 1 (denominator floored at 1e-12). Shared by the loss and evaluation.
template <class T>
std::vector<T> class_row(const std::vector<Matrix<T>>& heads) {
  require(!heads.empty(), "class_row: no attention heads");
  const Eigen::Index tokens = heads.front().cols();
  require(tokens >= 2, "class_row: need at least one patch token");
  Matrix<T> row = Matrix<T>::Zero(1, tokens);
  for (const Matrix<T>& h : heads) {
    require(h.cols() == tokens && h.rows() >= 1, "class_row: head shapes differ");
    row += h.row(0);
  }
  row /= static_cast<T>(heads.size());
  std::vector<T> out(static_cast<std::size_t>(tokens - 1));
  T total = 0;
  for (Eigen::Index j = 1; j < tokens; ++j) total += row(0, j);
  const T denom = std::max(total, static_cast<T>(kNormFloor));
  for (Eigen::Index j = 1; j < tokens; ++j) out[static_cast<std::size_t>(j - 1)] = row(0, j) / denom;
  return out;
}

template <class T>
ad::Var<T> class_row(const std::vector<ad::Var<T>>& heads) {
  require(!heads.empty(), "class_row: no attention heads");
  std::vector<ad::Var<T>> rows;
  rows.reserve(heads.size());
  for (const auto& h : heads) rows.push_back(ad::slice_rows(h, 0, 1));
  const ad::Var<T> mean = ad::mean_of(rows);
  return ad::normalize_l1(ad::slice_cols(mean, 1, mean.cols() - 1));
}

template <class T>
const std::vector<Matrix<T>>& pathway_heads(const LayerTrace<T>& layer, Pathway pathway) {
  const auto& heads = pathway == Pathway::interaction ? layer.agt : layer.vfm;
  require(!heads.empty(), "alignment: trace has no interaction-query attention (pathway disabled)");
  return heads;
}

// Mean over layers of KL(class row || smoothed teacher).
template <class T>
T alignment_loss(const InteractionTrace<T>& trace, const std::vector<T>& teacher, T smoothing,
                 Pathway pathway = Pathway::interaction) {
  require(!trace.layers.empty(), "alignment_loss: empty trace");
  T total = 0;
  for (const LayerTrace<T>& layer : trace.layers) {
    const std::vector<T> row = class_row(pathway_heads(layer, pathway));
    require(row.size() == teacher.size(), "alignment_loss: teacher has " + std::to_string(teacher.size()) +
                                              " patches, model has " + std::to_string(row.size()));
    const T uniform = T(1) / static_cast<T>(row.size());
    T kl = 0;
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (row[j] <= T(0)) continue;
      kl += row[j] * std::log(row[j] / ((T(1) - smoothing) * teacher[j] + smoothing * uniform));
    }
    total += kl;
  }
  return total / static_cast<T>(trace.layers.size());
}

template <class T>
ad::Var<T> alignment_loss(const std::vector<LayerVars<T>>& layers, const std::vector<T>& teacher, T smoothing,
                          Pathway pathway = Pathway::interaction) {
  require(!layers.empty(), "alignment_loss: empty trace");
  std::vector<ad::Var<T>> per_layer;
  for (const LayerVars<T>& layer : layers) {
    const auto& heads = pathway == Pathway::interaction ? layer.agt : layer.vfm;
    require(!heads.empty(), "alignment: trace has no interaction-query attention (pathway disabled)");
    const ad::Var<T> row = class_row(heads);
    require(static_cast<std::size_t>(row.cols()) == teacher.size(),
            "alignment_loss: teacher has " + std::to_string(teacher.size()) + " patches, model has " +
                std::to_string(row.cols()));
    per_layer.push_back(ad::kl_div(row, teacher, smoothing));
  }
  return ad::mean_of(per_layer);
}

template <class T>
struct TotalLoss {
  ad::Var<T> total;
  LossBreakdown breakdown;
};

// task + alignment with no weighting coefficient. `alignment` is null when
// the constraint is switched off.
template <class T>
TotalLoss<T> total_loss(const ad::Var<T>& logits, int label, const ad::Var<T>* alignment) {
  const ad::Var<T> task = ad::cross_entropy(logits, label);
  TotalLoss<T> out;
  out.breakdown.task = static_cast<double>(task.scalar());
  if (alignment == nullptr) {
    out.total = task;
    out.breakdown.alignment = 0;
    out.breakdown.total = out.breakdown.task;
    return out;
  }
  out.total = ad::add(task, *alignment);
  out.breakdown.alignment = static_cast<double>(alignment->scalar());
  out.breakdown.total = out.breakdown.task + out.breakdown.alignment;
  return out;
}

}  // namespace ivit::train
