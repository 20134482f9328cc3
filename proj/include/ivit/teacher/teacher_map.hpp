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

// Teacher interaction maps: non-negative distributions over image patches
// built from foreground/background strength vectors by clamping the
// difference at zero and L1-normalizing.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "ivit/error.hpp"
#include "ivit/numerics/matrix.hpp"

namespace ivit::teacher {

enum class Provenance : std::uint8_t { synthetic = 0, vlm_probe = 1, human = 2 };
enum class PromptId : std::uint8_t { none = 0, prompt1 = 1, prompt2 = 2, prompt3 = 3, dense = 4 };

inline std::string to_string(Provenance p) {
  switch (p) {
    case Provenance::synthetic: return "synthetic";
    case Provenance::vlm_probe: return "vlm-probe";
    case Provenance::human: return "human";
  }
  return "?";
}

inline std::string to_string(PromptId p) {
  switch (p) {
    case PromptId::none: return "none";
    case PromptId::prompt1: return "1";
    case PromptId::prompt2: return "2";
    case PromptId::prompt3: return "3";
    case PromptId::dense: return "dense";
  }
  return "?";
}

enum class StrengthRole { foreground, background, object_instance };

struct StrengthVector {
  std::vector<double> values;
  StrengthRole role = StrengthRole::foreground;
};

struct GridShape {
  int height = 0;
  int width = 0;
  std::size_t size() const { return static_cast<std::size_t>(height) * static_cast<std::size_t>(width); }
};

// Square grid for n patches; throws when n is not a perfect square.
inline GridShape square_grid(std::size_t n) {
  const auto side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n))));
  require(static_cast<std::size_t>(side) * static_cast<std::size_t>(side) == n && n > 0,
          "cannot infer a square patch grid for " + std::to_string(n) + " patches");
  return {side, side};
}

struct TeacherMap {
  GridShape grid;
  std::vector<float> values;
  Provenance provenance = Provenance::synthetic;
  PromptId prompt = PromptId::none;
  // Set when the clamped difference vanished and the uniform map was used.
  bool degenerate = false;

  std::size_t size() const { return values.size(); }

  template <class T>
  std::vector<T> as() const {
    return std::vector<T>(values.begin(), values.end());
  }
};

inline void check_teacher_invariants(const TeacherMap& m, double tolerance = 1e-4) {
  require(m.grid.height > 0 && m.grid.width > 0, "teacher map: empty grid");
  require(m.values.size() == m.grid.size(), "teacher map: " + std::to_string(m.values.size()) +
                                                " values for a " + std::to_string(m.grid.height) + "x" +
                                                std::to_string(m.grid.width) + " grid");
  double total = 0;
  for (std::size_t i = 0; i < m.values.size(); ++i) {
    require(std::isfinite(m.values[i]) && m.values[i] >= 0.0f,
            "teacher map: entry " + std::to_string(i) + " is negative or non-finite");
    total += m.values[i];
  }
  require(std::abs(total - 1.0) <= tolerance, "teacher map: values sum to " + std::to_string(total));
}

namespace detail {

inline void check_strength(const StrengthVector& s, const char* what) {
  for (std::size_t i = 0; i < s.values.size(); ++i) {
    if (!std::isfinite(s.values[i]) || s.values[i] < 0.0) {
      throw ValidationError(std::string(what) + ": entry " + std::to_string(i) + " is negative or non-finite");
    }
  }
}

// max(0, d) / ||max(0, d)||_1, or uniform when the clamp leaves nothing.
inline TeacherMap filter_and_normalize(const std::vector<double>& diff, GridShape grid) {
  require(diff.size() == grid.size(), "teacher map: " + std::to_string(diff.size()) +
                                          " strengths for a grid of " + std::to_string(grid.size()));
  TeacherMap out;
  out.grid = grid;
  std::vector<double> clamped(diff.size());
  double norm = 0;
  for (std::size_t i = 0; i < diff.size(); ++i) {
    clamped[i] = std::max(0.0, diff[i]);
    norm += clamped[i];
  }
  out.values.resize(diff.size());
  if (norm > kNormFloor) {
    for (std::size_t i = 0; i < diff.size(); ++i) out.values[i] = static_cast<float>(clamped[i] / norm);
  } else {
    out.degenerate = true;
    const auto u = static_cast<float>(1.0 / static_cast<double>(diff.size()));
    for (float& v : out.values) v = u;
  }
  return out;
}

}  // namespace detail

inline TeacherMap classification_teacher(const StrengthVector& fore, const StrengthVector& back, GridShape grid) {
  require(fore.values.size() == back.values.size(),
          "classification_teacher: foreground has " + std::to_string(fore.values.size()) +
              " entries, background " + std::to_string(back.values.size()));
  detail::check_strength(fore, "classification_teacher: foreground");
  detail::check_strength(back, "classification_teacher: background");
  std::vector<double> diff(fore.values.size());
  for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = fore.values[i] - back.values[i];
  return detail::filter_and_normalize(diff, grid);
}

inline TeacherMap classification_teacher(const StrengthVector& fore, const StrengthVector& back) {
  return classification_teacher(fore, back, square_grid(fore.values.size()));
}

// Object strengths are summed over instances before subtracting the
// background.
inline TeacherMap dense_teacher(const std::vector<StrengthVector>& objects, const StrengthVector& back,
                                GridShape grid) {
  require(!objects.empty(), "dense_teacher: at least one object instance is required");
  detail::check_strength(back, "dense_teacher: background");
  std::vector<double> total(back.values.size(), 0.0);
  for (std::size_t k = 0; k < objects.size(); ++k) {
    require(objects[k].values.size() == back.values.size(),
            "dense_teacher: object " + std::to_string(k) + " has " + std::to_string(objects[k].values.size()) +
                " entries, background " + std::to_string(back.values.size()));
    detail::check_strength(objects[k], "dense_teacher: object");
    for (std::size_t i = 0; i < total.size(); ++i) total[i] += objects[k].values[i];
  }
  for (std::size_t i = 0; i < total.size(); ++i) total[i] -= back.values[i];
  TeacherMap out = detail::filter_and_normalize(total, grid);
  out.prompt = PromptId::dense;
  return out;
}

inline TeacherMap dense_teacher(const std::vector<StrengthVector>& objects, const StrengthVector& back) {
  return dense_teacher(objects, back, square_grid(back.values.size()));
}

// Synthetic teacher from a ground-truth patch mask: mask + |N(0, sigma)| per
// patch, renormalized.
inline TeacherMap mask_teacher(const std::vector<std::uint8_t>& mask, double sigma, std::uint64_t seed,
                               GridShape grid) {
  require(mask.size() == grid.size(), "mask_teacher: mask has " + std::to_string(mask.size()) +
                                          " entries for a grid of " + std::to_string(grid.size()));
  require(sigma >= 0.0 && std::isfinite(sigma), "mask_teacher: noise sigma must be >= 0");
  std::size_t set = 0;
  for (std::uint8_t m : mask) set += m != 0 ? 1 : 0;
  require(set > 0, "mask_teacher: mask has no set patch");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<double> raw(mask.size());
  double total = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    raw[i] = (mask[i] != 0 ? 1.0 : 0.0) + (sigma > 0.0 ? std::abs(sigma * noise(rng)) : 0.0);
    total += raw[i];
  }
  TeacherMap out;
  out.grid = grid;
  out.values.resize(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) out.values[i] = static_cast<float>(raw[i] / total);
  return out;
}

inline TeacherMap mask_teacher(const std::vector<std::uint8_t>& mask, double sigma, std::uint64_t seed) {
  return mask_teacher(mask, sigma, seed, square_grid(mask.size()));
}

}  // namespace ivit::teacher
