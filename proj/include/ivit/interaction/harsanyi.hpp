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

// Exact AND-interaction (Harsanyi dividend) decomposition of a set function
// over n <= 16 input variables. Subsets are bitmasks: variable i (1-based)
// is bit i - 1.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ivit/error.hpp"

namespace ivit::interaction {

using Subset = std::uint32_t;

inline constexpr int kMaxVariables = 16;

// v(S): value of the model when only the variables in S keep their input
// values. Must be deterministic.
using MaskedOracle = std::function<double(Subset)>;

struct HarsanyiTable {
  int n = 0;
  std::vector<double> effects;  // indexed by subset bitmask, 2^n entries

  double at(Subset s) const { return effects.at(s); }
};

// Wraps a model f(x) into an oracle where variables outside S are replaced by
// `baseline` (zero vector when empty).
inline MaskedOracle masked_oracle(std::function<double(std::span<const double>)> model,
                                  std::vector<double> input, std::vector<double> baseline = {}) {
  if (baseline.empty()) baseline.assign(input.size(), 0.0);
  require(baseline.size() == input.size(), "masked_oracle: baseline length differs from input");
  require(input.size() <= static_cast<std::size_t>(kMaxVariables), "masked_oracle: at most 16 variables");
  return [model = std::move(model), input = std::move(input), baseline = std::move(baseline)](Subset s) {
    std::vector<double> x(input.size());
    for (std::size_t i = 0; i < input.size(); ++i) x[i] = (s >> i) & 1U ? input[i] : baseline[i];
    return model(x);
  };
}

// effects[S] = sum over T ⊆ S of (-1)^{|S|-|T|} v(T), via the subset-sum
// Möbius transform over all 2^n oracle values.
inline HarsanyiTable harsanyi_and(const MaskedOracle& oracle, int n) {
  require(n >= 0 && n <= kMaxVariables,
          "harsanyi_and: n must lie in [0, 16], got " + std::to_string(n));
  const Subset full = n == 0 ? 0 : ((Subset{1} << n) - 1);
  HarsanyiTable table;
  table.n = n;
  table.effects.resize(std::size_t{1} << n);
  for (Subset s = 0;; ++s) {
    const double v = oracle(s);
    if (!std::isfinite(v)) {
      throw ValidationError("harsanyi_and: oracle returned a non-finite value for subset " + std::to_string(s));
    }
    table.effects[s] = v;
    if (s == full) break;
  }
  for (int bit = 0; bit < n; ++bit) {
    const Subset b = Subset{1} << bit;
    for (Subset s = 0; s <= full; ++s) {
      if (s & b) table.effects[s] -= table.effects[s ^ b];
      if (s == full) break;
    }
  }
  return table;
}

// Sum of effects over all subsets of S; equals v(S).
inline double reconstruct_value(const HarsanyiTable& table, Subset s) {
  require(table.effects.size() == (std::size_t{1} << table.n), "reconstruct_value: incomplete table");
  if (table.n < 32 && (s >> table.n) != 0) {
    throw ValidationError("reconstruct_value: subset " + std::to_string(s) + " uses variables beyond n = " +
                          std::to_string(table.n));
  }
  double total = table.effects[0];
  // Enumerate non-empty submasks of s.
  for (Subset t = s; t != 0; t = (t - 1) & s) total += table.effects[t];
  return total;
}

inline std::vector<int> members(Subset s) {
  std::vector<int> out;
  for (int i = 0; i < 32; ++i)
    if ((s >> i) & 1U) out.push_back(i + 1);
  return out;
}

struct RankedEffect {
  Subset subset = 0;
  double effect = 0;
};

// The k subsets of largest |effect|. Ties: fewer members first, then
// lexicographic order of the sorted member lists.
inline std::vector<RankedEffect> sparsify(const HarsanyiTable& table, std::size_t k) {
  require(k >= 1, "sparsify: k must be at least 1");
  std::vector<RankedEffect> all;
  all.reserve(table.effects.size());
  for (std::size_t s = 0; s < table.effects.size(); ++s) {
    all.push_back({static_cast<Subset>(s), table.effects[s]});
  }
  auto before = [](const RankedEffect& a, const RankedEffect& b) {
    const double ma = std::abs(a.effect), mb = std::abs(b.effect);
    if (ma != mb) return ma > mb;
    const int pa = std::popcount(a.subset), pb = std::popcount(b.subset);
    if (pa != pb) return pa < pb;
    return members(a.subset) < members(b.subset);
  };
  k = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(), before);
  all.resize(k);
  return all;
}

}  // namespace ivit::interaction
