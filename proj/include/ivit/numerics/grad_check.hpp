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
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "ivit/error.hpp"
#include "ivit/numerics/matrix.hpp"

namespace ivit {

template <class T>
using ParameterMap = std::map<std::string, Matrix<T>>;

struct GradientReport {
  std::string parameter;  // "<tensor>[row,col]"
  double analytic = 0;
  double numeric = 0;
  double relative_error = 0;
};

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-12, std::abs(analytic) + std::abs(numeric));
}

template <class T>
struct ValueAndGradient {
  T value{};
  ParameterMap<T> gradient;
};

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-6;
  // Entries probed per tensor; tensors with at most this many entries are
  // probed exhaustively. 0 probes every entry of every tensor.
  std::size_t max_entries_per_tensor = 0;
  std::uint64_t seed = 0;
  // Restrict the check to these tensors (empty: every tensor with an
  // analytic gradient).
  std::vector<std::string> only;
};

struct GradCheckResult {
  std::vector<GradientReport> reports;  // sorted by relative error, descending
  double max_relative_error = 0;
  bool passed = true;
};

// Central-difference check of an analytic gradient. `f` evaluates the scalar
// objective and its gradient at a parameter point.
template <class T>
GradCheckResult grad_check(const std::function<ValueAndGradient<T>(const ParameterMap<T>&)>& f,
                           ParameterMap<T> theta, const GradCheckOptions& options = {}) {
  if (!(options.step >= 1e-7 && options.step <= 1e-3)) {
    throw ValidationError("grad_check: step must lie in [1e-7, 1e-3]");
  }
  const ValueAndGradient<T> base = f(theta);
  std::mt19937_64 rng(options.seed);
  GradCheckResult result;
  const T eps = static_cast<T>(options.step);

  for (const auto& [name, analytic] : base.gradient) {
    if (!options.only.empty() &&
        std::find(options.only.begin(), options.only.end(), name) == options.only.end()) {
      continue;
    }
    auto it = theta.find(name);
    require(it != theta.end(), "grad_check: gradient names unknown parameter " + name);
    Matrix<T>& tensor = it->second;
    const auto count = static_cast<std::size_t>(tensor.size());
    std::vector<std::size_t> entries(count);
    for (std::size_t i = 0; i < count; ++i) entries[i] = i;
    if (options.max_entries_per_tensor != 0 && count > options.max_entries_per_tensor) {
      std::shuffle(entries.begin(), entries.end(), rng);
      entries.resize(options.max_entries_per_tensor);
      std::sort(entries.begin(), entries.end());
    }
    for (std::size_t flat : entries) {
      const auto r = static_cast<Eigen::Index>(flat / tensor.cols());
      const auto c = static_cast<Eigen::Index>(flat % tensor.cols());
      const T saved = tensor(r, c);
      tensor(r, c) = saved + eps;
      const T up = f(theta).value;
      tensor(r, c) = saved - eps;
      const T down = f(theta).value;
      tensor(r, c) = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw ValidationError("grad_check: objective not finite when probing " + name);
      }
      GradientReport rep;
      rep.parameter = name + "[" + std::to_string(r) + "," + std::to_string(c) + "]";
      rep.analytic = static_cast<double>(analytic(r, c));
      rep.numeric = (static_cast<double>(up) - static_cast<double>(down)) / (2.0 * options.step);
      rep.relative_error = relative_error(rep.analytic, rep.numeric);
      result.reports.push_back(std::move(rep));
    }
  }
  std::stable_sort(result.reports.begin(), result.reports.end(),
                   [](const GradientReport& a, const GradientReport& b) {
                     return a.relative_error > b.relative_error;
                   });
  if (!result.reports.empty()) result.max_relative_error = result.reports.front().relative_error;
  result.passed = result.max_relative_error <= options.tolerance;
  return result;
}

}  // namespace ivit
