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

// Evaluation: accuracy, cosine agreement of class-token rows with teacher and
// human maps, layer-wise gate trends, and PGM heatmaps.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ivit/error.hpp"
#include "ivit/model/ivit.hpp"
#include "ivit/teacher/teacher_map.hpp"
#include "ivit/train/loss.hpp"
#include "ivit/train/synthetic.hpp"
#include "ivit/train/trainer.hpp"

namespace ivit::eval {

template <class T>
double cosine(const std::vector<T>& a, const std::vector<T>& b) {
  require(a.size() == b.size(), "cosine: lengths " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
  long double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<long double>(a[i]) * b[i];
    na += static_cast<long double>(a[i]) * a[i];
    nb += static_cast<long double>(b[i]) * b[i];
  }
  require(na > 0 && nb > 0, "cosine: zero vector");
  const double c = static_cast<double>(dot / (std::sqrt(na) * std::sqrt(nb)));
  return std::clamp(c, -1.0, 1.0);
}

struct HumanAnnotation {
  teacher::GridShape grid;
  std::vector<double> confidence;
};

inline HumanAnnotation parse_annotation(const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  auto fail = [&](const std::string& why) { throw FormatError(source + ":" + std::to_string(line_no) + ": " + why); };
  HumanAnnotation ann;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") != std::string::npos) break;
  }
  {
    std::istringstream head(line);
    std::string extra;
    if (!(head >> ann.grid.height >> ann.grid.width) || (head >> extra)) fail("expected 'height width'");
    if (ann.grid.height <= 0 || ann.grid.width <= 0) fail("grid sides must be positive");
  }
  for (int r = 0; r < ann.grid.height; ++r) {
    ++line_no;
    if (!std::getline(in, line)) fail("missing row " + std::to_string(r + 1));
    std::istringstream row(line);
    std::string tok;
    int cols = 0;
    while (row >> tok) {
      double v = 0;
      if (tok == "0" || tok == "0.0") v = 0;
      else if (tok == "0.5") v = 0.5;
      else if (tok == "1" || tok == "1.0") v = 1.0;
      else fail("confidence '" + tok + "' is not one of 0, 0.5, 1.0");
      ann.confidence.push_back(v);
      ++cols;
    }
    if (cols != ann.grid.width) fail("row has " + std::to_string(cols) + " values, expected " + std::to_string(ann.grid.width));
  }
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") != std::string::npos) fail("unexpected trailing content");
  }
  bool any = false;
  for (double v : ann.confidence) any = any || v > 0;
  if (!any) fail("annotation has no non-zero entry");
  return ann;
}

inline HumanAnnotation read_annotation(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open annotation file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_annotation(ss.str(), path);
}

inline teacher::TeacherMap human_map(const HumanAnnotation& ann) {
  require(ann.confidence.size() == ann.grid.size(), "human_map: annotation size does not match its grid");
  double total = 0;
  for (double v : ann.confidence) {
    require(v == 0.0 || v == 0.5 || v == 1.0, "human_map: confidence outside {0, 0.5, 1.0}");
    total += v;
  }
  require(total > 0, "human_map: all-zero annotation");
  teacher::TeacherMap m;
  m.grid = ann.grid;
  m.provenance = teacher::Provenance::human;
  for (double v : ann.confidence) m.values.push_back(static_cast<float>(v / total));
  return m;
}

struct GateTrend {
  std::vector<double> g1, g2;  // per layer
};

// Mean over heads, rows and samples; needs the interaction pathway.
template <class T>
GateTrend gate_trend(const Model<T>& model, const std::vector<Matrix<T>>& inputs, const ForwardOptions& options) {
  require(!inputs.empty(), "gate_trend: empty dataset");
  require(options.interaction, "gate_trend: the interaction pathway is disabled");
  const auto layers = static_cast<std::size_t>(model.config.layers);
  GateTrend out{std::vector<double>(layers, 0.0), std::vector<double>(layers, 0.0)};
  for (const Matrix<T>& x : inputs) {
    const ForwardResult<T> r = forward(x, model, options);
    for (std::size_t l = 0; l < layers; ++l) {
      out.g1[l] += static_cast<double>(r.trace.layers[l].g1.mean());
      out.g2[l] += static_cast<double>(r.trace.layers[l].g2.mean());
    }
  }
  for (std::size_t l = 0; l < layers; ++l) {
    out.g1[l] /= static_cast<double>(inputs.size());
    out.g2[l] /= static_cast<double>(inputs.size());
  }
  return out;
}

inline std::string format_trend(const GateTrend& t) {
  std::string s;
  char buf[96];
  for (std::size_t l = 0; l < t.g1.size(); ++l) {
    std::snprintf(buf, sizeof buf, "layer=%zu g1=%.6f g2=%.6f\n", l, t.g1[l], t.g2[l]);
    s += buf;
  }
  return s;
}

enum class HeatmapScale { per_map, global };

inline HeatmapScale parse_heatmap_scale(const std::string& s) {
  if (s == "per-map") return HeatmapScale::per_map;
  if (s == "global") return HeatmapScale::global;
  throw ValidationError("unknown scale '" + s + "' (expected per-map or global)");
}

// Plain P2 graymap, one factor x factor cell per patch. Per-map scaling
// divides by the map maximum, global scaling by 1.
inline std::string heatmap(const std::vector<float>& values, teacher::GridShape grid, HeatmapScale scale,
                           int factor = 8) {
  require(grid.height > 0 && grid.width > 0 && values.size() == grid.size(),
          "heatmap: " + std::to_string(values.size()) + " values for a " + std::to_string(grid.height) + "x" +
              std::to_string(grid.width) + " grid");
  require(factor >= 1, "heatmap: upsampling factor must be >= 1");
  double denom = 1.0;
  if (scale == HeatmapScale::per_map) {
    denom = 0;
    for (float v : values) denom = std::max(denom, static_cast<double>(v));
    if (denom <= 0) denom = 1.0;
  }
  std::vector<int> level(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double x = std::clamp(static_cast<double>(values[i]) / denom, 0.0, 1.0) * 255.0;
    level[i] = static_cast<int>(std::floor(x + 0.5));
  }
  std::string out = "P2\n" + std::to_string(grid.width * factor) + " " + std::to_string(grid.height * factor) + "\n255\n";
  for (int y = 0; y < grid.height * factor; ++y) {
    for (int x = 0; x < grid.width * factor; ++x) {
      if (x > 0) out += ' ';
      out += std::to_string(level[static_cast<std::size_t>(y / factor * grid.width + x / factor)]);
    }
    out += '\n';
  }
  return out;
}

struct EvalReport {
  std::size_t samples = 0;
  double accuracy = 0;
  std::optional<double> cos_agt;  // absent without the interaction pathway
  double cos_vfm = 0;
  std::optional<double> human_agt, human_vfm, human_teacher;
};

inline std::string format_report(const EvalReport& r) {
  char buf[96];
  std::string s = "# cosine: per-image mean over layers, then mean over images\n";
  std::snprintf(buf, sizeof buf, "samples=%zu accuracy=%.6f", r.samples, r.accuracy);
  s += buf;
  auto field = [&](const char* name, const std::optional<double>& v) {
    if (v) std::snprintf(buf, sizeof buf, " %s=%.6f", name, *v);
    else std::snprintf(buf, sizeof buf, " %s=-", name);
    s += buf;
  };
  field("cos_agt_teacher", r.cos_agt);
  field("cos_vfm_teacher", r.cos_vfm);
  field("cos_agt_human", r.human_agt);
  field("cos_vfm_human", r.human_vfm);
  field("cos_teacher_human", r.human_teacher);
  return s + "\n";
}

// Cosine of a map against each layer's class row, averaged over layers.
template <class T>
double layer_mean_cosine(const InteractionTrace<T>& trace, train::Pathway pathway, const std::vector<double>& target) {
  double total = 0;
  for (const LayerTrace<T>& layer : trace.layers) {
    const std::vector<T> row = train::class_row(train::pathway_heads(layer, pathway));
    total += cosine(std::vector<double>(row.begin(), row.end()), target);
  }
  return total / static_cast<double>(trace.layers.size());
}

// `teachers` and optional `humans` are indexed like `inputs`.
template <class T>
EvalReport evaluate(const Model<T>& model, const std::vector<Matrix<T>>& inputs, const std::vector<int>& labels,
                    const std::vector<teacher::TeacherMap>& teachers, const ForwardOptions& options,
                    const std::vector<teacher::TeacherMap>* humans = nullptr) {
  require(!inputs.empty(), "evaluate: empty dataset");
  require(labels.size() == inputs.size() && teachers.size() == inputs.size(),
          "evaluate: " + std::to_string(inputs.size()) + " inputs, " + std::to_string(labels.size()) + " labels, " +
              std::to_string(teachers.size()) + " teacher maps");
  require(humans == nullptr || humans->size() == inputs.size(),
          "evaluate: human map count " + std::to_string(humans ? humans->size() : 0) + " differs from inputs");
  EvalReport rep;
  rep.samples = inputs.size();
  std::size_t correct = 0;
  double agt = 0, vfm = 0, h_agt = 0, h_vfm = 0, h_teacher = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const ForwardResult<T> r = forward(inputs[i], model, options);
    correct += train::argmax(r.logits) == labels[i] ? 1 : 0;
    const std::vector<double> t = teachers[i].as<double>();
    require(t.size() + 1 == static_cast<std::size_t>(model.config.tokens()),
            "evaluate: teacher " + std::to_string(i) + " has " + std::to_string(t.size()) + " patches");
    vfm += layer_mean_cosine(r.trace, train::Pathway::original, t);
    if (options.interaction) agt += layer_mean_cosine(r.trace, train::Pathway::interaction, t);
    if (humans) {
      const std::vector<double> h = (*humans)[i].as<double>();
      require(h.size() == t.size(), "evaluate: human map " + std::to_string(i) + " has the wrong size");
      h_vfm += layer_mean_cosine(r.trace, train::Pathway::original, h);
      if (options.interaction) h_agt += layer_mean_cosine(r.trace, train::Pathway::interaction, h);
      h_teacher += cosine(t, h);
    }
  }
  const auto n = static_cast<double>(inputs.size());
  rep.accuracy = static_cast<double>(correct) / n;
  rep.cos_vfm = vfm / n;
  if (options.interaction) rep.cos_agt = agt / n;
  if (humans) {
    rep.human_vfm = h_vfm / n;
    if (options.interaction) rep.human_agt = h_agt / n;
    rep.human_teacher = h_teacher / n;
  }
  return rep;
}

// Held-out (or training) split of a synthetic dataset.
template <class T>
EvalReport evaluate(const Model<T>& model, const train::Dataset& data, bool train_split, const ForwardOptions& options) {
  std::vector<Matrix<T>> inputs;
  std::vector<int> labels;
  std::vector<teacher::TeacherMap> teachers;
  for (std::size_t i : data.indices(train_split)) {
    inputs.push_back(extract_patches<T>(data.samples[i].image, model.config));
    labels.push_back(data.samples[i].label);
    teachers.push_back(data.samples[i].teacher);
  }
  return evaluate(model, inputs, labels, teachers, options);
}

}  // namespace ivit::eval
