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

// Named parameter tensors of the interaction ViT and their initialization.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

#include "ivit/error.hpp"
#include "ivit/model/config.hpp"
#include "ivit/numerics/grad_check.hpp"
#include "ivit/numerics/matrix.hpp"

namespace ivit {

// Which training stage produced a parameter set. The interaction pathway is
// re-initialized from the original queries when fine-tuning starts from a
// parameter set that has not been through it yet.
enum class Stage : std::uint32_t { fresh = 0, pretrain = 1, finetune = 2 };

template <class T>
struct Model {
  ModelConfig config;
  ParameterMap<T> params;
  Stage stage = Stage::fresh;

  const Matrix<T>& at(const std::string& name) const {
    auto it = params.find(name);
    if (it == params.end()) throw ValidationError("model has no parameter '" + name + "'");
    return it->second;
  }
  Matrix<T>& at(const std::string& name) {
    auto it = params.find(name);
    if (it == params.end()) throw ValidationError("model has no parameter '" + name + "'");
    return it->second;
  }
};

inline std::string layer_key(int layer, const char* suffix) {
  return "layer" + std::to_string(layer) + "." + suffix;
}

namespace detail {

template <class T>
Matrix<T> normal_matrix(Eigen::Index rows, Eigen::Index cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix<T> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(dist(rng));
  return m;
}

}  // namespace detail

// W_iq <- W_q + N(0, 1e-3) per layer; gate output layer reset so both gates
// start near 0.5.
template <class T>
void init_interaction_pathway(Model<T>& model, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  const ModelConfig& c = model.config;
  for (int l = 0; l < c.layers; ++l) {
    model.at(layer_key(l, "attn.w_iq")) =
        model.at(layer_key(l, "attn.w_q")) + detail::normal_matrix<T>(c.embed_dim, c.embed_dim, 1e-3, rng);
    model.at(layer_key(l, "gate.w2")) = detail::normal_matrix<T>(c.gcn_hidden, 2, 0.02, rng);
    model.at(layer_key(l, "gate.b2")) = Matrix<T>::Zero(1, 2);
  }
}

template <class T>
Model<T> init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Model<T> m;
  m.config = config;
  std::mt19937_64 rng(seed);
  const int d = config.embed_dim;
  const int tokens = config.tokens();
  auto lecun = [&](int fan_in, int fan_out) {
    return detail::normal_matrix<T>(fan_in, fan_out, 1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
  };
  auto ones = [](int n) { return Matrix<T>::Ones(1, n).eval(); };
  auto zeros = [](int r, int c) { return Matrix<T>::Zero(r, c).eval(); };

  m.params["embed.w"] = lecun(config.patch_features(), d);
  m.params["embed.b"] = zeros(1, d);
  m.params["embed.cls"] = detail::normal_matrix<T>(1, d, 0.02, rng);
  m.params["embed.pos"] = detail::normal_matrix<T>(tokens, d, 0.02, rng);
  for (int l = 0; l < config.layers; ++l) {
    m.params[layer_key(l, "ln1.g")] = ones(d);
    m.params[layer_key(l, "ln1.b")] = zeros(1, d);
    m.params[layer_key(l, "attn.w_q")] = lecun(d, d);
    m.params[layer_key(l, "attn.w_k")] = lecun(d, d);
    m.params[layer_key(l, "attn.w_v")] = lecun(d, d);
    m.params[layer_key(l, "attn.w_iq")] = zeros(d, d);
    m.params[layer_key(l, "attn.w_o")] = lecun(d, d);
    m.params[layer_key(l, "attn.b_o")] = zeros(1, d);
    m.params[layer_key(l, "gate.w1")] = lecun(2 * tokens, config.gcn_hidden);
    m.params[layer_key(l, "gate.b1")] = zeros(1, config.gcn_hidden);
    m.params[layer_key(l, "gate.w2")] = zeros(config.gcn_hidden, 2);
    m.params[layer_key(l, "gate.b2")] = zeros(1, 2);
    m.params[layer_key(l, "ln2.g")] = ones(d);
    m.params[layer_key(l, "ln2.b")] = zeros(1, d);
    m.params[layer_key(l, "mlp.w1")] = lecun(d, config.mlp_hidden);
    m.params[layer_key(l, "mlp.b1")] = zeros(1, config.mlp_hidden);
    m.params[layer_key(l, "mlp.w2")] = lecun(config.mlp_hidden, d);
    m.params[layer_key(l, "mlp.b2")] = zeros(1, d);
  }
  m.params["norm.g"] = ones(d);
  m.params["norm.b"] = zeros(1, d);
  m.params["head.w"] = detail::normal_matrix<T>(d, config.classes, 0.02, rng);
  m.params["head.b"] = zeros(1, config.classes);
  init_interaction_pathway(m, seed + 1);
  return m;
}

template <class To, class From>
Model<To> cast_model(const Model<From>& m) {
  Model<To> out;
  out.config = m.config;
  out.stage = m.stage;
  for (const auto& [name, value] : m.params) out.params[name] = value.template cast<To>();
  return out;
}

}  // namespace ivit
