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

#include <string>

#include "ivit/error.hpp"

namespace ivit {

enum class GateMode { sigmoid, convex };

inline std::string to_string(GateMode m) { return m == GateMode::sigmoid ? "sigmoid" : "convex"; }

inline GateMode parse_gate_mode(const std::string& s) {
  if (s == "sigmoid") return GateMode::sigmoid;
  if (s == "convex") return GateMode::convex;
  throw ValidationError("unknown gate mode '" + s + "' (expected sigmoid or convex)");
}

struct ModelConfig {
  int image_size = 32;
  int patch_size = 4;
  int channels = 1;
  int embed_dim = 64;
  int heads = 4;
  int layers = 6;
  int classes = 10;
  GateMode gate_mode = GateMode::sigmoid;
  int gcn_hidden = 16;
  int mlp_hidden = 128;

  int grid() const { return image_size / patch_size; }
  int num_patches() const { return grid() * grid(); }
  // Patch tokens plus the class token at index 0.
  int tokens() const { return num_patches() + 1; }
  int head_dim() const { return embed_dim / heads; }
  int patch_features() const { return patch_size * patch_size * channels; }

  void validate() const {
    require(image_size > 0 && patch_size > 0 && channels > 0, "model: sizes must be positive");
    require(image_size % patch_size == 0, "model.image_size (" + std::to_string(image_size) +
                                              ") must be divisible by model.patch_size (" +
                                              std::to_string(patch_size) + ")");
    require(embed_dim > 0 && heads > 0, "model: embed_dim and heads must be positive");
    require(embed_dim % heads == 0, "model.embed_dim (" + std::to_string(embed_dim) +
                                        ") must be divisible by model.heads (" + std::to_string(heads) + ")");
    require(layers >= 1, "model.layers must be at least 1");
    require(classes >= 1, "model.classes must be at least 1");
    require(gcn_hidden >= 1, "model.gcn_hidden must be at least 1");
    require(mlp_hidden >= 1, "model.mlp_hidden must be at least 1");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

}  // namespace ivit
