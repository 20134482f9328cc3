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

// Interaction ViT forward pass recorded on an autodiff tape.
//
// Each pre-norm block computes two attention-strength tensors from shared
// keys: C_VFM from the original queries and C_AGT from the interaction
// queries. A per-row gate map fuses them into C_F, and C_F * P_v replaces the
// block's attention output. With the interaction pathway disabled the block
// is a standard ViT block (C_F = C_VFM).

#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ivit/error.hpp"
#include "ivit/model/config.hpp"
#include "ivit/model/freeze.hpp"
#include "ivit/model/params.hpp"
#include "ivit/numerics/autodiff.hpp"
#include "ivit/numerics/matrix.hpp"

namespace ivit {

// H x W x C pixels, index (y * W + x) * C + c.
template <class T>
struct Image {
  int height = 0;
  int width = 0;
  int channels = 1;
  std::vector<T> pixels;

  T at(int y, int x, int c = 0) const { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
};

// N x (p*p*C) matrix; patch k = gy * grid + gx, flattened in (y, x, c) order.
template <class T, class P>
Matrix<T> extract_patches(const Image<P>& image, const ModelConfig& cfg) {
  if (image.height != cfg.image_size || image.width != cfg.image_size || image.channels != cfg.channels) {
    throw ValidationError("patch_embed: image is " + std::to_string(image.height) + "x" +
                          std::to_string(image.width) + "x" + std::to_string(image.channels) +
                          ", model expects " + std::to_string(cfg.image_size) + "x" +
                          std::to_string(cfg.image_size) + "x" + std::to_string(cfg.channels));
  }
  require(image.pixels.size() == static_cast<std::size_t>(image.height) * image.width * image.channels,
          "patch_embed: pixel buffer size does not match image dimensions");
  const int g = cfg.grid(), p = cfg.patch_size;
  Matrix<T> out(cfg.num_patches(), cfg.patch_features());
  for (int gy = 0; gy < g; ++gy)
    for (int gx = 0; gx < g; ++gx) {
      Eigen::Index col = 0;
      for (int y = 0; y < p; ++y)
        for (int x = 0; x < p; ++x)
          for (int c = 0; c < image.channels; ++c)
            out(gy * g + gx, col++) = static_cast<T>(image.at(gy * p + y, gx * p + x, c));
    }
  return out;
}

struct ForwardOptions {
  bool interaction = true;  // interaction-query pathway present
  // Gates fixed to (g1, g2) instead of computed by the gate map.
  std::optional<std::pair<double, double>> fixed_gates;
};

template <class T>
using TokenSequence = Matrix<T>;

// Parameters of one forward pass, registered on a tape.
template <class T>
struct BoundParams {
  std::map<std::string, ad::Var<T>> vars;

  const ad::Var<T>& operator()(const std::string& name) const {
    auto it = vars.find(name);
    if (it == vars.end()) throw ValidationError("forward: missing parameter '" + name + "'");
    return it->second;
  }
};

template <class T>
BoundParams<T> bind(ad::Tape<T>& tape, const Model<T>& model, const TrainableMask* trainable) {
  BoundParams<T> b;
  for (const auto& [name, value] : model.params) {
    bool train = false;
    if (trainable != nullptr) {
      auto it = trainable->find(name);
      train = it != trainable->end() && it->second;
    }
    b.vars.emplace(name, tape.parameter(name, value, train));
  }
  return b;
}

template <class T>
ad::Var<T> patch_embed(ad::Tape<T>& tape, const Matrix<T>& patches, const BoundParams<T>& p) {
  const ad::Var<T> x = tape.constant(patches);
  const ad::Var<T> tokens = ad::affine(x, p("embed.w"), p("embed.b"));
  return ad::add(ad::concat_rows<T>({p("embed.cls"), tokens}), p("embed.pos"));
}

template <class T>
struct DualAttention {
  std::vector<ad::Var<T>> vfm;     // per head, T x T
  std::vector<ad::Var<T>> agt;     // per head, empty when the pathway is off
  std::vector<ad::Var<T>> values;  // per head P_v slice, T x head_dim
};

// Both query projections attend over the same keys; values are shared.
template <class T>
DualAttention<T> dual_attention(const ad::Var<T>& normed, const BoundParams<T>& p, int layer,
                                const ModelConfig& cfg, bool interaction) {
  require(normed.cols() == cfg.embed_dim, "dual_attention: tokens have " + std::to_string(normed.cols()) +
                                              " features, model expects " + std::to_string(cfg.embed_dim));
  const ad::Var<T> pq = ad::matmul(normed, p(layer_key(layer, "attn.w_q")));
  const ad::Var<T> pk = ad::matmul(normed, p(layer_key(layer, "attn.w_k")));
  const ad::Var<T> pv = ad::matmul(normed, p(layer_key(layer, "attn.w_v")));
  std::optional<ad::Var<T>> piq;
  if (interaction) piq = ad::matmul(normed, p(layer_key(layer, "attn.w_iq")));
  const int dh = cfg.head_dim();
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));
  DualAttention<T> out;
  for (int h = 0; h < cfg.heads; ++h) {
    const ad::Var<T> kh = ad::slice_cols(pk, h * dh, dh);
    out.values.push_back(ad::slice_cols(pv, h * dh, dh));
    out.vfm.push_back(ad::softmax_rows(ad::scale(ad::matmul_nt(ad::slice_cols(pq, h * dh, dh), kh), inv_sqrt)));
    if (piq) {
      out.agt.push_back(ad::softmax_rows(ad::scale(ad::matmul_nt(ad::slice_cols(*piq, h * dh, dh), kh), inv_sqrt)));
    }
  }
  return out;
}

template <class T>
struct Fusion {
  ad::Var<T> fused;
  ad::Var<T> g1;  // T x 1, weight on C_AGT
  ad::Var<T> g2;  // T x 1, weight on C_VFM
};

// C_F row i = g1_i * C_AGT row i + g2_i * C_VFM row i, with (g1, g2) from a
// two-layer map over the concatenated rows [C_AGT ; C_VFM].
template <class T>
Fusion<T> gated_fusion(const ad::Var<T>& agt, const ad::Var<T>& vfm, const BoundParams<T>& p, int layer,
                       GateMode mode, const std::optional<std::pair<double, double>>& fixed_gates) {
  require(agt.rows() == vfm.rows() && agt.cols() == vfm.cols(), "gated_fusion: C_AGT and C_VFM shapes differ");
  ad::Tape<T>& tape = *agt.tape;
  Fusion<T> out;
  if (fixed_gates) {
    out.g1 = tape.constant(Matrix<T>::Constant(agt.rows(), 1, static_cast<T>(fixed_gates->first)));
    out.g2 = tape.constant(Matrix<T>::Constant(agt.rows(), 1, static_cast<T>(fixed_gates->second)));
  } else {
    const ad::Var<T> joint = ad::concat_cols<T>({agt, vfm});
    const ad::Var<T> hidden = ad::gelu(ad::affine(joint, p(layer_key(layer, "gate.w1")), p(layer_key(layer, "gate.b1"))));
    const ad::Var<T> logits = ad::affine(hidden, p(layer_key(layer, "gate.w2")), p(layer_key(layer, "gate.b2")));
    const ad::Var<T> gates = mode == GateMode::sigmoid ? ad::sigmoid(logits) : ad::softmax_rows(logits);
    out.g1 = ad::slice_cols(gates, 0, 1);
    out.g2 = ad::slice_cols(gates, 1, 1);
  }
  out.fused = ad::add(ad::scale_rows(agt, out.g1), ad::scale_rows(vfm, out.g2));
  return out;
}

// Per head C_F * P_v, heads concatenated and output-projected, then the
// residual and pre-norm feed-forward sub-block. Returns the next layer's
// tokens.
template <class T>
ad::Var<T> interaction_tokens(const ad::Var<T>& tokens, const std::vector<ad::Var<T>>& fused,
                              const std::vector<ad::Var<T>>& values, const BoundParams<T>& p, int layer) {
  require(fused.size() == values.size() && !fused.empty(), "interaction_tokens: head count mismatch");
  std::vector<ad::Var<T>> heads;
  heads.reserve(fused.size());
  for (std::size_t h = 0; h < fused.size(); ++h) heads.push_back(ad::matmul(fused[h], values[h]));
  const ad::Var<T> mixed = ad::affine(ad::concat_cols(heads), p(layer_key(layer, "attn.w_o")),
                                      p(layer_key(layer, "attn.b_o")));
  const ad::Var<T> x1 = ad::add(tokens, mixed);
  const ad::Var<T> n2 = ad::layer_norm(x1, p(layer_key(layer, "ln2.g")), p(layer_key(layer, "ln2.b")));
  const ad::Var<T> hidden = ad::gelu(ad::affine(n2, p(layer_key(layer, "mlp.w1")), p(layer_key(layer, "mlp.b1"))));
  return ad::add(x1, ad::affine(hidden, p(layer_key(layer, "mlp.w2")), p(layer_key(layer, "mlp.b2"))));
}

template <class T>
struct LayerVars {
  std::vector<ad::Var<T>> vfm, agt, fused;
  std::vector<ad::Var<T>> g1, g2;  // per head, T x 1; empty without the pathway
};

template <class T>
struct GraphOutputs {
  ad::Var<T> logits;  // 1 x classes
  std::vector<LayerVars<T>> layers;
};

template <class T>
GraphOutputs<T> build_forward(ad::Tape<T>& tape, const Model<T>& model, const BoundParams<T>& p,
                              const Matrix<T>& patches, const ForwardOptions& options) {
  const ModelConfig& cfg = model.config;
  require(patches.rows() == cfg.num_patches() && patches.cols() == cfg.patch_features(),
          "forward: patch matrix has the wrong shape");
  GraphOutputs<T> out;
  ad::Var<T> x = patch_embed(tape, patches, p);
  for (int l = 0; l < cfg.layers; ++l) {
    const ad::Var<T> normed = ad::layer_norm(x, p(layer_key(l, "ln1.g")), p(layer_key(l, "ln1.b")));
    DualAttention<T> dual = dual_attention(normed, p, l, cfg, options.interaction);
    LayerVars<T> lv;
    lv.vfm = dual.vfm;
    lv.agt = dual.agt;
    for (int h = 0; h < cfg.heads; ++h) {
      if (!options.interaction) {
        lv.fused.push_back(dual.vfm[h]);
        continue;
      }
      Fusion<T> f = gated_fusion(dual.agt[h], dual.vfm[h], p, l, cfg.gate_mode, options.fixed_gates);
      lv.fused.push_back(f.fused);
      lv.g1.push_back(f.g1);
      lv.g2.push_back(f.g2);
    }
    x = interaction_tokens(x, lv.fused, dual.values, p, l);
    out.layers.push_back(std::move(lv));
  }
  const ad::Var<T> final_norm = ad::layer_norm(x, p("norm.g"), p("norm.b"));
  out.logits = ad::affine(ad::slice_rows(final_norm, 0, 1), p("head.w"), p("head.b"));
  return out;
}

// Plain-value record of every layer's interaction tensors.
template <class T>
struct LayerTrace {
  std::vector<Matrix<T>> vfm, agt, fused;  // per head, T x T
  Matrix<T> g1, g2;                        // heads x T; empty without the pathway
};

template <class T>
struct InteractionTrace {
  std::vector<LayerTrace<T>> layers;
};

template <class T>
InteractionTrace<T> to_trace(const GraphOutputs<T>& g) {
  InteractionTrace<T> trace;
  for (const LayerVars<T>& lv : g.layers) {
    LayerTrace<T> lt;
    for (const auto& v : lv.vfm) lt.vfm.push_back(v.value());
    for (const auto& v : lv.agt) lt.agt.push_back(v.value());
    for (const auto& v : lv.fused) lt.fused.push_back(v.value());
    if (!lv.g1.empty()) {
      const auto heads = static_cast<Eigen::Index>(lv.g1.size());
      const Eigen::Index tokens = lv.g1.front().rows();
      lt.g1.resize(heads, tokens);
      lt.g2.resize(heads, tokens);
      for (Eigen::Index h = 0; h < heads; ++h) {
        lt.g1.row(h) = lv.g1[h].value().col(0).transpose();
        lt.g2.row(h) = lv.g2[h].value().col(0).transpose();
      }
    }
    trace.layers.push_back(std::move(lt));
  }
  return trace;
}

template <class T>
struct ForwardResult {
  Matrix<T> logits;  // 1 x classes
  InteractionTrace<T> trace;
};

template <class T>
ForwardResult<T> forward(const Matrix<T>& patches, const Model<T>& model, const ForwardOptions& options = {}) {
  ad::Tape<T> tape(false);
  const BoundParams<T> p = bind(tape, model, nullptr);
  const GraphOutputs<T> g = build_forward(tape, model, p, patches, options);
  return {g.logits.value(), to_trace(g)};
}

template <class T, class P>
ForwardResult<T> forward(const Image<P>& image, const Model<T>& model, const ForwardOptions& options = {}) {
  return forward(extract_patches<T>(image, model.config), model, options);
}

}  // namespace ivit
