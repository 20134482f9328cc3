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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <utility>
#include <vector>

#include "ivit/model/checkpoint.hpp"
#include "ivit/model/freeze.hpp"
#include "ivit/model/ivit.hpp"
#include "ivit/train/trainer.hpp"
#include "support.hpp"

namespace ivit {
namespace {

using test::bitwise_equal;
using test::random_matrix;

ModelConfig tiny_config() {
  ModelConfig c;
  c.image_size = 8;
  c.patch_size = 4;
  c.embed_dim = 8;
  c.heads = 2;
  c.layers = 2;
  c.classes = 3;
  c.gcn_hidden = 4;
  c.mlp_hidden = 8;
  return c;
}

Image<double> random_image(const ModelConfig& c, std::uint64_t seed) {
  Image<double> img;
  img.height = img.width = c.image_size;
  img.channels = c.channels;
  const MatrixD m = random_matrix<double>(1, static_cast<Eigen::Index>(c.image_size) * c.image_size * c.channels, seed);
  img.pixels.assign(m.data(), m.data() + m.size());
  return img;
}

TEST(ModelConfig, DerivedSizes) {
  ModelConfig c;
  EXPECT_EQ(c.num_patches(), 64);
  EXPECT_EQ(c.tokens(), 65);
  EXPECT_EQ(c.head_dim(), 16);
  EXPECT_EQ(c.patch_features(), 16);
}

TEST(ModelConfig, ValidationMessages) {
  ModelConfig c;
  c.patch_size = 5;
  try {
    c.validate();
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("divisible"), std::string::npos);
  }
  c = ModelConfig{};
  c.heads = 3;
  EXPECT_THROW(c.validate(), ValidationError);
  c = ModelConfig{};
  c.layers = 0;
  EXPECT_THROW(c.validate(), ValidationError);
  EXPECT_THROW(parse_gate_mode("relu"), ValidationError);
}

TEST(PatchEmbed, PatchLayoutIsRowMajorOverGrid) {
  const ModelConfig c = tiny_config();
  const Image<double> img = random_image(c, 1);
  const MatrixD p = extract_patches<double>(img, c);
  ASSERT_EQ(p.rows(), 4);
  ASSERT_EQ(p.cols(), 16);
  // Patch 1 is the top-right 4x4 block; feature 5 is its pixel (1, 1).
  EXPECT_EQ(p(1, 5), img.at(1, 5));
  EXPECT_EQ(p(2, 0), img.at(4, 0));
  Image<double> wrong = img;
  wrong.width = 4;
  EXPECT_THROW(extract_patches<double>(wrong, c), ValidationError);
}

TEST(PatchEmbed, ZeroImageAndWeightsGivePositions) {
  const ModelConfig c = tiny_config();
  Model<double> m = init_model<double>(c, 3);
  m.at("embed.w").setZero();
  ad::Tape<double> tape(false);
  const auto p = bind(tape, m, nullptr);
  const MatrixD tokens = patch_embed<double>(tape, MatrixD::Zero(c.num_patches(), c.patch_features()), p).value();
  for (int k = 1; k < c.tokens(); ++k) EXPECT_TRUE(bitwise_equal<double>(tokens.row(k), m.at("embed.pos").row(k)));
  EXPECT_TRUE(bitwise_equal<double>(tokens.row(0), m.at("embed.cls") + m.at("embed.pos").row(0)));
}

TEST(PatchEmbed, MatchesFlattenThenAffine) {
  const ModelConfig c = tiny_config();
  Model<double> m = init_model<double>(c, 3);
  m.at("embed.b") = random_matrix<double>(1, c.embed_dim, 9);
  const Image<double> img = random_image(c, 4);
  ad::Tape<double> tape(false);
  const auto p = bind(tape, m, nullptr);
  const MatrixD tokens = patch_embed(tape, extract_patches<double>(img, c), p).value();
  for (int gy = 0; gy < 2; ++gy)
    for (int gx = 0; gx < 2; ++gx) {
      const int k = gy * 2 + gx;
      for (int d = 0; d < c.embed_dim; ++d) {
        double acc = m.at("embed.b")(0, d) + m.at("embed.pos")(k + 1, d);
        int f = 0;
        for (int y = 0; y < 4; ++y)
          for (int x = 0; x < 4; ++x) acc += img.at(gy * 4 + y, gx * 4 + x) * m.at("embed.w")(f++, d);
        EXPECT_NEAR(tokens(k + 1, d), acc, 1e-12);
      }
    }
}

struct DualFixture {
  ModelConfig c = tiny_config();
  Model<double> m;
  ad::Tape<double> tape{false};
  MatrixD normed;

  explicit DualFixture(std::uint64_t seed) : m(init_model<double>(c, seed)) {
    normed = random_matrix<double>(c.tokens(), c.embed_dim, seed + 50);
  }
  DualAttention<double> run() {
    const auto p = bind(tape, m, nullptr);
    return dual_attention(tape.constant(normed), p, 0, c, true);
  }
};

TEST(DualAttention, IdenticalQueriesGiveIdenticalTensors) {
  DualFixture f(5);
  f.m.at("layer0.attn.w_iq") = f.m.at("layer0.attn.w_q");
  const auto d = f.run();
  for (int h = 0; h < f.c.heads; ++h) EXPECT_TRUE(bitwise_equal(d.agt[h].value(), d.vfm[h].value()));
}

TEST(DualAttention, ZeroInteractionQueriesGiveUniformRows) {
  DualFixture f(6);
  f.m.at("layer0.attn.w_iq").setZero();
  const auto d = f.run();
  for (int h = 0; h < f.c.heads; ++h) {
    const MatrixD& a = d.agt[h].value();
    EXPECT_LT((a.array() - 1.0 / f.c.tokens()).abs().maxCoeff(), 1e-15);
  }
}

TEST(DualAttention, BothTensorsRowStochastic) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    DualFixture f(seed);
    f.m.at("layer0.attn.w_iq") = random_matrix<double>(f.c.embed_dim, f.c.embed_dim, seed + 7);
    const auto d = f.run();
    for (int h = 0; h < f.c.heads; ++h) {
      for (const MatrixD& a : {d.agt[h].value(), d.vfm[h].value()}) {
        EXPECT_GE(a.minCoeff(), 0.0);
        EXPECT_LT((a.rowwise().sum().array() - 1.0).abs().maxCoeff(), 1e-5);
      }
    }
  }
}

struct FusionFixture {
  ModelConfig c = tiny_config();
  Model<double> m;
  ad::Tape<double> tape{false};
  MatrixD agt, vfm;

  FusionFixture(GateMode mode, std::uint64_t seed) {
    c.gate_mode = mode;
    m = init_model<double>(c, seed);
    agt = softmax_rows(random_matrix<double>(c.tokens(), c.tokens(), seed + 1));
    vfm = softmax_rows(random_matrix<double>(c.tokens(), c.tokens(), seed + 2));
  }
  Fusion<double> run(const std::optional<std::pair<double, double>>& fixed = std::nullopt) {
    const auto p = bind(tape, m, nullptr);
    return gated_fusion(tape.constant(agt), tape.constant(vfm), p, 0, c.gate_mode, fixed);
  }
};

TEST(GatedFusion, SaturatedSigmoidSelectsInteraction) {
  FusionFixture f(GateMode::sigmoid, 1);
  f.m.at("layer0.gate.w2").setZero();
  f.m.at("layer0.gate.b2") << 30, -30;
  const MatrixD fused = f.run().fused.value();
  EXPECT_LT((fused - f.agt).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(GatedFusion, ConvexEqualLogitsAverages) {
  FusionFixture f(GateMode::convex, 2);
  f.m.at("layer0.gate.w2").setZero();
  f.m.at("layer0.gate.b2").setZero();
  const MatrixD fused = f.run().fused.value();
  EXPECT_LT((fused - 0.5 * (f.agt + f.vfm)).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LT((fused.rowwise().sum().array() - 1.0).abs().maxCoeff(), 1e-12);
}

TEST(GatedFusion, SigmoidRowSumIsGateSum) {
  FusionFixture f(GateMode::sigmoid, 3);
  f.m.at("layer0.gate.w2") = random_matrix<double>(f.c.gcn_hidden, 2, 4);
  const Fusion<double> r = f.run();
  const MatrixD sums = r.fused.value().rowwise().sum();
  const MatrixD gates = r.g1.value() + r.g2.value();
  EXPECT_LT((sums - gates).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_GT((gates.array() - 1.0).abs().maxCoeff(), 1e-6);
}

TEST(GatedFusion, ConvexRowsStochastic) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    FusionFixture f(GateMode::convex, seed);
    f.m.at("layer0.gate.w2") = random_matrix<double>(f.c.gcn_hidden, 2, seed + 9, 3.0);
    const MatrixD fused = f.run().fused.value();
    EXPECT_LT((fused.rowwise().sum().array() - 1.0).abs().maxCoeff(), 1e-5);
  }
}

TEST(GatedFusion, FixedGatesAreConstant) {
  FusionFixture f(GateMode::sigmoid, 4);
  const Fusion<double> r = f.run(std::make_pair(0.5, 0.5));
  EXPECT_EQ(r.g1.value().minCoeff(), 0.5);
  EXPECT_EQ(r.g2.value().maxCoeff(), 0.5);
}

TEST(InteractionTokens, MatchesNaiveReference) {
  const ModelConfig c = tiny_config();
  Model<double> m = init_model<double>(c, 8);
  for (auto& [name, value] : m.params) value = random_matrix<double>(value.rows(), value.cols(), std::hash<std::string>{}(name) % 1000, 0.5);
  ad::Tape<double> tape(false);
  const auto p = bind(tape, m, nullptr);
  const MatrixD x = random_matrix<double>(c.tokens(), c.embed_dim, 1);
  std::vector<ad::Var<double>> fused, values;
  std::vector<MatrixD> fused_raw, values_raw;
  for (int h = 0; h < c.heads; ++h) {
    fused_raw.push_back(softmax_rows(random_matrix<double>(c.tokens(), c.tokens(), 20 + h)));
    values_raw.push_back(random_matrix<double>(c.tokens(), c.head_dim(), 30 + h));
    fused.push_back(tape.constant(fused_raw.back()));
    values.push_back(tape.constant(values_raw.back()));
  }
  const MatrixD got = interaction_tokens(tape.constant(x), fused, values, p, 0).value();

  const int T = c.tokens(), D = c.embed_dim, dh = c.head_dim();
  auto ln = [&](const MatrixD& in, const MatrixD& g, const MatrixD& b) {
    MatrixD out(in.rows(), in.cols());
    for (int i = 0; i < in.rows(); ++i) {
      double mean = 0, var = 0;
      for (int d = 0; d < D; ++d) mean += in(i, d);
      mean /= D;
      for (int d = 0; d < D; ++d) var += (in(i, d) - mean) * (in(i, d) - mean);
      var /= D;
      for (int d = 0; d < D; ++d) out(i, d) = (in(i, d) - mean) / std::sqrt(var + 1e-6) * g(0, d) + b(0, d);
    }
    return out;
  };
  auto gelu = [](double v) { return 0.5 * v * (1.0 + std::tanh(std::sqrt(2.0 / std::numbers::pi) * (v + 0.044715 * v * v * v))); };
  MatrixD concat(T, D);
  for (int h = 0; h < c.heads; ++h)
    for (int i = 0; i < T; ++i)
      for (int e = 0; e < dh; ++e) {
        double acc = 0;
        for (int j = 0; j < T; ++j) acc += fused_raw[h](i, j) * values_raw[h](j, e);
        concat(i, h * dh + e) = acc;
      }
  MatrixD x1(T, D);
  for (int i = 0; i < T; ++i)
    for (int d = 0; d < D; ++d) {
      double acc = m.at("layer0.attn.b_o")(0, d);
      for (int k = 0; k < D; ++k) acc += concat(i, k) * m.at("layer0.attn.w_o")(k, d);
      x1(i, d) = x(i, d) + acc;
    }
  const MatrixD n2 = ln(x1, m.at("layer0.ln2.g"), m.at("layer0.ln2.b"));
  for (int i = 0; i < T; ++i)
    for (int d = 0; d < D; ++d) {
      double out = x1(i, d) + m.at("layer0.mlp.b2")(0, d);
      for (int k = 0; k < c.mlp_hidden; ++k) {
        double hid = m.at("layer0.mlp.b1")(0, k);
        for (int e = 0; e < D; ++e) hid += n2(i, e) * m.at("layer0.mlp.w1")(e, k);
        out += gelu(hid) * m.at("layer0.mlp.w2")(k, d);
      }
      EXPECT_NEAR(got(i, d), out, 1e-6);
    }
}

TEST(Forward, ShapesAndTrace) {
  ModelConfig c = tiny_config();
  c.classes = 10;
  const Model<double> m = init_model<double>(c, 1);
  const auto r = forward(random_image(c, 2), m);
  EXPECT_EQ(r.logits.rows(), 1);
  EXPECT_EQ(r.logits.cols(), 10);
  ASSERT_EQ(r.trace.layers.size(), 2u);
  for (const auto& lt : r.trace.layers) {
    EXPECT_EQ(lt.agt.size(), 2u);
    EXPECT_EQ(lt.g1.rows(), 2);
    EXPECT_EQ(lt.g1.cols(), c.tokens());
  }
  const auto plain = forward(random_image(c, 2), m, ForwardOptions{false, std::nullopt});
  EXPECT_TRUE(plain.trace.layers[0].agt.empty());
  EXPECT_EQ(plain.trace.layers[0].g1.size(), 0);
}

TEST(Forward, RepeatedCallsAreBitwiseIdentical) {
  const ModelConfig c = tiny_config();
  const Model<float> m = init_model<float>(c, 1);
  const Image<double> img = random_image(c, 2);
  const auto a = forward(img, m), b = forward(img, m);
  EXPECT_TRUE(bitwise_equal(a.logits, b.logits));
  for (std::size_t l = 0; l < a.trace.layers.size(); ++l)
    for (std::size_t h = 0; h < a.trace.layers[l].fused.size(); ++h)
      EXPECT_TRUE(bitwise_equal(a.trace.layers[l].fused[h], b.trace.layers[l].fused[h]));
}

TEST(Forward, PatchPermutationWithPositionsKeepsLogits) {
  const ModelConfig c = tiny_config();
  Model<double> m = init_model<double>(c, 5);
  // The gate map reads whole attention rows by token position, so it is
  // only permutation-equivariant when it ignores them.
  for (int l = 0; l < c.layers; ++l) m.at(layer_key(l, "gate.w1")).setZero();
  const MatrixD patches = extract_patches<double>(random_image(c, 6), c);
  MatrixD swapped = patches;
  swapped.row(0).swap(swapped.row(3));
  Model<double> m2 = m;
  m2.at("embed.pos").row(1).swap(m2.at("embed.pos").row(4));
  const auto a = forward(patches, m), b = forward(swapped, m2);
  EXPECT_LT((a.logits - b.logits).cwiseAbs().maxCoeff(), 1e-12);
  const auto pa = forward(patches, m, {false, std::nullopt}), pb = forward(swapped, m2, {false, std::nullopt});
  EXPECT_LT((pa.logits - pb.logits).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Forward, ReducesToBaselineWithCopiedQueriesAndFixedGates) {
  const ModelConfig c = tiny_config();
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Model<float> m = init_model<float>(c, seed);
    for (int l = 0; l < c.layers; ++l) m.at(layer_key(l, "attn.w_iq")) = m.at(layer_key(l, "attn.w_q"));
    const MatrixF patches = extract_patches<float>(random_image(c, seed + 100), c);
    const auto base = forward(patches, m, {false, std::nullopt});
    const auto inter = forward(patches, m, {true, std::make_pair(0.0, 1.0)});
    EXPECT_TRUE(bitwise_equal(base.logits, inter.logits));
  }
}

TEST(Forward, WrongPatchShapeIsRejected) {
  const ModelConfig c = tiny_config();
  const Model<double> m = init_model<double>(c, 1);
  EXPECT_THROW(forward<double>(MatrixD::Zero(3, 16), m), ValidationError);
}

TEST(Freeze, InteractionFinetuneTrainsOnlyInteractionAndHead) {
  const Model<float> m = init_model<float>(tiny_config(), 1);
  const TrainableMask mask = freeze_mask(m.params, FreezePolicy::interaction_finetune);
  for (const auto& [name, flag] : mask) {
    const bool expected = name.ends_with("attn.w_iq") || name.find(".gate.") != std::string::npos || name.starts_with("head.");
    EXPECT_EQ(flag, expected) << name;
  }
  for (const char* frozen : {"layer0.attn.w_q", "layer0.attn.w_k", "layer0.attn.w_v", "layer1.mlp.w1", "embed.w", "embed.pos"})
    EXPECT_FALSE(mask.at(frozen)) << frozen;
}

TEST(Freeze, PretrainExcludesInteractionPathway) {
  const Model<float> m = init_model<float>(tiny_config(), 1);
  const TrainableMask mask = freeze_mask(m.params, FreezePolicy::pretrain);
  EXPECT_FALSE(mask.at("layer0.attn.w_iq"));
  EXPECT_FALSE(mask.at("layer1.gate.w1"));
  EXPECT_TRUE(mask.at("layer0.attn.w_q"));
  EXPECT_TRUE(mask.at("head.w"));
  const TrainableMask all = freeze_mask(m.params, FreezePolicy::end_to_end);
  EXPECT_TRUE(std::all_of(all.begin(), all.end(), [](const auto& kv) { return kv.second; }));
  EXPECT_THROW(parse_freeze_policy("none"), ValidationError);
}

TEST(Freeze, FrozenParameterHasExactlyZeroGradientAndUpdate) {
  const ModelConfig c = tiny_config();
  const Model<double> m = init_model<double>(c, 2);
  const train::StagePlan plan = train::plan_stage(m, true, {}, FreezePolicy::interaction_finetune);
  const std::vector<double> teacher(4, 0.25);
  const auto r = train::run_sample(m, plan, extract_patches<double>(random_image(c, 3), c), 1, teacher, 1e-3);
  for (const auto& [name, flag] : plan.trainable) {
    EXPECT_EQ(r.gradients.by_name.count(name), flag ? 1u : 0u) << name;
  }
}

TEST(Checkpoint, RoundTripIsBitwise) {
  ModelConfig c = tiny_config();
  c.gate_mode = GateMode::convex;
  Model<float> m = init_model<float>(c, 9);
  m.stage = Stage::finetune;
  const auto bytes = encode_checkpoint(m);
  const Model<float> back = decode_checkpoint(bytes, "mem");
  EXPECT_EQ(back.config, m.config);
  EXPECT_EQ(back.stage, m.stage);
  ASSERT_EQ(back.params.size(), m.params.size());
  for (const auto& [name, value] : m.params) EXPECT_TRUE(bitwise_equal(value, back.at(name))) << name;
  EXPECT_EQ(encode_checkpoint(back), bytes);
}

TEST(Checkpoint, CorruptionIsRejected) {
  const auto good = encode_checkpoint(init_model<float>(tiny_config(), 9));
  auto bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad_magic, "f"), FormatError);
  auto bad_version = good;
  bad_version[4] = 7;
  EXPECT_THROW(decode_checkpoint(bad_version, "f"), FormatError);
  auto bad_patch = good;
  bad_patch[12] = 3;  // patch_size no longer divides image_size
  EXPECT_THROW(decode_checkpoint(bad_patch, "f"), FormatError);
  auto truncated = good;
  truncated.resize(good.size() - 3);
  EXPECT_THROW(decode_checkpoint(truncated, "f"), FormatError);
  auto trailing = good;
  trailing.push_back(0);
  EXPECT_THROW(decode_checkpoint(trailing, "f"), FormatError);
  EXPECT_THROW(decode_checkpoint({}, "f"), FormatError);
}

TEST(GradCheckModel, TwoLayerTotalLossAt64Bit) {
  const ModelConfig c = tiny_config();
  Model<double> m = init_model<double>(c, 4);
  for (int l = 0; l < c.layers; ++l)
    m.at(layer_key(l, "gate.w2")) = random_matrix<double>(c.gcn_hidden, 2, 40 + l, 0.5);
  const train::StagePlan plan = train::plan_stage(m, true, {}, FreezePolicy::end_to_end);
  const MatrixD patches = extract_patches<double>(random_image(c, 5), c);
  const std::vector<double> teacher{0.1, 0.4, 0.3, 0.2};
  auto f = [&](const ParameterMap<double>& p) { return train::sample_objective(m, p, plan, patches, 2, teacher, 1e-3); };
  GradCheckOptions o;
  o.max_entries_per_tensor = 12;
  o.tolerance = 1e-4;
  const GradCheckResult r = grad_check<double>(f, m.params, o);
  EXPECT_TRUE(r.passed) << r.reports.front().parameter << " " << r.max_relative_error;
  EXPECT_LE(r.max_relative_error, 1e-4);
}

}  // namespace
}  // namespace ivit
