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

// Two-stage training: a standard ViT pretraining stage, then an
// interaction fine-tuning stage under a freeze policy and ablation switches.
// Plain SGD with momentum and per-stage cosine decay. Every source of
// randomness derives from TrainConfig::seed.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ivit/error.hpp"
#include "ivit/model/freeze.hpp"
#include "ivit/model/ivit.hpp"
#include "ivit/model/params.hpp"
#include "ivit/numerics/autodiff.hpp"
#include "ivit/numerics/grad_check.hpp"
#include "ivit/train/loss.hpp"
#include "ivit/train/synthetic.hpp"

namespace ivit::train {

struct AblationSwitches {
  bool iq = true;  // interaction queries present
  bool ic = true;  // alignment loss active
  bool gc = true;  // gate map active (otherwise g1 = g2 = 0.5)

  std::string tag() const {
    return std::string("IQ") + (iq ? "1" : "0") + "-IC" + (ic ? "1" : "0") + "-GC" + (gc ? "1" : "0");
  }
  friend bool operator==(const AblationSwitches&, const AblationSwitches&) = default;
};

enum class StageMode { pretrain, finetune, two_stage };

inline std::string to_string(StageMode m) {
  switch (m) {
    case StageMode::pretrain: return "pretrain";
    case StageMode::finetune: return "finetune";
    case StageMode::two_stage: return "two-stage";
  }
  return "?";
}

inline StageMode parse_stage_mode(const std::string& s) {
  if (s == "pretrain") return StageMode::pretrain;
  if (s == "finetune") return StageMode::finetune;
  if (s == "two-stage") return StageMode::two_stage;
  throw ValidationError("unknown stage '" + s + "' (expected pretrain, finetune or two-stage)");
}

struct TrainConfig {
  ModelConfig model;
  DatasetSpec data;
  AblationSwitches switches;
  StageMode stage = StageMode::two_stage;
  FreezePolicy freeze = FreezePolicy::interaction_finetune;  // fine-tuning stage policy
  int pretrain_epochs = 10;
  int epochs = 30;  // fine-tuning stage
  int batch = 32;
  double pretrain_lr = 0.05;
  double lr = 0.01;
  double momentum = 0.9;
  double lambda = 1e-3;  // teacher smoothing toward uniform
  std::uint64_t seed = 1;

  void validate() const {
    model.validate();
    data.validate();
    require(model.image_size == kImageSize && model.patch_size == kPatchSize && model.channels == 1,
            "synthetic data needs model.image_size = 32, model.patch_size = 4 and one channel");
    require(model.classes == data.classes, "model.classes (" + std::to_string(model.classes) +
                                               ") must equal data.classes (" + std::to_string(data.classes) + ")");
    require(epochs >= 0 && pretrain_epochs >= 0, "train epochs must be >= 0");
    require(batch >= 1, "train.batch must be at least 1");
    require(lr >= 0 && pretrain_lr >= 0, "learning rates must be >= 0");
    require(momentum >= 0 && momentum < 1, "train.momentum must lie in [0, 1)");
    require(lambda >= 0 && lambda < 1, "train.lambda must lie in [0, 1)");
  }
};

struct EpochRecord {
  std::string stage;
  int epoch = 0;  // 1-based within the stage
  long steps = 0;  // optimizer steps since the start of the run
  double task_loss = 0;
  double align_loss = 0;
  double train_acc = 0;
  double val_acc = 0;
  std::vector<double> g1, g2;  // per-layer means; empty without gates
};

inline std::string format_record(const EpochRecord& r, const AblationSwitches& sw) {
  char buf[256];
  std::string line;
  std::snprintf(buf, sizeof buf, "stage=%s epoch=%d steps=%ld switches=%s task_loss=%.6f align_loss=%.6f",
                r.stage.c_str(), r.epoch, r.steps, sw.tag().c_str(), r.task_loss, r.align_loss);
  line += buf;
  std::snprintf(buf, sizeof buf, " total_loss=%.6f train_acc=%.4f val_acc=%.4f", r.task_loss + r.align_loss,
                r.train_acc, r.val_acc);
  line += buf;
  auto join = [&](const std::vector<double>& v) {
    if (v.empty()) return std::string("-");
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%s%.4f", i == 0 ? "" : ",", v[i]);
      s += buf;
    }
    return s;
  };
  line += " g1=" + join(r.g1) + " g2=" + join(r.g2);
  return line;
}

// Per-stage behaviour derived from the stage and the switches.
struct StagePlan {
  std::string name;
  ForwardOptions forward;
  bool align = false;
  Pathway pathway = Pathway::interaction;
  TrainableMask trainable;
};

template <class T>
StagePlan plan_stage(const Model<T>& model, bool finetune, const AblationSwitches& sw, FreezePolicy policy) {
  StagePlan plan;
  if (!finetune) {
    plan.name = "pretrain";
    plan.forward.interaction = false;
    plan.trainable = freeze_mask(model.params, FreezePolicy::pretrain);
    return plan;
  }
  plan.name = "finetune";
  plan.forward.interaction = sw.iq;
  if (!sw.gc) plan.forward.fixed_gates = std::make_pair(0.5, 0.5);
  plan.align = sw.ic;
  plan.pathway = sw.iq ? Pathway::interaction : Pathway::original;
  plan.trainable = freeze_mask(model.params, policy);
  for (auto& [name, flag] : plan.trainable) {
    if (!sw.iq && is_interaction_param(name)) flag = false;
    if (!sw.gc && name.find(".gate.") != std::string::npos) flag = false;
    // Without interaction queries the constraint lands on the original
    // queries, which then become the supervised, trainable projection.
    if (!sw.iq && sw.ic && policy == FreezePolicy::interaction_finetune && name.ends_with(".attn.w_q")) flag = true;
  }
  return plan;
}

template <class T>
struct SampleResult {
  ad::Gradients<T> gradients;
  LossBreakdown loss;
  int predicted = 0;
  std::vector<double> g1_mean, g2_mean;  // per layer
};

template <class T>
int argmax(const Matrix<T>& row) {
  Eigen::Index best = 0;
  row.row(0).maxCoeff(&best);
  return static_cast<int>(best);
}

// Loss and gradients of one sample under a stage plan.
template <class T>
SampleResult<T> run_sample(const Model<T>& model, const StagePlan& plan, const Matrix<T>& patches, int label,
                           const std::vector<T>& teacher, T lambda) {
  ad::Tape<T> tape(true);
  const BoundParams<T> p = bind(tape, model, &plan.trainable);
  const GraphOutputs<T> g = build_forward(tape, model, p, patches, plan.forward);
  std::optional<ad::Var<T>> align;
  if (plan.align) align = alignment_loss(g.layers, teacher, lambda, plan.pathway);
  const TotalLoss<T> loss = total_loss(g.logits, label, align ? &*align : nullptr);
  SampleResult<T> out;
  out.gradients = tape.backward(loss.total);
  out.loss = loss.breakdown;
  out.predicted = argmax(g.logits.value());
  for (const LayerVars<T>& lv : g.layers) {
    if (lv.g1.empty()) continue;
    double s1 = 0, s2 = 0;
    Eigen::Index n = 0;
    for (std::size_t h = 0; h < lv.g1.size(); ++h) {
      s1 += static_cast<double>(lv.g1[h].value().sum());
      s2 += static_cast<double>(lv.g2[h].value().sum());
      n += lv.g1[h].value().rows();
    }
    out.g1_mean.push_back(s1 / static_cast<double>(n));
    out.g2_mean.push_back(s2 / static_cast<double>(n));
  }
  return out;
}

// Objective and gradient of one sample as a function of the parameter map;
// the gradient-check entry point.
template <class T>
ValueAndGradient<T> sample_objective(const Model<T>& model, const ParameterMap<T>& params, const StagePlan& plan,
                                     const Matrix<T>& patches, int label, const std::vector<T>& teacher, T lambda) {
  Model<T> probe;
  probe.config = model.config;
  probe.stage = model.stage;
  probe.params = params;
  SampleResult<T> r = run_sample(probe, plan, patches, label, teacher, lambda);
  return {static_cast<T>(r.loss.total), std::move(r.gradients.by_name)};
}

struct TrainHooks {
  // Ends a stage after the first epoch whose running train accuracy reaches
  // this value.
  std::optional<double> stop_at_train_accuracy;
  std::function<void(const std::string&)> on_record;
  // Called after every optimizer step with the stage name, the step count
  // since the start of the run and the batch's correct/total predictions.
  std::function<void(const std::string&, long, std::size_t, std::size_t)> on_step;
};

struct TrainResult {
  Model<float> final_model;
  Model<float> best_model;
  double best_val_acc = -1;
  std::vector<EpochRecord> records;
  std::string log;
};

template <class T>
double accuracy(const Model<T>& model, const std::vector<Matrix<T>>& patches, const Dataset& data,
                const std::vector<std::size_t>& indices, const ForwardOptions& options) {
  if (indices.empty()) return 0;
  std::size_t correct = 0;
  for (std::size_t i : indices) {
    const ForwardResult<T> r = forward(patches[i], model, options);
    correct += argmax(r.logits) == data.samples[i].label ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(indices.size());
}

inline std::vector<MatrixF> patch_cache(const Dataset& data, const ModelConfig& cfg) {
  std::vector<MatrixF> out;
  out.reserve(data.samples.size());
  for (const SyntheticSample& s : data.samples) out.push_back(extract_patches<float>(s.image, cfg));
  return out;
}

class Trainer {
 public:
  Trainer(TrainConfig cfg, const Dataset& data, TrainHooks hooks = {})
      : cfg_(std::move(cfg)), data_(data), hooks_(std::move(hooks)) {
    cfg_.validate();
    require(data_.spec.classes == cfg_.model.classes, "train: dataset class count differs from model.classes");
    patches_ = patch_cache(data_, cfg_.model);
    for (const SyntheticSample& s : data_.samples) teachers_.push_back(s.teacher.as<float>());
  }

  // `initial` continues from a checkpoint; otherwise a fresh model is drawn
  // from the seed.
  TrainResult run(std::optional<Model<float>> initial, const std::string& header = {}) {
    Model<float> model = initial ? std::move(*initial) : init_model<float>(cfg_.model, cfg_.seed);
    require(model.config == cfg_.model, "train: checkpoint config does not match model.* settings");
    TrainResult result;
    result.log = header;
    long steps = 0;
    if (cfg_.stage != StageMode::finetune) {
      run_stage(model, false, cfg_.pretrain_epochs, cfg_.pretrain_lr, steps, result);
      model.stage = Stage::pretrain;
    }
    if (cfg_.stage != StageMode::pretrain) {
      if (model.stage != Stage::finetune) init_interaction_pathway(model, cfg_.seed + 17);
      run_stage(model, true, cfg_.epochs, cfg_.lr, steps, result);
      model.stage = Stage::finetune;
    }
    if (result.best_val_acc < 0) result.best_model = model;
    result.best_model.stage = model.stage;
    result.final_model = std::move(model);
    return result;
  }

  const TrainConfig& config() const { return cfg_; }

 private:
  void run_stage(Model<float>& model, bool finetune, int epochs, double lr0, long& steps, TrainResult& result) {
    const StagePlan plan = plan_stage(model, finetune, cfg_.switches, cfg_.freeze);
    const std::vector<std::size_t> train_idx = data_.indices(true);
    const std::vector<std::size_t> val_idx = data_.indices(false);
    const auto batches_per_epoch =
        static_cast<long>((train_idx.size() + static_cast<std::size_t>(cfg_.batch) - 1) / static_cast<std::size_t>(cfg_.batch));
    const long stage_steps = batches_per_epoch * epochs;
    long stage_step = 0;
    ParameterMap<float> velocity;
    for (const auto& [name, flag] : plan.trainable)
      if (flag) velocity[name] = MatrixF::Zero(model.at(name).rows(), model.at(name).cols());

    std::mt19937_64 rng(cfg_.seed * 1000003ULL + (finetune ? 2 : 1));
    for (int epoch = 1; epoch <= epochs; ++epoch) {
      std::vector<std::size_t> order = train_idx;
      std::shuffle(order.begin(), order.end(), rng);
      EpochRecord rec;
      rec.stage = plan.name;
      rec.epoch = epoch;
      std::size_t correct = 0;
      std::vector<double> g1_sum(static_cast<std::size_t>(model.config.layers), 0.0), g2_sum = g1_sum;
      bool have_gates = false;

      for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg_.batch)) {
        const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg_.batch));
        ParameterMap<float> grad;
        const std::size_t correct_before = correct;
        for (std::size_t k = start; k < end; ++k) {
          const std::size_t i = order[k];
          SampleResult<float> r = run_sample(model, plan, patches_[i], data_.samples[i].label, teachers_[i],
                                             static_cast<float>(cfg_.lambda));
          for (auto& [name, g] : r.gradients.by_name) {
            auto it = grad.find(name);
            if (it == grad.end()) grad.emplace(name, std::move(g));
            else it->second += g;
          }
          rec.task_loss += r.loss.task;
          rec.align_loss += r.loss.alignment;
          correct += r.predicted == data_.samples[i].label ? 1 : 0;
          for (std::size_t l = 0; l < r.g1_mean.size(); ++l) {
            g1_sum[l] += r.g1_mean[l];
            g2_sum[l] += r.g2_mean[l];
            have_gates = true;
          }
        }
        const double progress = stage_steps > 0 ? static_cast<double>(stage_step) / static_cast<double>(stage_steps) : 0;
        const auto lr = static_cast<float>(lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
        const auto inv_batch = 1.0f / static_cast<float>(end - start);
        const auto mu = static_cast<float>(cfg_.momentum);
        for (auto& [name, g] : grad) {
          MatrixF& v = velocity.at(name);
          v = mu * v + g * inv_batch;
          model.at(name) -= lr * v;
        }
        ++stage_step;
        ++steps;
        if (hooks_.on_step) hooks_.on_step(plan.name, steps, correct - correct_before, end - start);
      }
      const auto n = static_cast<double>(order.size());
      rec.steps = steps;
      rec.task_loss /= n;
      rec.align_loss /= n;
      rec.train_acc = static_cast<double>(correct) / n;
      rec.val_acc = accuracy(model, patches_, data_, val_idx, plan.forward);
      if (have_gates) {
        for (std::size_t l = 0; l < g1_sum.size(); ++l) {
          rec.g1.push_back(g1_sum[l] / n);
          rec.g2.push_back(g2_sum[l] / n);
        }
      }
      const std::string line = format_record(rec, cfg_.switches);
      result.log += line + "\n";
      if (hooks_.on_record) hooks_.on_record(line);
      result.records.push_back(rec);
      if (rec.val_acc > result.best_val_acc) {
        result.best_val_acc = rec.val_acc;
        result.best_model = model;
      }
      if (hooks_.stop_at_train_accuracy && rec.train_acc >= *hooks_.stop_at_train_accuracy) break;
    }
  }

  TrainConfig cfg_;
  const Dataset& data_;
  TrainHooks hooks_;
  std::vector<MatrixF> patches_;
  std::vector<std::vector<float>> teachers_;
};

inline TrainResult train(const TrainConfig& cfg, const Dataset& data, std::optional<Model<float>> initial = {},
                         const std::string& header = {}, TrainHooks hooks = {}) {
  return Trainer(cfg, data, std::move(hooks)).run(std::move(initial), header);
}

// Same schedule with the switch mask overriding cfg.switches.
inline TrainResult ablate(TrainConfig cfg, const AblationSwitches& switches, const Dataset& data,
                          std::optional<Model<float>> initial = {}, const std::string& header = {},
                          TrainHooks hooks = {}) {
  cfg.switches = switches;
  return train(cfg, data, std::move(initial), header, std::move(hooks));
}

// Forward options matching a switch mask after fine-tuning.
inline ForwardOptions eval_options(const AblationSwitches& sw, bool finetuned) {
  ForwardOptions o;
  o.interaction = finetuned && sw.iq;
  if (!sw.gc) o.fixed_gates = std::make_pair(0.5, 0.5);
  return o;
}

}  // namespace ivit::train
