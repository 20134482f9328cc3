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

// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// non-zero when any criterion fails. Criteria names given on the command
// line restrict the run to those criteria.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ivit/cli/app.hpp"
#include "ivit/eval/eval.hpp"
#include "ivit/interaction/harsanyi.hpp"
#include "ivit/model/checkpoint.hpp"
#include "ivit/numerics/grad_check.hpp"
#include "ivit/teacher/teacher_map.hpp"
#include "ivit/teacher/tim.hpp"
#include "ivit/train/trainer.hpp"

namespace {

using namespace ivit;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

struct Verdict {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

const std::vector<std::uint64_t> kSeeds{1, 2, 3, 4, 5};

// Desk-scale model used by the training criteria.
ModelConfig compact_model() {
  ModelConfig c;
  c.embed_dim = 32;
  c.heads = 4;
  c.layers = 2;
  c.mlp_hidden = 64;
  return c;
}

Verdict harsanyi_reconstruction() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> size(1, 8);
  std::normal_distribution<double> value(0.0, 10.0);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = size(rng);
    std::vector<double> v(std::size_t{1} << n);
    for (double& x : v) x = value(rng);
    const interaction::HarsanyiTable table = interaction::harsanyi_and([&](interaction::Subset s) { return v[s]; }, n);
    for (interaction::Subset s = 0; s < v.size(); ++s)
      worst = std::max(worst, std::abs(interaction::reconstruct_value(table, s) - v[s]));
  }
  const double t = seconds_since(t0);
  return {worst <= 1e-9 && t <= 10, fmt("100 oracles, max |error| = %.3g, %.2f s", worst, t)};
}

Verdict gradient_fidelity() {
  const auto t0 = Clock::now();
  ModelConfig c;
  c.layers = 2;
  Model<double> m = init_model<double>(c, 11);
  const train::StagePlan plan = train::plan_stage(m, true, {}, FreezePolicy::end_to_end);
  const train::SyntheticSample s = train::make_sample(3, 77, 0.0);
  const MatrixD patches = extract_patches<double>(s.image, c);
  const std::vector<double> teacher = s.teacher.as<double>();
  auto f = [&](const ParameterMap<double>& p) {
    return train::sample_objective(m, p, plan, patches, s.label, teacher, 1e-3);
  };
  GradCheckOptions o;
  o.step = 1e-5;
  o.tolerance = 1e-6;
  o.max_entries_per_tensor = 24;
  o.seed = 5;
  const GradCheckResult r = grad_check<double>(f, m.params, o);
  std::set<std::string> tensors;
  for (const auto& rep : r.reports) tensors.insert(rep.parameter.substr(0, rep.parameter.find('[')));
  std::size_t over = 0;
  double worst_large = 0;  // among entries with |analytic| >= 1e-3
  for (const auto& rep : r.reports) {
    over += rep.relative_error > o.tolerance ? 1 : 0;
    if (std::abs(rep.analytic) >= 1e-3) worst_large = std::max(worst_large, rep.relative_error);
  }
  const double t = seconds_since(t0);
  const auto& w = r.reports.front();
  return {r.passed && t <= 60,
          fmt("%zu entries over %zu tensors, max relative error %.3g at %s (analytic %.6g, numeric %.6g); "
              "%zu entries above 1e-6; max %.3g where |analytic| >= 1e-3; %.1f s",
              r.reports.size(), tensors.size(), r.max_relative_error, w.parameter.c_str(), w.analytic, w.numeric,
              over, worst_large, t)};
}

Verdict distribution_invariants() {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(0, 1);
  std::uniform_int_distribution<int> len(1, 64), rows(1, 12);
  double softmax_dev = 0, teacher_dev = 0, fused_dev = 0, kl_min = std::numeric_limits<double>::infinity();
  int degenerate = 0;
  bool negative = false;

  ModelConfig c;
  c.image_size = 16;
  c.embed_dim = 8;
  c.heads = 2;
  c.layers = 1;
  c.classes = 3;
  c.gcn_hidden = 4;
  c.mlp_hidden = 8;
  c.gate_mode = GateMode::convex;

  for (int i = 0; i < 1000; ++i) {
    const double spread = 1 + 50 * u(rng);
    MatrixD logits(rows(rng), len(rng));
    for (Eigen::Index k = 0; k < logits.size(); ++k) logits.data()[k] = spread * (2 * u(rng) - 1);
    const MatrixD p = softmax_rows(logits);
    for (Eigen::Index r = 0; r < p.rows(); ++r) softmax_dev = std::max(softmax_dev, std::abs(p.row(r).sum() - 1));

    const int n = len(rng);
    teacher::StrengthVector fore, back;
    for (int k = 0; k < n; ++k) {
      fore.values.push_back(u(rng));
      back.values.push_back(u(rng));
    }
    if (i % 4 == 0) back = fore;
    if (i % 4 == 1)
      for (int k = 0; k < n; ++k) back.values[k] = fore.values[k] + u(rng);
    const teacher::GridShape grid{1, n};
    teacher::TeacherMap t = i % 3 == 2 ? teacher::dense_teacher({fore, back}, back, grid)
                                       : teacher::classification_teacher(fore, back, grid);
    degenerate += t.degenerate ? 1 : 0;
    double sum = 0;
    for (float v : t.values) {
      negative = negative || v < 0;
      sum += v;
    }
    teacher_dev = std::max(teacher_dev, std::abs(sum - 1));

    Model<double> m = init_model<double>(c, static_cast<std::uint64_t>(i));
    m.at(layer_key(0, "gate.w2")) *= 1 + 20 * u(rng);
    MatrixD patches(c.num_patches(), c.patch_features());
    for (Eigen::Index k = 0; k < patches.size(); ++k) patches.data()[k] = u(rng);
    const auto fr = forward(patches, m);
    for (const MatrixD& cf : fr.trace.layers[0].fused)
      for (Eigen::Index r = 0; r < cf.rows(); ++r) fused_dev = std::max(fused_dev, std::abs(cf.row(r).sum() - 1));

    std::vector<double> a(static_cast<std::size_t>(n)), b(a.size());
    double sa = 0, sb = 0;
    for (std::size_t k = 0; k < a.size(); ++k) {
      sa += a[k] = u(rng) < 0.2 ? 0.0 : u(rng);
      sb += b[k] = u(rng) < 0.2 ? 0.0 : u(rng);
    }
    if (sa == 0) sa = a[0] = 1;
    if (sb == 0) sb = b[0] = 1;
    for (double& x : a) x /= sa;
    for (double& x : b) x /= sb;
    kl_min = std::min(kl_min, kl_rows(a, b, 1e-3 + 0.5 * u(rng)));
  }
  const bool pass = softmax_dev <= 1e-6 && teacher_dev <= 1e-4 && !negative && fused_dev <= 1e-5 && kl_min >= 0;
  return {pass, fmt("1000 cases: softmax %.2g, teacher %.2g (%d degenerate, %s), convex C_F %.2g, min KL %.3g",
                    softmax_dev, teacher_dev, degenerate, negative ? "negative entry" : "non-negative", fused_dev,
                    kl_min)};
}

Verdict baseline_reduction() {
  ModelConfig c;
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0, 1);
  int equal = 0;
  for (std::uint64_t i = 0; i < 100; ++i) {
    Model<double> m = init_model<double>(c, i);
    for (int l = 0; l < c.layers; ++l) m.at(layer_key(l, "attn.w_iq")) = m.at(layer_key(l, "attn.w_q"));
    MatrixD patches(c.num_patches(), c.patch_features());
    for (Eigen::Index k = 0; k < patches.size(); ++k) patches.data()[k] = u(rng);
    const MatrixD base = forward(patches, m, {false, std::nullopt}).logits;
    const MatrixD inter = forward(patches, m, {true, std::make_pair(0.0, 1.0)}).logits;
    equal += std::equal(base.data(), base.data() + base.size(), inter.data(),
                        [](double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; })
                 ? 1
                 : 0;
  }
  return {equal == 100, fmt("%d/100 inputs bitwise equal", equal)};
}

// First step at which the last 10 steps reach 95% train accuracy.
struct Window {
  std::deque<std::pair<std::size_t, std::size_t>> recent;
  long hit = -1;

  void add(long step, std::size_t correct, std::size_t total) {
    recent.emplace_back(correct, total);
    if (recent.size() > 10) recent.pop_front();
    std::size_t c = 0, n = 0;
    for (const auto& [a, b] : recent) {
      c += a;
      n += b;
    }
    if (hit < 0 && recent.size() == 10 && static_cast<double>(c) >= 0.95 * static_cast<double>(n)) hit = step;
  }
  double steps() const { return hit < 0 ? std::numeric_limits<double>::infinity() : static_cast<double>(hit); }
};

Verdict convergence() {
  const auto t0 = Clock::now();
  std::vector<double> base_steps, ivit_steps;
  for (std::uint64_t seed : kSeeds) {
    train::TrainConfig cfg;
    cfg.model = compact_model();
    cfg.seed = seed;
    cfg.stage = train::StageMode::pretrain;
    cfg.pretrain_epochs = 1;
    const train::Dataset data = train::gen_synthetic(cfg.data, seed);
    const Model<float> ckpt = train::train(cfg, data).final_model;

    Window base, ivit;
    train::TrainConfig b = cfg;
    b.pretrain_epochs = 6;
    train::TrainHooks hb;
    hb.on_step = [&](const std::string&, long s, std::size_t c, std::size_t n) { base.add(s, c, n); };
    train::train(b, data, ckpt, {}, hb);

    train::TrainConfig f = cfg;
    f.stage = train::StageMode::finetune;
    f.epochs = 6;
    train::TrainHooks hf;
    hf.on_step = [&](const std::string&, long s, std::size_t c, std::size_t n) { ivit.add(s, c, n); };
    train::train(f, data, ckpt, {}, hf);

    base_steps.push_back(base.steps());
    ivit_steps.push_back(ivit.steps());
    std::printf("  convergence seed %llu: baseline %s, I-ViT %s\n", static_cast<unsigned long long>(seed),
                base.hit < 0 ? "never" : std::to_string(base.hit).c_str(),
                ivit.hit < 0 ? "never" : std::to_string(ivit.hit).c_str());
    std::fflush(stdout);
  }
  const double mb = median(base_steps), mi = median(ivit_steps), t = seconds_since(t0);
  return {mi <= 0.7 * mb && t <= 1800,
          fmt("median steps to 95%% train accuracy: I-ViT %g vs baseline %g (ratio %.3g, need <= 0.7), %.0f s", mi, mb,
              mi / mb, t)};
}

struct FinetuneOutcome {
  double cos_agt = 0, cos_vfm = 0;
  double full = 0, no_gc = 0, no_ic = 0, no_iq = 0;
};

// Shared by the alignment and ablation criteria: one pretraining run per
// seed, then four fine-tuning runs from that checkpoint.
const std::vector<FinetuneOutcome>& finetune_outcomes() {
  static std::vector<FinetuneOutcome> outcomes;
  if (!outcomes.empty()) return outcomes;
  for (std::uint64_t seed : kSeeds) {
    train::TrainConfig cfg;
    cfg.model = compact_model();
    cfg.seed = seed;
    cfg.stage = train::StageMode::pretrain;
    cfg.pretrain_epochs = 10;
    const train::Dataset data = train::gen_synthetic(cfg.data, seed);
    const Model<float> ckpt = train::train(cfg, data).final_model;

    train::TrainConfig f = cfg;
    f.stage = train::StageMode::finetune;
    f.epochs = 15;
    f.lr = 0.01;
    FinetuneOutcome o;
    auto run = [&](train::AblationSwitches sw) {
      train::TrainResult r = train::ablate(f, sw, data, ckpt);
      return std::make_pair(r.records.back().val_acc, std::move(r.final_model));
    };
    auto [full_acc, full_model] = run({true, true, true});
    const eval::EvalReport rep = eval::evaluate(full_model, data, false, train::eval_options({}, true));
    o.cos_agt = rep.cos_agt.value_or(0);
    o.cos_vfm = rep.cos_vfm;
    o.full = full_acc;
    o.no_gc = run({true, true, false}).first;
    o.no_ic = run({true, false, true}).first;
    o.no_iq = run({false, true, true}).first;
    std::printf("  finetune seed %llu: agt %.4f vfm %.4f | val acc full %.4f no-GC %.4f no-IC %.4f no-IQ %.4f\n",
                static_cast<unsigned long long>(seed), o.cos_agt, o.cos_vfm, o.full, o.no_gc, o.no_ic, o.no_iq);
    std::fflush(stdout);
    outcomes.push_back(o);
  }
  return outcomes;
}

std::vector<double> pick(double FinetuneOutcome::*field) {
  std::vector<double> v;
  for (const auto& o : finetune_outcomes()) v.push_back(o.*field);
  return v;
}

Verdict alignment() {
  const double agt = median(pick(&FinetuneOutcome::cos_agt)), vfm = median(pick(&FinetuneOutcome::cos_vfm));
  return {agt >= 0.8 && agt - vfm >= 0.1,
          fmt("median cosine to teacher: C_AGT %.4f, C_VFM %.4f, gap %.4f", agt, vfm, agt - vfm)};
}

Verdict ablation() {
  const double full = median(pick(&FinetuneOutcome::full)), no_gc = median(pick(&FinetuneOutcome::no_gc));
  const double no_ic = median(pick(&FinetuneOutcome::no_ic)), no_iq = median(pick(&FinetuneOutcome::no_iq));
  const bool pass = full >= no_gc && full >= no_ic && no_iq < full && no_iq < no_gc && no_iq < no_ic;
  return {pass, fmt("median final val accuracy: full %.4f, no-GC %.4f, no-IC %.4f, no-IQ %.4f", full, no_gc, no_ic,
                    no_iq)};
}

int invoke(std::vector<std::string> args, std::string* err = nullptr) {
  args.insert(args.begin(), "ivit");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, e;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, e);
  if (err) *err = e.str();
  return code;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("ivit_acceptance_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::vector<std::uint8_t> file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Verdict round_trips() {
  const fs::path dir = scratch("round_trip");
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(0, 1);
  std::uniform_int_distribution<int> side(1, 16), small(1, 4);
  int tim_ok = 0, ckpt_ok = 0;
  for (int i = 0; i < 100; ++i) {
    teacher::TeacherMap m;
    m.grid = {side(rng), side(rng)};
    std::vector<double> raw(m.grid.size());
    double total = 0;
    for (double& v : raw) total += (v = u(rng) < 0.3 ? 0.0 : u(rng));
    if (total == 0) total = raw[0] = 1;
    for (double v : raw) m.values.push_back(static_cast<float>(v / total));
    m.provenance = static_cast<teacher::Provenance>(i % 3);
    m.prompt = static_cast<teacher::PromptId>(i % 5);
    const fs::path tim = dir / ("m" + std::to_string(i) + ".tim");
    teacher::write_tim(m, tim.string());
    const std::vector<std::uint8_t> bytes = file_bytes(tim);
    const teacher::TeacherMap back = teacher::read_tim(tim.string());
    tim_ok += (teacher::encode_tim(back) == bytes && back.values == m.values && back.provenance == m.provenance &&
               back.prompt == m.prompt)
                  ? 1
                  : 0;

    ModelConfig c;
    c.image_size = 4 * small(rng);
    c.channels = small(rng);
    c.heads = small(rng);
    c.embed_dim = c.heads * small(rng);
    c.layers = small(rng);
    c.classes = side(rng);
    c.gcn_hidden = small(rng);
    c.mlp_hidden = side(rng);
    c.gate_mode = i % 2 ? GateMode::convex : GateMode::sigmoid;
    Model<float> model = init_model<float>(c, static_cast<std::uint64_t>(i));
    model.stage = static_cast<Stage>(i % 3);
    const fs::path ck = dir / ("m" + std::to_string(i) + ".ckpt");
    save_checkpoint(model, ck.string());
    const Model<float> loaded = load_checkpoint(ck.string());
    bool same = loaded.config == model.config && loaded.stage == model.stage &&
                loaded.params.size() == model.params.size() && encode_checkpoint(loaded) == file_bytes(ck);
    for (const auto& [name, p] : model.params) {
      const auto it = loaded.params.find(name);
      same = same && it != loaded.params.end() && it->second.rows() == p.rows() && it->second.cols() == p.cols() &&
             std::memcmp(it->second.data(), p.data(), sizeof(float) * static_cast<std::size_t>(p.size())) == 0;
    }
    ckpt_ok += same ? 1 : 0;
  }
  int rejected = 0, total = 0;
  std::string codes;
  for (const auto& entry : fs::directory_iterator(IVIT_FIXTURE_DIR)) {
    const std::string name = entry.path().filename().string();
    if (!name.starts_with("corrupt_")) continue;
    ++total;
    const int code = invoke({"visualize", "--tim", entry.path().string(), "--out", (dir / "x.pgm").string()});
    rejected += code == cli::kInvalid ? 1 : 0;
    if (code != cli::kInvalid) codes += " " + name + "->" + std::to_string(code);
  }
  return {tim_ok == 100 && ckpt_ok == 100 && total > 0 && rejected == total,
          fmt("TIM %d/100, checkpoint %d/100 bitwise; corrupt headers exit 2: %d/%d%s", tim_ok, ckpt_ok, rejected,
              total, codes.c_str())};
}

Verdict determinism() {
  const fs::path dir = scratch("determinism");
  std::ofstream(dir / "run.cfg") << "model.embed_dim = 16\nmodel.heads = 2\nmodel.layers = 2\nmodel.mlp_hidden = 32\n"
                                    "data.samples = 20\ntrain.pretrain_epochs = 2\ntrain.epochs = 2\ntrain.batch = 16\n"
                                    "train.seed = 5\n";
  std::string err;
  const int a = invoke({"train", "--config", (dir / "run.cfg").string(), "--out", (dir / "a").string()}, &err);
  const int b = invoke({"train", "--config", (dir / "run.cfg").string(), "--out", (dir / "b").string()}, &err);
  const auto la = file_bytes(dir / "a" / "metrics.log"), lb = file_bytes(dir / "b" / "metrics.log");
  return {a == 0 && b == 0 && !la.empty() && la == lb,
          fmt("exit codes %d/%d, logs %zu and %zu bytes, %s%s", a, b, la.size(), lb.size(),
              la == lb ? "identical" : "different", err.empty() ? "" : (" (" + err + ")").c_str())};
}

struct Criterion {
  const char* name;
  std::function<Verdict()> check;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria{
      {"harsanyi-reconstruction", harsanyi_reconstruction},
      {"gradient-fidelity", gradient_fidelity},
      {"distribution-invariants", distribution_invariants},
      {"baseline-reduction", baseline_reduction},
      {"convergence", convergence},
      {"alignment", alignment},
      {"ablation-ordering", ablation},
      {"round-trips", round_trips},
      {"determinism", determinism},
  };
  std::set<std::string> only(argv + 1, argv + argc);
  int failed = 0;
  for (const Criterion& c : criteria) {
    if (!only.empty() && !only.count(c.name)) continue;
    Verdict v;
    try {
      v = c.check();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s %s: %s\n", v.pass ? "PASS" : "FAIL", c.name, v.detail.c_str());
    std::fflush(stdout);
    failed += v.pass ? 0 : 1;
  }
  return failed == 0 ? 0 : 1;
}
