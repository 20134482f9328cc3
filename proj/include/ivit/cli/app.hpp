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

// Command-line entry point. Exit status: 0 success, 1 usage error,
// 2 validation or format error, 3 runtime failure.

#include <array>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ivit/cli/run_config.hpp"
#include "ivit/error.hpp"
#include "ivit/eval/eval.hpp"
#include "ivit/interaction/harsanyi.hpp"
#include "ivit/model/checkpoint.hpp"
#include "ivit/teacher/tim.hpp"
#include "ivit/train/synthetic.hpp"
#include "ivit/train/trainer.hpp"

namespace ivit::cli {

enum ExitStatus : int { kOk = 0, kUsage = 1, kInvalid = 2, kRuntime = 3 };

namespace fs = std::filesystem;

namespace detail {

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw std::runtime_error("short write to '" + path.string() + "'");
}

inline void make_dir(const fs::path& dir, const std::string& flag) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw UsageError(flag + ": cannot create directory '" + dir.string() + "': " + ec.message());
}

inline void need_file(const std::string& path, const std::string& flag) {
  if (!fs::is_regular_file(path)) throw UsageError(flag + ": no such file '" + path + "'");
}

inline void need_dir(const std::string& path, const std::string& flag) {
  if (!fs::is_directory(path)) throw UsageError(flag + ": no such directory '" + path + "'");
}

inline train::AblationSwitches parse_switches(const std::string& tag) {
  train::AblationSwitches sw;
  if (tag.size() != 11 || tag.compare(0, 2, "IQ") != 0 || tag.compare(3, 3, "-IC") != 0 ||
      tag.compare(7, 3, "-GC") != 0) {
    throw UsageError("--switches: expected a tag like IQ1-IC1-GC1, got '" + tag + "'");
  }
  auto bit = [&](char c) {
    if (c != '0' && c != '1') throw UsageError("--switches: expected 0 or 1 in '" + tag + "'");
    return c == '1';
  };
  sw.iq = bit(tag[2]);
  sw.ic = bit(tag[6]);
  sw.gc = bit(tag[10]);
  return sw;
}

inline ForwardOptions options_for(const Model<float>& model, const train::AblationSwitches& sw) {
  return train::eval_options(sw, model.stage == Stage::finetune);
}

inline std::vector<std::size_t> split_indices(const train::Dataset& data, const std::string& split) {
  if (split == "val") return data.indices(false);
  if (split == "train") return data.indices(true);
  if (split == "all") {
    std::vector<std::size_t> all(data.samples.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return all;
  }
  throw UsageError("--split: expected val, train or all, got '" + split + "'");
}

inline train::Dataset load_data(const std::string& dir) {
  need_dir(dir, "--data");
  return train::read_dataset(dir);
}

inline Model<float> load_model(const std::string& path) {
  need_file(path, "--ckpt");
  return load_checkpoint(path);
}

// Runs one configuration; writes metrics.log (and checkpoints when asked)
// under `out` and returns the log text.
inline train::TrainResult train_run(const RunConfig& cfg, const train::Dataset& data, std::optional<Model<float>> initial,
                                    const fs::path& out, bool checkpoints, std::ostream* echo) {
  const std::string header = format_run_config(cfg) + "\n";
  if (echo) *echo << header << std::flush;
  train::TrainHooks hooks;
  if (echo) hooks.on_record = [echo](const std::string& line) { *echo << line << "\n" << std::flush; };
  train::TrainResult r = train::train(cfg, data, std::move(initial), header, hooks);
  write_text(out / "metrics.log", r.log);
  if (checkpoints) {
    save_checkpoint(r.final_model, (out / "final.ckpt").string());
    save_checkpoint(r.best_model, (out / "best.ckpt").string());
  }
  return r;
}

inline int cmd_train(const std::string& config, const std::string& resume, const std::string& out_dir,
                     std::ostream& out) {
  const RunConfig cfg = read_run_config(config);
  std::optional<Model<float>> initial;
  if (!resume.empty()) {
    need_file(resume, "--resume");
    initial = load_checkpoint(resume);
    if (!(initial->config == cfg.model)) {
      throw ValidationError("--resume: checkpoint '" + resume + "' does not match the model.* settings of " + config);
    }
  }
  make_dir(out_dir, "--out");
  const train::Dataset data = train::gen_synthetic(cfg.data, cfg.seed);
  make_dir(fs::path(out_dir) / "data", "--out");
  train::write_dataset(data, fs::path(out_dir) / "data");
  train_run(cfg, data, std::move(initial), out_dir, true, &out);
  return kOk;
}

inline int cmd_eval(const std::string& ckpt, const std::string& data_dir, const std::string& teachers,
                    const std::string& humans, const std::string& split, const std::string& switches,
                    std::ostream& out) {
  const Model<float> model = load_model(ckpt);
  const train::Dataset data = load_data(data_dir);
  if (!teachers.empty()) need_dir(teachers, "--teachers");
  if (!humans.empty()) need_dir(humans, "--human");
  const ForwardOptions options = options_for(model, parse_switches(switches));
  std::vector<MatrixF> inputs;
  std::vector<int> labels;
  std::vector<teacher::TeacherMap> teacher_maps, human_maps;
  for (std::size_t i : split_indices(data, split)) {
    const train::SyntheticSample& s = data.samples[i];
    inputs.push_back(extract_patches<float>(s.image, model.config));
    labels.push_back(s.label);
    const std::string stem = train::sample_stem(i);
    if (teachers.empty()) {
      teacher_maps.push_back(s.teacher);
    } else {
      const std::string path = (fs::path(teachers) / (stem + ".tim")).string();
      need_file(path, "--teachers");
      teacher_maps.push_back(teacher::read_tim(path));
    }
    if (!humans.empty()) {
      const std::string path = (fs::path(humans) / (stem + ".txt")).string();
      need_file(path, "--human");
      human_maps.push_back(eval::human_map(eval::read_annotation(path)));
    }
  }
  require(!inputs.empty(), "eval: the " + split + " split is empty");
  const eval::EvalReport report =
      eval::evaluate(model, inputs, labels, teacher_maps, options, humans.empty() ? nullptr : &human_maps);
  out << eval::format_report(report);
  return kOk;
}

inline int cmd_teacher_gen(const std::string& data_dir, const std::string& out_dir, double sigma, std::ostream& out) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw ValidationError("--sigma: must be a finite value >= 0");
  const train::Dataset data = load_data(data_dir);
  make_dir(out_dir, "--out");
  const teacher::GridShape grid = teacher::square_grid(data.samples.empty() ? 0 : data.samples.front().mask.size());
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    const train::SyntheticSample& s = data.samples[i];
    const teacher::TeacherMap map = teacher::mask_teacher(s.mask, sigma, train::teacher_seed(s.seed), grid);
    teacher::write_tim(map, (fs::path(out_dir) / (train::sample_stem(i) + ".tim")).string());
  }
  out << "wrote " << data.samples.size() << " teacher maps to " << out_dir << "\n";
  return kOk;
}

inline std::vector<double> read_oracle_file(const std::string& path, int n) {
  need_file(path, "--file");
  std::ifstream in(path);
  std::vector<double> values;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    try {
      values.push_back(parse_double(line));
    } catch (const ValidationError& e) {
      throw FormatError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  const std::size_t want = std::size_t{1} << n;
  if (values.size() != want) {
    throw FormatError(path + ": holds " + std::to_string(values.size()) + " values, --n " + std::to_string(n) +
                      " needs " + std::to_string(want));
  }
  return values;
}

inline int cmd_decompose(int n, const std::string& oracle_name, const std::string& file, std::size_t top,
                         std::ostream& out) {
  if (n < 1 || n > interaction::kMaxVariables) {
    throw ValidationError("--n: must lie in [1, " + std::to_string(interaction::kMaxVariables) + "]");
  }
  interaction::MaskedOracle oracle;
  if (oracle_name == "addl") {
    oracle = [](interaction::Subset s) { return static_cast<double>(std::popcount(s)); };
  } else if (oracle_name == "and") {
    if (n < 2) throw ValidationError("--oracle and: needs --n >= 2");
    oracle = [](interaction::Subset s) { return (s & 3U) == 3U ? 1.0 : 0.0; };
  } else if (oracle_name == "file") {
    if (file.empty()) throw UsageError("--oracle file: needs --file PATH");
    const std::vector<double> values = read_oracle_file(file, n);
    oracle = [values](interaction::Subset s) { return values[s]; };
  } else {
    throw UsageError("--oracle: expected addl, and or file, got '" + oracle_name + "'");
  }
  const interaction::HarsanyiTable table = interaction::harsanyi_and(oracle, n);
  char hex[32];
  auto emit = [&](interaction::Subset s, double effect) {
    std::snprintf(hex, sizeof hex, "0x%x", s);
    out << "S=" << hex << " I=" << format_double(effect) << "\n";
  };
  if (top == 0) {
    for (std::size_t s = 0; s < table.effects.size(); ++s) emit(static_cast<interaction::Subset>(s), table.effects[s]);
  } else {
    for (const interaction::RankedEffect& r : interaction::sparsify(table, top)) emit(r.subset, r.effect);
  }
  return kOk;
}

inline int cmd_visualize(const std::string& tim, const std::string& out_path, const std::string& scale, int factor,
                         std::ostream& out) {
  const eval::HeatmapScale mode = [&] {
    try {
      return eval::parse_heatmap_scale(scale);
    } catch (const ValidationError& e) {
      throw UsageError(std::string("--scale: ") + e.what());
    }
  }();
  if (factor < 1) throw UsageError("--factor: must be at least 1");
  need_file(tim, "--tim");
  const teacher::TeacherMap map = teacher::read_tim(tim);
  write_text(out_path, eval::heatmap(map.values, map.grid, mode, factor));
  out << "wrote " << out_path << "\n";
  return kOk;
}

inline int cmd_gate_report(const std::string& ckpt, const std::string& data_dir, const std::string& split,
                           const std::string& switches, std::ostream& out) {
  const Model<float> model = load_model(ckpt);
  const train::Dataset data = load_data(data_dir);
  const ForwardOptions options = options_for(model, parse_switches(switches));
  if (!options.interaction) {
    throw ValidationError("gate-report: '" + ckpt + "' has no active interaction pathway (not fine-tuned or IQ off)");
  }
  std::vector<MatrixF> inputs;
  for (std::size_t i : split_indices(data, split)) inputs.push_back(extract_patches<float>(data.samples[i].image, model.config));
  out << eval::format_trend(eval::gate_trend(model, inputs, options));
  return kOk;
}

inline std::vector<train::AblationSwitches> switch_grid() {
  std::vector<train::AblationSwitches> out;
  for (int code = 7; code >= 0; --code) out.push_back({(code & 4) != 0, (code & 2) != 0, (code & 1) != 0});
  return out;
}

inline int cmd_ablate(const std::string& config, bool grid, const std::string& out_dir, std::ostream& out) {
  const RunConfig base = read_run_config(config);
  make_dir(out_dir, "--out");
  const train::Dataset data = train::gen_synthetic(base.data, base.seed);
  const std::vector<train::AblationSwitches> combos =
      grid ? switch_grid() : std::vector<train::AblationSwitches>{base.switches};
  std::string summary = "# final and best validation accuracy per switch setting, seed " + std::to_string(base.seed) + "\n";
  for (const train::AblationSwitches& sw : combos) {
    RunConfig cfg = base;
    cfg.switches = sw;
    const fs::path dir = fs::path(out_dir) / sw.tag();
    make_dir(dir, "--out");
    const train::TrainResult r = train_run(cfg, data, std::nullopt, dir, false, nullptr);
    char line[160];
    const train::EpochRecord& last = r.records.back();
    std::snprintf(line, sizeof line, "switches=%s final_val_acc=%.4f best_val_acc=%.4f align_loss=%.6f\n",
                  sw.tag().c_str(), last.val_acc, r.best_val_acc, last.align_loss);
    summary += line;
    out << line << std::flush;
  }
  write_text(fs::path(out_dir) / "summary.txt", summary);
  return kOk;
}

}  // namespace detail

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Interaction Vision Transformer toolkit"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  std::string config, resume, out_dir = "run", ckpt, data, teachers, humans, split = "val", tim, image,
                      scale = "per-map", oracle, oracle_file, switches = "IQ1-IC1-GC1";
  double sigma = 0.0;
  int n = 0, factor = 8;
  std::size_t top = 0;
  bool grid = false;

  CLI::App* train = app.add_subcommand("train", "Train a model from a run configuration");
  train->add_option("--config", config, "run configuration file")->required();
  train->add_option("--resume", resume, "checkpoint to continue from");
  train->add_option("--out", out_dir, "output directory")->capture_default_str();

  CLI::App* evaluate = app.add_subcommand("eval", "Accuracy and cosine agreement with teacher/human maps");
  evaluate->add_option("--ckpt", ckpt, "checkpoint")->required();
  evaluate->add_option("--data", data, "dataset directory")->required();
  evaluate->add_option("--teachers", teachers, "directory of <sample>.tim teacher maps");
  evaluate->add_option("--human", humans, "directory of <sample>.txt human annotations");
  evaluate->add_option("--split", split, "val, train or all")->capture_default_str();
  evaluate->add_option("--switches", switches, "switch tag the model was fine-tuned with")->capture_default_str();

  CLI::App* teacher_gen = app.add_subcommand("teacher-gen", "Write TIM teacher maps from ground-truth masks");
  teacher_gen->add_option("--data", data, "dataset directory")->required();
  teacher_gen->add_option("--out", out_dir, "output directory")->required();
  teacher_gen->add_option("--sigma", sigma, "half-normal noise scale")->capture_default_str();

  CLI::App* decompose = app.add_subcommand("decompose", "Harsanyi AND-interaction table of an oracle");
  decompose->add_option("--n", n, "number of variables")->required();
  decompose->add_option("--oracle", oracle, "addl, and or file")->required();
  decompose->add_option("--file", oracle_file, "values v(S) in bitmask order, one per line");
  decompose->add_option("--top", top, "list only the k largest effects");

  CLI::App* visualize = app.add_subcommand("visualize", "Render a TIM teacher map as a PGM heatmap");
  visualize->add_option("--tim", tim, "teacher map")->required();
  visualize->add_option("--out", image, "output image")->required();
  visualize->add_option("--scale", scale, "per-map or global")->capture_default_str();
  visualize->add_option("--factor", factor, "pixels per patch side")->capture_default_str();

  CLI::App* gate_report = app.add_subcommand("gate-report", "Per-layer mean gate values");
  gate_report->add_option("--ckpt", ckpt, "checkpoint")->required();
  gate_report->add_option("--data", data, "dataset directory")->required();
  gate_report->add_option("--split", split, "val, train or all")->capture_default_str();
  gate_report->add_option("--switches", switches, "switch tag the model was fine-tuned with")->capture_default_str();

  CLI::App* ablate = app.add_subcommand("ablate", "Train under ablation switch settings");
  ablate->add_option("--config", config, "run configuration file")->required();
  ablate->add_flag("--grid", grid, "run all 8 switch combinations");
  ablate->add_option("--out", out_dir, "output directory")->capture_default_str();

  try {
    if (argc >= 2 && argv[1][0] != '-') {
      const std::string sub = argv[1];
      bool known = false;
      for (const CLI::App* c : app.get_subcommands({})) known = known || c->get_name() == sub;
      if (!known) {
        err << "error: unknown subcommand '" << sub << "'\n";
        return kUsage;
      }
    }
    try {
      app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
      out << app.help();
      return kOk;
    } catch (const CLI::CallForAllHelp&) {
      out << app.help("", CLI::AppFormatMode::All);
      return kOk;
    } catch (const CLI::ParseError& e) {
      err << "error: " << e.what() << "\n";
      return kUsage;
    }
    if (*train) return detail::cmd_train(config, resume, out_dir, out);
    if (*evaluate) return detail::cmd_eval(ckpt, data, teachers, humans, split, switches, out);
    if (*teacher_gen) return detail::cmd_teacher_gen(data, out_dir, sigma, out);
    if (*decompose) return detail::cmd_decompose(n, oracle, oracle_file, top, out);
    if (*visualize) return detail::cmd_visualize(tim, image, scale, factor, out);
    if (*gate_report) return detail::cmd_gate_report(ckpt, data, split, switches, out);
    if (*ablate) return detail::cmd_ablate(config, grid, out_dir, out);
    err << "error: no subcommand\n";
    return kUsage;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kInvalid;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntime;
  }
}

}  // namespace ivit::cli
