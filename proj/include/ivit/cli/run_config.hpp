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

// Run configuration files: one `key = value` per line, `#` starts a comment.
// Every key has a default; unknown keys are errors.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "ivit/error.hpp"
#include "ivit/train/trainer.hpp"

namespace ivit::cli {

using RunConfig = train::TrainConfig;

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <class Int>
Int parse_int(const std::string& v) {
  Int out{};
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) throw ValidationError("expected an integer, got '" + v + "'");
  return out;
}

inline double parse_double(const std::string& v) {
  double out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size() || !std::isfinite(out)) {
    throw ValidationError("expected a finite number, got '" + v + "'");
  }
  return out;
}

inline bool parse_flag(const std::string& v) {
  if (v == "1" || v == "true" || v == "on") return true;
  if (v == "0" || v == "false" || v == "off") return false;
  throw ValidationError("expected 0 or 1, got '" + v + "'");
}

struct Key {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

inline const std::vector<std::pair<std::string, Key>>& keys() {
  static const std::vector<std::pair<std::string, Key>> table = [] {
    std::vector<std::pair<std::string, Key>> t;
    auto add_int = [&](const char* name, auto field) {
      t.push_back({name, {[field](RunConfig& c, const std::string& v) {
                            auto& ref = field(c);
                            ref = parse_int<std::remove_reference_t<decltype(ref)>>(v);
                          },
                          [field](RunConfig c) { return std::to_string(field(c)); }}});
    };
    auto add_double = [&](const char* name, auto field) {
      t.push_back({name, {[field](RunConfig& c, const std::string& v) { field(c) = parse_double(v); },
                          [field](RunConfig c) { return format_double(field(c)); }}});
    };
    auto add_flag = [&](const char* name, auto field) {
      t.push_back({name, {[field](RunConfig& c, const std::string& v) { field(c) = parse_flag(v); },
                          [field](RunConfig c) { return std::string(field(c) ? "1" : "0"); }}});
    };
    add_int("model.image_size", [](RunConfig& c) -> int& { return c.model.image_size; });
    add_int("model.patch_size", [](RunConfig& c) -> int& { return c.model.patch_size; });
    add_int("model.channels", [](RunConfig& c) -> int& { return c.model.channels; });
    add_int("model.embed_dim", [](RunConfig& c) -> int& { return c.model.embed_dim; });
    add_int("model.heads", [](RunConfig& c) -> int& { return c.model.heads; });
    add_int("model.layers", [](RunConfig& c) -> int& { return c.model.layers; });
    add_int("model.classes", [](RunConfig& c) -> int& { return c.model.classes; });
    t.push_back({"model.gate_mode", {[](RunConfig& c, const std::string& v) { c.model.gate_mode = parse_gate_mode(v); },
                                     [](const RunConfig& c) { return to_string(c.model.gate_mode); }}});
    add_int("model.gcn_hidden", [](RunConfig& c) -> int& { return c.model.gcn_hidden; });
    add_int("model.mlp_hidden", [](RunConfig& c) -> int& { return c.model.mlp_hidden; });
    t.push_back({"train.stage", {[](RunConfig& c, const std::string& v) { c.stage = train::parse_stage_mode(v); },
                                 [](const RunConfig& c) { return train::to_string(c.stage); }}});
    t.push_back({"train.freeze", {[](RunConfig& c, const std::string& v) { c.freeze = parse_freeze_policy(v); },
                                  [](const RunConfig& c) { return to_string(c.freeze); }}});
    add_int("train.pretrain_epochs", [](RunConfig& c) -> int& { return c.pretrain_epochs; });
    add_int("train.epochs", [](RunConfig& c) -> int& { return c.epochs; });
    add_int("train.batch", [](RunConfig& c) -> int& { return c.batch; });
    add_double("train.pretrain_lr", [](RunConfig& c) -> double& { return c.pretrain_lr; });
    add_double("train.lr", [](RunConfig& c) -> double& { return c.lr; });
    add_double("train.momentum", [](RunConfig& c) -> double& { return c.momentum; });
    add_double("train.lambda", [](RunConfig& c) -> double& { return c.lambda; });
    add_int("train.seed", [](RunConfig& c) -> std::uint64_t& { return c.seed; });
    t.push_back({"data.kind", {[](RunConfig& c, const std::string& v) { c.data.kind = v; },
                               [](const RunConfig& c) { return c.data.kind; }}});
    add_int("data.classes", [](RunConfig& c) -> int& { return c.data.classes; });
    add_int("data.samples", [](RunConfig& c) -> int& { return c.data.samples_per_class; });
    add_double("data.noise_sigma", [](RunConfig& c) -> double& { return c.data.noise_sigma; });
    add_double("data.split", [](RunConfig& c) -> double& { return c.data.train_fraction; });
    add_flag("switches.iq", [](RunConfig& c) -> bool& { return c.switches.iq; });
    add_flag("switches.ic", [](RunConfig& c) -> bool& { return c.switches.ic; });
    add_flag("switches.gc", [](RunConfig& c) -> bool& { return c.switches.gc; });
    return t;
  }();
  return table;
}

}  // namespace detail

// Parses and validates; `source` names the file in diagnostics.
inline RunConfig parse_run_config(const std::string& text, const std::string& source) {
  RunConfig cfg;
  std::map<std::string, int> seen;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string where = source + ":" + std::to_string(line_no);
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ValidationError(where + ": expected 'key = value'");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    const auto& table = detail::keys();
    const auto it = std::find_if(table.begin(), table.end(), [&](const auto& kv) { return kv.first == key; });
    if (it == table.end()) throw ValidationError(where + ": unknown key '" + key + "'");
    if (auto [prev, fresh] = seen.emplace(key, line_no); !fresh) {
      throw ValidationError(where + ": key '" + key + "' already set on line " + std::to_string(prev->second));
    }
    try {
      it->second.set(cfg, value);
    } catch (const ValidationError& e) {
      throw ValidationError(where + ": " + key + ": " + e.what());
    }
  }
  try {
    cfg.validate();
  } catch (const ValidationError& e) {
    throw ValidationError(source + ": " + e.what());
  }
  return cfg;
}

inline RunConfig read_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), path);
}

// Every key with its resolved value, in a fixed order; parses back to the
// same configuration.
inline std::string format_run_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& [name, key] : detail::keys()) out += name + " = " + key.get(cfg) + "\n";
  return out;
}

}  // namespace ivit::cli
