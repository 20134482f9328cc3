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

// Checkpoint layout (all integers u32 little-endian, values f32 LE):
//   "IVIT" | version | image_size patch_size channels embed_dim heads layers
//   classes gate_mode gcn_hidden mlp_hidden stage | tensor count |
//   per tensor: name length, name bytes, rank, dims..., values (row-major)

#include <cstdint>
#include <string>
#include <vector>

#include "ivit/binary_io.hpp"
#include "ivit/error.hpp"
#include "ivit/model/params.hpp"

namespace ivit {

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::vector<std::uint8_t> encode_checkpoint(const Model<float>& model) {
  io::ByteWriter w;
  w.raw("IVIT");
  w.u32(kCheckpointVersion);
  const ModelConfig& c = model.config;
  for (int v : {c.image_size, c.patch_size, c.channels, c.embed_dim, c.heads, c.layers, c.classes})
    w.u32(static_cast<std::uint32_t>(v));
  w.u32(c.gate_mode == GateMode::sigmoid ? 0 : 1);
  w.u32(static_cast<std::uint32_t>(c.gcn_hidden));
  w.u32(static_cast<std::uint32_t>(c.mlp_hidden));
  w.u32(static_cast<std::uint32_t>(model.stage));
  w.u32(static_cast<std::uint32_t>(model.params.size()));
  for (const auto& [name, m] : model.params) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.raw(name);
    w.u32(2);
    w.u32(static_cast<std::uint32_t>(m.rows()));
    w.u32(static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.size(); ++i) w.f32(m.data()[i]);
  }
  return w.bytes();
}

inline Model<float> decode_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& source) {
  io::ByteReader r(bytes, source);
  if (bytes.size() < 4 || r.raw(4) != "IVIT") throw FormatError(source + ": bad checkpoint magic");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError(source + ": unsupported checkpoint version " + std::to_string(version));
  }
  Model<float> m;
  ModelConfig& c = m.config;
  c.image_size = static_cast<int>(r.u32());
  c.patch_size = static_cast<int>(r.u32());
  c.channels = static_cast<int>(r.u32());
  c.embed_dim = static_cast<int>(r.u32());
  c.heads = static_cast<int>(r.u32());
  c.layers = static_cast<int>(r.u32());
  c.classes = static_cast<int>(r.u32());
  const std::uint32_t gate = r.u32();
  if (gate > 1) throw FormatError(source + ": unknown gate mode code " + std::to_string(gate));
  c.gate_mode = gate == 0 ? GateMode::sigmoid : GateMode::convex;
  c.gcn_hidden = static_cast<int>(r.u32());
  c.mlp_hidden = static_cast<int>(r.u32());
  const std::uint32_t stage = r.u32();
  if (stage > 2) throw FormatError(source + ": unknown stage code " + std::to_string(stage));
  m.stage = static_cast<Stage>(stage);
  try {
    c.validate();
  } catch (const ValidationError& e) {
    throw FormatError(source + ": invalid config block: " + e.what());
  }
  // Reference layout for the decoded config; every tensor must match it.
  const Model<float> expected = init_model<float>(c, 0);
  const std::uint32_t count = r.u32();
  if (count != expected.params.size()) {
    throw FormatError(source + ": expected " + std::to_string(expected.params.size()) + " tensors, found " +
                      std::to_string(count));
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t len = r.u32();
    if (len > 256) throw FormatError(source + ": implausible tensor name length " + std::to_string(len));
    const std::string name = r.raw(len);
    auto it = expected.params.find(name);
    if (it == expected.params.end()) throw FormatError(source + ": unexpected tensor '" + name + "'");
    const std::uint32_t rank = r.u32();
    if (rank != 2) throw FormatError(source + ": tensor '" + name + "' has rank " + std::to_string(rank));
    const auto rows = static_cast<Eigen::Index>(r.u32());
    const auto cols = static_cast<Eigen::Index>(r.u32());
    if (rows != it->second.rows() || cols != it->second.cols()) {
      throw FormatError(source + ": tensor '" + name + "' has shape " + std::to_string(rows) + "x" +
                        std::to_string(cols));
    }
    Matrix<float> value(rows, cols);
    for (Eigen::Index k = 0; k < value.size(); ++k) value.data()[k] = r.f32();
    if (!m.params.emplace(name, std::move(value)).second) {
      throw FormatError(source + ": duplicate tensor '" + name + "'");
    }
  }
  if (r.remaining() != 0) throw FormatError(source + ": trailing bytes after last tensor");
  return m;
}

inline void save_checkpoint(const Model<float>& model, const std::string& path) {
  io::write_file(path, encode_checkpoint(model));
}

inline Model<float> load_checkpoint(const std::string& path) {
  return decode_checkpoint(io::read_file(path), path);
}

}  // namespace ivit
