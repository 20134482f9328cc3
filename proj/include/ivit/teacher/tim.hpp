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

// TIM teacher-map interchange file:
//   "TIM1" | version u32 = 1 | grid height u32 | grid width u32 |
//   provenance u8 | prompt id u8 | 2 reserved zero bytes | N values f32
// All multi-byte fields little-endian.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ivit/binary_io.hpp"
#include "ivit/error.hpp"
#include "ivit/teacher/teacher_map.hpp"

namespace ivit::teacher {

inline constexpr std::uint32_t kTimVersion = 1;
inline constexpr std::size_t kTimHeaderBytes = 20;
// Largest accepted grid side; keeps corrupt headers from requesting huge reads.
inline constexpr std::uint32_t kTimMaxSide = 4096;

inline std::vector<std::uint8_t> encode_tim(const TeacherMap& map) {
  check_teacher_invariants(map);
  io::ByteWriter w;
  w.raw("TIM1");
  w.u32(kTimVersion);
  w.u32(static_cast<std::uint32_t>(map.grid.height));
  w.u32(static_cast<std::uint32_t>(map.grid.width));
  w.u8(static_cast<std::uint8_t>(map.provenance));
  w.u8(static_cast<std::uint8_t>(map.prompt));
  w.u8(0);
  w.u8(0);
  for (float v : map.values) w.f32(v);
  return w.bytes();
}

inline TeacherMap decode_tim(const std::vector<std::uint8_t>& bytes, const std::string& source) {
  io::ByteReader r(bytes, source);
  if (bytes.size() < 4 || r.raw(4) != "TIM1") throw FormatError(source + ": bad TIM magic");
  const std::uint32_t version = r.u32();
  if (version != kTimVersion) throw FormatError(source + ": unsupported TIM version " + std::to_string(version));
  const std::uint32_t gh = r.u32();
  const std::uint32_t gw = r.u32();
  if (gh == 0 || gw == 0 || gh > kTimMaxSide || gw > kTimMaxSide) {
    throw FormatError(source + ": invalid grid " + std::to_string(gh) + "x" + std::to_string(gw));
  }
  const std::uint8_t provenance = r.u8();
  const std::uint8_t prompt = r.u8();
  if (provenance > 2) throw FormatError(source + ": unknown provenance code " + std::to_string(provenance));
  if (prompt > 4) throw FormatError(source + ": unknown prompt id code " + std::to_string(prompt));
  if (r.u8() != 0 || r.u8() != 0) throw FormatError(source + ": reserved header bytes are not zero");
  TeacherMap map;
  map.grid = {static_cast<int>(gh), static_cast<int>(gw)};
  map.provenance = static_cast<Provenance>(provenance);
  map.prompt = static_cast<PromptId>(prompt);
  const std::size_t n = map.grid.size();
  if (r.remaining() != 4 * n) {
    throw FormatError(source + ": payload holds " + std::to_string(r.remaining()) + " bytes, expected " +
                      std::to_string(4 * n));
  }
  map.values.resize(n);
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    map.values[i] = r.f32();
    if (!std::isfinite(map.values[i]) || map.values[i] < 0.0f) {
      throw FormatError(source + ": value " + std::to_string(i) + " is negative or non-finite");
    }
    total += map.values[i];
  }
  if (std::abs(total - 1.0) > 1e-3) {
    throw FormatError(source + ": values sum to " + std::to_string(total) + ", not 1");
  }
  return map;
}

inline void write_tim(const TeacherMap& map, const std::string& path) { io::write_file(path, encode_tim(map)); }

inline TeacherMap read_tim(const std::string& path) { return decode_tim(io::read_file(path), path); }

}  // namespace ivit::teacher
