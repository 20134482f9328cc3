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

// Synthetic glyph-localization task with ground-truth teacher maps.
//
// Each class is a fixed binary glyph spanning 2x2 patches. A sample places
// its class glyph at a random patch-aligned position over a textured
// background; the glyph's four patches form the sample's patch mask, and the
// teacher map is mask_teacher(mask, noise_sigma, per-sample seed).

#include <algorithm>
#include <bit>
#include <cstdio>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ivit/binary_io.hpp"
#include "ivit/error.hpp"
#include "ivit/model/ivit.hpp"
#include "ivit/teacher/teacher_map.hpp"
#include "ivit/teacher/tim.hpp"

namespace ivit::train {

inline constexpr int kImageSize = 32;
inline constexpr int kPatchSize = 4;
inline constexpr int kGlyphPatches = 2;
inline constexpr int kMaxClasses = 16;
// Image intensities: glyph pixels near kGlyphLevel over a 0.2-centred
// texture of amplitude kTextureAmplitude plus uniform noise of width kPixelNoise.
inline constexpr double kGlyphLevel = 0.85;
inline constexpr double kTextureAmplitude = 0.1;
inline constexpr double kPixelNoise = 0.15;

struct DatasetSpec {
  std::string kind = "synthetic";
  int classes = 10;
  int samples_per_class = 200;
  double noise_sigma = 0.0;
  double train_fraction = 0.8;

  void validate() const {
    require(kind == "synthetic", "data.kind '" + kind + "' is not supported (only synthetic)");
    require(classes >= 1 && classes <= kMaxClasses, "data.classes must lie in [1, 16]");
    require(samples_per_class >= 2, "data.samples must be at least 2 per class");
    require(noise_sigma >= 0.0 && std::isfinite(noise_sigma), "data.noise_sigma must be >= 0");
    require(train_fraction > 0.0 && train_fraction < 1.0, "data.split must lie in (0, 1)");
  }
};

struct SyntheticSample {
  Image<float> image;
  int label = 0;
  std::vector<std::uint8_t> mask;  // one entry per patch, 1 on glyph patches
  teacher::TeacherMap teacher;
  std::uint64_t seed = 0;
  bool train = true;
};

struct Dataset {
  DatasetSpec spec;
  std::uint64_t seed = 0;
  std::vector<SyntheticSample> samples;

  std::vector<std::size_t> indices(bool train) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < samples.size(); ++i)
      if (samples[i].train == train) out.push_back(i);
    return out;
  }
};

inline constexpr int kGlyphPixels = kGlyphPatches * kPatchSize;

// Glyph bit patterns (bit y * 8 + x), identical for every dataset seed.
// Each 4x4 quarter lights exactly 8 pixels, so the four glyph patches are
// equally bright; classes differ in layout and sit at Hamming distance >= 20.
inline bool balanced_quarters(std::uint64_t g) {
  for (int qy = 0; qy < kGlyphPatches; ++qy)
    for (int qx = 0; qx < kGlyphPatches; ++qx) {
      int lit = 0;
      for (int y = 0; y < kPatchSize; ++y)
        for (int x = 0; x < kPatchSize; ++x) lit += static_cast<int>((g >> ((qy * kPatchSize + y) * kGlyphPixels + qx * kPatchSize + x)) & 1U);
      if (lit != kPatchSize * kPatchSize / 2) return false;
    }
  return true;
}

inline const std::vector<std::uint64_t>& glyph_table() {
  static const std::vector<std::uint64_t> table = [] {
    std::vector<std::uint64_t> out;
    std::mt19937_64 rng(0x61797068ULL);
    while (out.size() < static_cast<std::size_t>(kMaxClasses)) {
      const std::uint64_t g = rng();
      if (!balanced_quarters(g)) continue;
      bool distinct = true;
      for (std::uint64_t other : out) distinct = distinct && std::popcount(g ^ other) >= 20;
      if (distinct) out.push_back(g);
    }
    return out;
  }();
  return table;
}

inline std::uint64_t sample_seed(std::uint64_t dataset_seed, std::size_t index) {
  std::uint64_t z = dataset_seed * 0x9e3779b97f4a7c15ULL + index + 1;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Seed of the teacher-map noise for a sample.
inline std::uint64_t teacher_seed(std::uint64_t sample_seed) { return sample_seed ^ 0x7465616368ULL; }

inline SyntheticSample make_sample(int label, std::uint64_t seed, double noise_sigma) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int grid = kImageSize / kPatchSize;
  SyntheticSample s;
  s.label = label;
  s.seed = seed;
  s.image.height = s.image.width = kImageSize;
  s.image.channels = 1;
  s.image.pixels.resize(static_cast<std::size_t>(kImageSize) * kImageSize);

  // Oriented sinusoidal texture plus pixel noise.
  const double freq = 0.3 + 0.5 * unit(rng);
  const double angle = std::numbers::pi * unit(rng);
  const double phase = 2.0 * std::numbers::pi * unit(rng);
  for (int y = 0; y < kImageSize; ++y)
    for (int x = 0; x < kImageSize; ++x) {
      const double wave = std::sin(freq * (std::cos(angle) * x + std::sin(angle) * y) + phase);
      s.image.pixels[static_cast<std::size_t>(y) * kImageSize + x] =
          static_cast<float>(0.2 + kTextureAmplitude * wave + kPixelNoise * (unit(rng) - 0.5));
    }

  std::uniform_int_distribution<int> pos(0, grid - kGlyphPatches);
  const int gy = pos(rng), gx = pos(rng);
  const std::uint64_t glyph = glyph_table()[static_cast<std::size_t>(label)];
  for (int y = 0; y < kGlyphPixels; ++y)
    for (int x = 0; x < kGlyphPixels; ++x) {
      if (((glyph >> (y * kGlyphPixels + x)) & 1U) == 0) continue;
      const std::size_t at = static_cast<std::size_t>(gy * kPatchSize + y) * kImageSize + gx * kPatchSize + x;
      s.image.pixels[at] = static_cast<float>(kGlyphLevel + 0.1 * (unit(rng) - 0.5));
    }

  s.mask.assign(static_cast<std::size_t>(grid) * grid, 0);
  for (int dy = 0; dy < kGlyphPatches; ++dy)
    for (int dx = 0; dx < kGlyphPatches; ++dx) s.mask[static_cast<std::size_t>((gy + dy) * grid + gx + dx)] = 1;
  s.teacher = teacher::mask_teacher(s.mask, noise_sigma, teacher_seed(seed), {grid, grid});
  return s;
}

// Balanced: sample i has class i % classes. Within each class the first
// train_fraction of its samples are training samples, the rest validation.
inline Dataset gen_synthetic(const DatasetSpec& spec, std::uint64_t seed) {
  spec.validate();
  Dataset d;
  d.spec = spec;
  d.seed = seed;
  const std::size_t total = static_cast<std::size_t>(spec.classes) * static_cast<std::size_t>(spec.samples_per_class);
  const auto train_per_class = static_cast<int>(std::lround(spec.train_fraction * spec.samples_per_class));
  d.samples.reserve(total);
  for (std::size_t i = 0; i < total; ++i) {
    const int label = static_cast<int>(i % static_cast<std::size_t>(spec.classes));
    const auto rank = static_cast<int>(i / static_cast<std::size_t>(spec.classes));
    SyntheticSample s = make_sample(label, sample_seed(seed, i), spec.noise_sigma);
    s.train = rank < train_per_class;
    d.samples.push_back(std::move(s));
  }
  return d;
}

inline ModelConfig synthetic_model_config(const DatasetSpec& spec) {
  ModelConfig c;
  c.image_size = kImageSize;
  c.patch_size = kPatchSize;
  c.channels = 1;
  c.classes = spec.classes;
  return c;
}

// Dataset cache: <dir>/manifest.txt plus per sample a raw .bin (label,
// height, width, f32 pixels, u8 mask) and its teacher as a .tim file.
inline std::string sample_stem(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "sample_%05zu", index);
  return buf;
}

inline void write_dataset(const Dataset& d, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ostringstream manifest;
  manifest.precision(17);
  manifest << "ivit-dataset 1\n";
  manifest << "kind " << d.spec.kind << "\n";
  manifest << "classes " << d.spec.classes << "\n";
  manifest << "samples " << d.spec.samples_per_class << "\n";
  manifest << "noise_sigma " << d.spec.noise_sigma << "\n";
  manifest << "split " << d.spec.train_fraction << "\n";
  manifest << "seed " << d.seed << "\n";
  manifest << "count " << d.samples.size() << "\n";
  for (std::size_t i = 0; i < d.samples.size(); ++i) {
    const SyntheticSample& s = d.samples[i];
    manifest << sample_stem(i) << " " << (s.train ? "train" : "val") << " " << s.label << " " << s.seed << "\n";
    io::ByteWriter w;
    w.u32(static_cast<std::uint32_t>(s.label));
    w.u32(static_cast<std::uint32_t>(s.image.height));
    w.u32(static_cast<std::uint32_t>(s.image.width));
    for (float p : s.image.pixels) w.f32(p);
    for (std::uint8_t m : s.mask) w.u8(m);
    io::write_file((dir / (sample_stem(i) + ".bin")).string(), w.bytes());
    teacher::write_tim(s.teacher, (dir / (sample_stem(i) + ".tim")).string());
  }
  std::ofstream out(dir / "manifest.txt", std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + (dir / "manifest.txt").string());
  out << manifest.str();
}

inline Dataset read_dataset(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.txt";
  std::ifstream in(manifest_path);
  if (!in) throw ValidationError("dataset: cannot open " + manifest_path.string());
  Dataset d;
  std::string key, value;
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != "ivit-dataset" || version != 1) throw FormatError(manifest_path.string() + ": not a dataset manifest");
  std::size_t count = 0;
  auto expect = [&](const char* k) {
    if (!(in >> key) || key != k) throw FormatError(manifest_path.string() + ": expected key '" + k + "'");
  };
  expect("kind");
  in >> d.spec.kind;
  expect("classes");
  in >> d.spec.classes;
  expect("samples");
  in >> d.spec.samples_per_class;
  expect("noise_sigma");
  in >> d.spec.noise_sigma;
  expect("split");
  in >> d.spec.train_fraction;
  expect("seed");
  in >> d.seed;
  expect("count");
  in >> count;
  if (!in) throw FormatError(manifest_path.string() + ": malformed header");
  const int grid = kImageSize / kPatchSize;
  for (std::size_t i = 0; i < count; ++i) {
    std::string stem, split;
    SyntheticSample s;
    if (!(in >> stem >> split >> s.label >> s.seed)) {
      throw FormatError(manifest_path.string() + ": truncated at sample line " + std::to_string(i));
    }
    if (split != "train" && split != "val") throw FormatError(manifest_path.string() + ": bad split '" + split + "'");
    s.train = split == "train";
    const auto bin_path = (dir / (stem + ".bin")).string();
    const std::vector<std::uint8_t> bytes = io::read_file(bin_path);
    io::ByteReader r(bytes, bin_path);
    const auto label = static_cast<int>(r.u32());
    s.image.height = static_cast<int>(r.u32());
    s.image.width = static_cast<int>(r.u32());
    s.image.channels = 1;
    if (label != s.label || s.image.height != kImageSize || s.image.width != kImageSize) {
      throw FormatError(bin_path + ": header disagrees with manifest");
    }
    s.image.pixels.resize(static_cast<std::size_t>(kImageSize) * kImageSize);
    for (float& p : s.image.pixels) p = r.f32();
    s.mask.resize(static_cast<std::size_t>(grid) * grid);
    for (std::uint8_t& m : s.mask) m = r.u8();
    if (r.remaining() != 0) throw FormatError(bin_path + ": trailing bytes");
    s.teacher = teacher::read_tim((dir / (stem + ".tim")).string());
    d.samples.push_back(std::move(s));
  }
  return d;
}

}  // namespace ivit::train
