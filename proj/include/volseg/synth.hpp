// Copyright 2026 The volseg Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Seeded synthetic CT-like suite: a drifting ellipsoid or a blob of merged
// ellipsoids (the target) plus a fainter distractor, in int16 HU.

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "volseg/volume.hpp"
#include "volseg/volume_io.hpp"

namespace volseg {

struct SynthConfig {
  int rows = 64;
  int cols = 64;
  int min_slices = 32;
  int max_slices = 64;
  double object_hu = 200;
  double distractor_hu = 90;
  double background_hu = 0;
  double noise_hu = 20;
};

struct SynthCase {
  Volume volume;  // int16 HU values
  MaskSequence gt;
};

namespace synth_detail {
struct Ellipsoid {
  double z0, r0, c0;     // centre at z0
  double dz, dr, dc;     // drift per slice of the in-plane centre (dz unused)
  double rz, rr, rc;     // semi-axes
  bool contains(double z, double r, double c) const {
    const double cr = r0 + dr * (z - z0), cc = c0 + dc * (z - z0);
    const double a = (z - z0) / rz, b = (r - cr) / rr, d = (c - cc) / rc;
    return a * a + b * b + d * d <= 1.0;
  }
};
}  // namespace synth_detail

/// Case `index` of the suite seeded with `seed`. Even cases are single
/// ellipsoids, odd cases blobs of 2-3 overlapping ellipsoids.
inline SynthCase make_synth_case(std::uint64_t seed, int index, const SynthConfig& cfg = {}) {
  using synth_detail::Ellipsoid;
  std::mt19937_64 rng(seed * 1000003ULL + static_cast<std::uint64_t>(index));
  auto U = [&](double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); };
  const int N = std::uniform_int_distribution<int>(cfg.min_slices, cfg.max_slices)(rng);
  const int H = cfg.rows, W = cfg.cols;

  std::vector<Ellipsoid> parts;
  const double zc = U(0.4, 0.6) * N;
  const double rz = U(0.28, 0.4) * N;
  Ellipsoid main{zc, U(0.4, 0.6) * H, U(0.4, 0.6) * W, 0, U(-0.25, 0.25), U(-0.25, 0.25), rz, U(0.14, 0.22) * H,
                 U(0.14, 0.22) * W};
  parts.push_back(main);
  if (index % 2 == 1) {
    const int extra = std::uniform_int_distribution<int>(1, 2)(rng);
    for (int k = 0; k < extra; ++k) {
      Ellipsoid e = main;
      e.z0 = zc + U(-0.3, 0.3) * rz;
      e.r0 = main.r0 + U(-0.6, 0.6) * main.rr;
      e.c0 = main.c0 + U(-0.6, 0.6) * main.rc;
      e.rz = rz * U(0.5, 0.8);
      e.rr = main.rr * U(0.5, 0.8);
      e.rc = main.rc * U(0.5, 0.8);
      parts.push_back(e);
    }
  }
  // Distractor sits in a corner away from the target.
  const bool top = main.r0 > H / 2.0, left = main.c0 > W / 2.0;
  Ellipsoid distractor{U(0.3, 0.7) * N, (top ? 0.18 : 0.82) * H, (left ? 0.18 : 0.82) * W, 0, 0, 0, U(0.3, 0.5) * N,
                       0.1 * H, 0.1 * W};

  std::normal_distribution<double> noise(0.0, cfg.noise_hu);
  std::vector<float> vox(static_cast<std::size_t>(N) * H * W);
  std::vector<BinaryMask> masks;
  masks.reserve(N);
  for (int z = 0; z < N; ++z) {
    BinaryMask m(H, W, z + 1);
    for (int r = 0; r < H; ++r)
      for (int c = 0; c < W; ++c) {
        bool in = false;
        for (const auto& e : parts) in = in || e.contains(z, r, c);
        double hu = cfg.background_hu;
        if (distractor.contains(z, r, c)) hu = cfg.distractor_hu;
        if (in) hu = cfg.object_hu;
        hu += noise(rng);
        vox[(static_cast<std::size_t>(z) * H + r) * W + c] = static_cast<float>(std::lround(std::clamp(hu, -1024.0, 3071.0)));
        if (in) m.set(r, c, true);
      }
    masks.push_back(std::move(m));
  }
  return {Volume(N, H, W, std::move(vox), Spacing{2.5, 1.0, 1.0}, DType::int16, "synth-" + std::to_string(index)),
          MaskSequence(std::move(masks))};
}

inline std::vector<SynthCase> make_synth_suite(std::uint64_t seed, int count, const SynthConfig& cfg = {}) {
  std::vector<SynthCase> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) out.push_back(make_synth_case(seed, i, cfg));
  return out;
}

/// Writes case_NNN/{header.json, voxels.raw, gt.json} under `dir`.
inline void write_synth_suite(const std::vector<SynthCase>& suite, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < suite.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "case_%03zu", i);
    const auto sub = dir / name;
    save_volume(suite[i].volume, sub);
    export_masks(suite[i].gt, sub / "gt.json");
  }
}

/// Loads every case_* directory (sorted by name) that carries a gt.json.
inline std::vector<SynthCase> read_suite(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> subs;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_directory() && std::filesystem::exists(e.path() / "gt.json")) subs.push_back(e.path());
  std::sort(subs.begin(), subs.end());
  std::vector<SynthCase> out;
  for (const auto& s : subs) out.push_back({load_volume(s), import_masks(s / "gt.json")});
  return out;
}

}  // namespace volseg
