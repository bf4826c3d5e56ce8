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

// Defective-mask generation: randomized transformations of ground-truth
// masks, plus the labelled pair dataset used to train the quality network.

#include <array>
#include <cmath>
#include <functional>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "volseg/mask_ops.hpp"
#include "volseg/volume.hpp"

namespace volseg {

enum class TransformKind { AddShapes = 0, Morphology, BoundaryPerturb, Smooth, RemoveShapes, MergeShapes };

inline constexpr std::array<const char*, 6> kTransformNames{"AddShapes",   "Morphology",   "BoundaryPerturb",
                                                            "Smooth",      "RemoveShapes", "MergeShapes"};

struct IntRange {
  int lo = 0, hi = 0;
};

struct CorruptionSpec {
  /// Indexed by TransformKind.
  std::array<double, 6> probs{0.1, 0.1, 0.3, 0.2, 0.1, 0.2};
  IntRange dilation_iters{10, 30};
  int erosion_iters = 10;
  IntRange boundary_displacement{10, 30};

  void validate() const {
    double s = 0;
    for (double p : probs) {
      if (!(p >= 0.0) || !std::isfinite(p)) throw ParameterError("corruption probabilities must be finite and >= 0");
      s += p;
    }
    if (std::abs(s - 1.0) > 1e-9) throw ParameterError("corruption probabilities must sum to 1");
    if (dilation_iters.lo < 1 || dilation_iters.lo > dilation_iters.hi) throw ParameterError("bad dilation range");
    if (erosion_iters < 1) throw ParameterError("bad erosion iterations");
    if (boundary_displacement.lo < 1 || boundary_displacement.lo > boundary_displacement.hi) {
      throw ParameterError("bad displacement range");
    }
  }
};

inline TransformKind sample_transformation(std::mt19937_64& rng, const CorruptionSpec& spec) {
  spec.validate();
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  double acc = 0;
  int last = 0;
  for (int k = 0; k < 6; ++k) {
    if (spec.probs[k] <= 0) continue;
    last = k;
    acc += spec.probs[k];
    if (u < acc) return static_cast<TransformKind>(k);
  }
  return static_cast<TransformKind>(last);
}

/// Parameters actually drawn for one corruption; exposed so callers can audit
/// that every draw lies inside the spec's ranges.
struct CorruptionTrace {
  TransformKind kind = TransformKind::AddShapes;
  int iterations = 0;  // Morphology
  bool dilated = false;
  int displacement = 0;  // BoundaryPerturb
};

namespace corrupt_detail {

struct Stats {
  double area = 0;
  double cr = 0, cc = 0;
  int r0 = 0, r1 = 0, c0 = 0, c1 = 0;
};

inline Stats mask_stats(const BinaryMask& m) {
  Stats s{0, 0, 0, m.rows(), -1, m.cols(), -1};
  for (int r = 0; r < m.rows(); ++r)
    for (int c = 0; c < m.cols(); ++c)
      if (m(r, c)) {
        s.area += 1;
        s.cr += r;
        s.cc += c;
        s.r0 = std::min(s.r0, r);
        s.r1 = std::max(s.r1, r);
        s.c0 = std::min(s.c0, c);
        s.c1 = std::max(s.c1, c);
      }
  if (s.area > 0) {
    s.cr /= s.area;
    s.cc /= s.area;
  }
  return s;
}

/// A rectangle, triangle or 5-8 vertex polygon of roughly `area` pixels
/// centred at (cr, cc).
inline int checked_draw(int v, int lo, int hi, const char* what) {
  if (v < lo || v > hi) throw StateError(std::string("corrupt_mask: ") + what + " drawn outside its range");
  return v;
}

inline BinaryMask random_shape(double cr, double cc, double area, int H, int W, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double radius = std::max(1.5, std::sqrt(area / std::numbers::pi));
  const double theta = u(rng) * 2 * std::numbers::pi;
  std::vector<maskops::Point> poly;
  const int kind = std::uniform_int_distribution<int>(0, 2)(rng);
  if (kind == 0) {
    const double aspect = 0.5 + u(rng);
    const double hw = radius * std::sqrt(std::numbers::pi * aspect) / 2, hh = radius * std::sqrt(std::numbers::pi / aspect) / 2;
    for (auto [sr, sc] : {std::pair{-1, -1}, {-1, 1}, {1, 1}, {1, -1}}) {
      const double dr = sr * hh, dc = sc * hw;
      poly.push_back({cr + dr * std::cos(theta) - dc * std::sin(theta), cc + dr * std::sin(theta) + dc * std::cos(theta)});
    }
  } else {
    const int n = kind == 1 ? 3 : std::uniform_int_distribution<int>(5, 8)(rng);
    const double scale = kind == 1 ? 1.55 : 1.1;
    for (int i = 0; i < n; ++i) {
      const double a = theta + 2 * std::numbers::pi * (i + 0.3 * (u(rng) - 0.5)) / n;
      const double rr = radius * scale * (kind == 1 ? 1.0 : 0.7 + 0.6 * u(rng));
      poly.push_back({cr + rr * std::sin(a), cc + rr * std::cos(a)});
    }
  }
  return maskops::rasterize_polygon(poly, H, W);
}

inline std::pair<double, double> random_fg_pixel(const BinaryMask& m, std::mt19937_64& rng) {
  std::vector<std::size_t> fg;
  for (std::size_t i = 0; i < m.size(); ++i)
    if (m.pixels()[i]) fg.push_back(i);
  const std::size_t i = fg[std::uniform_int_distribution<std::size_t>(0, fg.size() - 1)(rng)];
  return {double(i / m.cols()), double(i % m.cols())};
}

inline std::vector<maskops::Point> boundary_points(const BinaryMask& m) {
  std::vector<maskops::Point> pts;
  for (int r = 0; r < m.rows(); ++r)
    for (int c = 0; c < m.cols(); ++c) {
      if (!m(r, c)) continue;
      const bool edge = r == 0 || c == 0 || r + 1 == m.rows() || c + 1 == m.cols() || !m(r - 1, c) || !m(r + 1, c) ||
                        !m(r, c - 1) || !m(r, c + 1);
      if (edge) pts.push_back({double(r), double(c)});
    }
  return pts;
}

}  // namespace corrupt_detail

/// Applies one randomly drawn transformation. Empty masks are returned
/// unchanged.
inline BinaryMask corrupt_mask(const BinaryMask& gt, std::mt19937_64& rng, const CorruptionSpec& spec,
                               CorruptionTrace* trace = nullptr) {
  using namespace corrupt_detail;
  const TransformKind kind = sample_transformation(rng, spec);
  CorruptionTrace tr{kind};
  if (trace) *trace = tr;
  if (gt.empty()) return gt;
  const int H = gt.rows(), W = gt.cols();
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Stats st = mask_stats(gt);
  BinaryMask out = gt;

  switch (kind) {
    case TransformKind::AddShapes: {
      const int n = std::uniform_int_distribution<int>(1, 3)(rng);
      const double mr = 0.25 * (st.r1 - st.r0 + 1) + 2, mc = 0.25 * (st.c1 - st.c0 + 1) + 2;
      for (int i = 0; i < n; ++i) {
        const double cr = st.r0 - mr + u(rng) * (st.r1 - st.r0 + 2 * mr);
        const double cc = st.c0 - mc + u(rng) * (st.c1 - st.c0 + 2 * mc);
        const double area = st.area * (0.1 + 0.4 * u(rng));
        out = maskops::mask_or(out, random_shape(cr, cc, area, H, W, rng));
      }
      break;
    }
    case TransformKind::Morphology: {
      tr.dilated = u(rng) < 0.5;
      if (tr.dilated) {
        tr.iterations = checked_draw(
            std::uniform_int_distribution<int>(spec.dilation_iters.lo, spec.dilation_iters.hi)(rng),
            spec.dilation_iters.lo, spec.dilation_iters.hi, "dilation iterations");
        out = maskops::dilate(gt, tr.iterations);
      } else {
        tr.iterations = spec.erosion_iters;
        out = maskops::erode(gt, tr.iterations);
      }
      break;
    }
    case TransformKind::BoundaryPerturb: {
      const IntRange& dr = spec.boundary_displacement;
      tr.displacement =
          checked_draw(std::uniform_int_distribution<int>(dr.lo, dr.hi)(rng), dr.lo, dr.hi, "displacement");
      std::vector<maskops::Component> comps;
      maskops::label_components(gt, &comps);
      BinaryMask perturbed(H, W);
      for (const auto& comp : comps) {
        const auto ring = maskops::trace_boundary(gt, comp.min_row, comp.min_col);
        if (ring.size() < 3) {
          perturbed.set(comp.min_row, comp.min_col, true);
          continue;
        }
        // Resample to roughly one vertex per 4 boundary pixels, then jitter.
        const std::size_t nv = std::max<std::size_t>(6, ring.size() / 4);
        std::vector<maskops::Point> poly;
        for (std::size_t i = 0; i < nv; ++i) {
          maskops::Point p = ring[i * ring.size() / nv];
          const double mag = u(rng) * tr.displacement;
          if (mag > tr.displacement) throw StateError("corrupt_mask: vertex moved beyond displacement");
          const double ang = u(rng) * 2 * std::numbers::pi;
          p.r += mag * std::sin(ang);
          p.c += mag * std::cos(ang);
          poly.push_back(p);
        }
        perturbed = maskops::mask_or(perturbed, maskops::rasterize_polygon(poly, H, W));
      }
      out = perturbed;
      break;
    }
    case TransformKind::Smooth: {
      const double sigma = 1.5 + 2.5 * u(rng);
      const double thr = 0.35 + 0.3 * u(rng);
      const auto blurred = maskops::gaussian_blur(gt, sigma);
      for (std::size_t i = 0; i < out.size(); ++i) out.pixels()[i] = blurred[i] >= thr ? 1 : 0;
      break;
    }
    case TransformKind::RemoveShapes: {
      std::vector<maskops::Component> comps;
      const auto lab = maskops::label_components(gt, &comps);
      if (comps.size() > 1 && u(rng) < 0.5) {
        const int victim = comps[std::uniform_int_distribution<std::size_t>(0, comps.size() - 1)(rng)].label;
        for (std::size_t i = 0; i < out.size(); ++i)
          if (lab[i] == victim) out.pixels()[i] = 0;
      } else {
        const auto [cr, cc] = random_fg_pixel(gt, rng);
        out = maskops::mask_and_not(gt, random_shape(cr, cc, st.area * (0.15 + 0.35 * u(rng)), H, W, rng));
      }
      break;
    }
    case TransformKind::MergeShapes: {
      const auto edge = boundary_points(gt);
      const int n = std::uniform_int_distribution<int>(1, 3)(rng);
      for (int i = 0; i < n; ++i) {
        const auto& p = edge[std::uniform_int_distribution<std::size_t>(0, edge.size() - 1)(rng)];
        const double area = st.area * (0.1 + 0.3 * u(rng));
        out = maskops::mask_or(out, random_shape(p.r, p.c, area, H, W, rng));
      }
      break;
    }
  }
  out.set_slice_index(gt.slice_index());
  if (trace) *trace = tr;
  return out;
}

// ---------------------------------------------------------------------------
// Defect pair dataset

struct DefectPair {
  std::vector<float> slice;  // normalized intensities, rows x cols
  BinaryMask mask_a, mask_b;
  int label = 0;  // 1 iff dice(mask_a, gt) > dice(mask_b, gt)
  double dice_a = 0, dice_b = 0;
  int volume = 0;
  int slice_index = 1;
};

inline int label_pair(const BinaryMask& a, const BinaryMask& b, const BinaryMask& gt) {
  return dice(a, gt) > dice(b, gt) ? 1 : 0;
}

/// Produces per-volume baseline predictions (e.g. a single-round run of the
/// pipeline without fusion). May be empty, in which case only corruptions
/// serve as candidates.
using BaselinePredictor = std::function<MaskSequence(const Volume&, const MaskSequence& gt, std::uint64_t seed)>;

struct DefectDatasetConfig {
  std::uint64_t seed = 11;
  int pairs_per_slice = 1;
  CorruptionSpec corruption{};
  bool skip_identical = true;
};

inline std::vector<DefectPair> build_defect_dataset(const std::vector<Volume>& volumes,
                                                    const std::vector<MaskSequence>& gts,
                                                    const BaselinePredictor& baseline,
                                                    const DefectDatasetConfig& cfg = {}) {
  if (volumes.size() != gts.size()) throw ValidationError("build_defect_dataset: volumes and gts misaligned");
  std::mt19937_64 rng(cfg.seed);
  std::vector<DefectPair> out;
  for (std::size_t v = 0; v < volumes.size(); ++v) {
    const Volume& vol = volumes[v];
    const MaskSequence& gt = gts[v];
    if (gt.size() != vol.slices() || gt.rows() != vol.rows() || gt.cols() != vol.cols()) {
      throw ValidationError("build_defect_dataset: gt does not match volume " + std::to_string(v));
    }
    std::optional<MaskSequence> base;
    if (baseline) base = baseline(vol, gt, cfg.seed + v);
    for (int i = 1; i <= vol.slices(); ++i) {
      std::vector<BinaryMask> cands{gt[i]};
      if (base) cands.push_back((*base)[i]);
      const int extra = base ? 2 : 3;
      for (int k = 0; k < extra; ++k) cands.push_back(corrupt_mask(gt[i], rng, cfg.corruption));
      std::uniform_int_distribution<std::size_t> pick(0, cands.size() - 1);
      for (int p = 0; p < cfg.pairs_per_slice; ++p) {
        const std::size_t a = pick(rng);
        std::size_t b = pick(rng);
        if (b == a) b = (a + 1) % cands.size();
        if (cfg.skip_identical && cands[a] == cands[b]) continue;
        DefectPair dp;
        dp.slice.assign(vol.slice(i).begin(), vol.slice(i).end());
        dp.mask_a = cands[a];
        dp.mask_b = cands[b];
        dp.label = label_pair(cands[a], cands[b], gt[i]);
        dp.dice_a = dice(cands[a], gt[i]);
        dp.dice_b = dice(cands[b], gt[i]);
        dp.volume = static_cast<int>(v);
        dp.slice_index = i;
        out.push_back(std::move(dp));
      }
    }
  }
  return out;
}

}  // namespace volseg
