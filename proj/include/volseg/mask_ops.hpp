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

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <utility>
#include <vector>

#include "volseg/volume.hpp"

namespace volseg::maskops {

struct Point {
  double r = 0, c = 0;
};

struct Component {
  int label = 0;
  std::size_t area = 0;
  int min_row = 0, min_col = 0;  // first pixel in raster order
};

/// 4-connected labelling in raster order. Labels start at 1; background is 0.
inline std::vector<int> label_components(const BinaryMask& m, std::vector<Component>* comps = nullptr) {
  const int H = m.rows(), W = m.cols();
  std::vector<int> lab(m.size(), 0);
  std::vector<int> stack;
  int next = 0;
  if (comps) comps->clear();
  for (int r = 0; r < H; ++r) {
    for (int c = 0; c < W; ++c) {
      const int idx = r * W + c;
      if (!m.pixels()[idx] || lab[idx]) continue;
      ++next;
      Component comp{next, 0, r, c};
      lab[idx] = next;
      stack.push_back(idx);
      while (!stack.empty()) {
        const int p = stack.back();
        stack.pop_back();
        ++comp.area;
        const int pr = p / W, pc = p % W;
        const std::array<std::pair<int, int>, 4> nb{{{pr - 1, pc}, {pr + 1, pc}, {pr, pc - 1}, {pr, pc + 1}}};
        for (auto [nr, nc] : nb) {
          if (nr < 0 || nr >= H || nc < 0 || nc >= W) continue;
          const int q = nr * W + nc;
          if (m.pixels()[q] && !lab[q]) {
            lab[q] = next;
            stack.push_back(q);
          }
        }
      }
      if (comps) comps->push_back(comp);
    }
  }
  return lab;
}

namespace detail {
// 1D squared-distance transform (lower envelope of parabolas). f must hold
// at least one small value; "infinite" entries use a large finite sentinel.
inline void edt_1d(const std::vector<double>& f, std::vector<double>& d, int n) {
  std::vector<int> v(n);
  std::vector<double> z(n + 1);
  int k = 0;
  v[0] = 0;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  for (int q = 1; q < n; ++q) {
    double s = ((f[q] + double(q) * q) - (f[v[k]] + double(v[k]) * v[k])) / (2.0 * q - 2.0 * v[k]);
    while (s <= z[k]) {
      --k;
      s = ((f[q] + double(q) * q) - (f[v[k]] + double(v[k]) * v[k])) / (2.0 * q - 2.0 * v[k]);
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    const double dq = q - v[k];
    d[q] = dq * dq + f[v[k]];
  }
}
}  // namespace detail

/// Squared Euclidean distance from every pixel to the nearest pixel where
/// `inside[i]` is false. The frame outside the image counts as outside.
inline std::vector<double> squared_distance_to_outside(const std::vector<std::uint8_t>& inside, int H, int W) {
  constexpr double kInf = 1e18;
  // Pad by one pixel on every side so the image border is a boundary.
  const int PH = H + 2, PW = W + 2;
  std::vector<double> g(static_cast<std::size_t>(PH) * PW, 0.0);
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c) g[(r + 1) * PW + c + 1] = inside[r * W + c] ? kInf : 0.0;
  std::vector<double> f(std::max(PH, PW)), d(std::max(PH, PW));
  for (int c = 0; c < PW; ++c) {
    for (int r = 0; r < PH; ++r) f[r] = g[r * PW + c];
    detail::edt_1d(f, d, PH);
    for (int r = 0; r < PH; ++r) g[r * PW + c] = d[r];
  }
  for (int r = 0; r < PH; ++r) {
    for (int c = 0; c < PW; ++c) f[c] = g[r * PW + c];
    detail::edt_1d(f, d, PW);
    for (int c = 0; c < PW; ++c) g[r * PW + c] = d[c];
  }
  std::vector<double> out(static_cast<std::size_t>(H) * W);
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c) out[r * W + c] = g[(r + 1) * PW + c + 1];
  return out;
}

/// One step with the 3x3 cross structuring element. Erosion treats pixels
/// outside the image as foreground so the frame does not eat into masks.
inline BinaryMask dilate(const BinaryMask& m, int iterations = 1) {
  BinaryMask cur = m;
  const int H = m.rows(), W = m.cols();
  for (int it = 0; it < iterations; ++it) {
    BinaryMask nxt = cur;
    for (int r = 0; r < H; ++r)
      for (int c = 0; c < W; ++c) {
        if (cur(r, c)) continue;
        const bool hit = (r > 0 && cur(r - 1, c)) || (r + 1 < H && cur(r + 1, c)) || (c > 0 && cur(r, c - 1)) ||
                         (c + 1 < W && cur(r, c + 1));
        if (hit) nxt.set(r, c, true);
      }
    cur = std::move(nxt);
  }
  return cur;
}

inline BinaryMask erode(const BinaryMask& m, int iterations = 1) {
  BinaryMask cur = m;
  const int H = m.rows(), W = m.cols();
  for (int it = 0; it < iterations; ++it) {
    BinaryMask nxt = cur;
    for (int r = 0; r < H; ++r)
      for (int c = 0; c < W; ++c) {
        if (!cur(r, c)) continue;
        const bool keep = (r == 0 || cur(r - 1, c)) && (r + 1 == H || cur(r + 1, c)) && (c == 0 || cur(r, c - 1)) &&
                          (c + 1 == W || cur(r, c + 1));
        if (!keep) nxt.set(r, c, false);
      }
    cur = std::move(nxt);
  }
  return cur;
}

/// Even-odd scanline fill of a closed polygon, sampled at pixel centres.
inline BinaryMask rasterize_polygon(const std::vector<Point>& poly, int H, int W) {
  BinaryMask out(H, W);
  if (poly.size() < 3) return out;
  std::vector<double> xs;
  for (int r = 0; r < H; ++r) {
    const double y = r;
    xs.clear();
    for (std::size_t i = 0; i < poly.size(); ++i) {
      const Point& a = poly[i];
      const Point& b = poly[(i + 1) % poly.size()];
      if ((a.r <= y && b.r > y) || (b.r <= y && a.r > y)) {
        xs.push_back(a.c + (y - a.r) / (b.r - a.r) * (b.c - a.c));
      }
    }
    std::sort(xs.begin(), xs.end());
    for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
      const int c0 = std::max(0, static_cast<int>(std::ceil(xs[k])));
      const int c1 = std::min(W - 1, static_cast<int>(std::floor(xs[k + 1])));
      for (int c = c0; c <= c1; ++c) out.set(r, c, true);
    }
  }
  return out;
}

/// Ordered outer boundary of the component containing `start` (which must be
/// its first pixel in raster order), by Moore-neighbour tracing.
inline std::vector<Point> trace_boundary(const BinaryMask& m, int start_r, int start_c) {
  static constexpr std::array<int, 8> dr{-1, -1, 0, 1, 1, 1, 0, -1};
  static constexpr std::array<int, 8> dc{0, 1, 1, 1, 0, -1, -1, -1};
  auto fg = [&](int r, int c) { return m.in_bounds(r, c) && m(r, c); };
  std::vector<Point> out{{double(start_r), double(start_c)}};
  int r = start_r, c = start_c;
  int dir = 2;  // the west neighbour of a raster-order first pixel is background
  int first = -1;
  const std::size_t limit = 4 * m.size() + 8;
  for (std::size_t step = 0; step < limit; ++step) {
    int found = -1;
    for (int k = 0; k < 8; ++k) {
      const int d = (dir + 5 + k) % 8;  // clockwise from the backtrack neighbour
      if (fg(r + dr[d], c + dc[d])) {
        found = d;
        break;
      }
    }
    if (found < 0) break;  // isolated pixel
    if (r == start_r && c == start_c && first >= 0 && found == first) break;
    if (first < 0) first = found;
    r += dr[found];
    c += dc[found];
    dir = found;
    if (r != start_r || c != start_c) out.push_back({double(r), double(c)});
  }
  return out;
}

/// Separable Gaussian blur of a binary mask into [0,1] values.
inline std::vector<double> gaussian_blur(const BinaryMask& m, double sigma) {
  const int H = m.rows(), W = m.cols();
  const int rad = std::max(1, static_cast<int>(std::ceil(3 * sigma)));
  std::vector<double> k(2 * rad + 1);
  double ks = 0;
  for (int i = -rad; i <= rad; ++i) ks += k[i + rad] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : k) v /= ks;
  std::vector<double> tmp(m.size()), out(m.size());
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c) {
      double s = 0;
      for (int i = -rad; i <= rad; ++i) {
        const int cc = std::clamp(c + i, 0, W - 1);
        s += k[i + rad] * m(r, cc);
      }
      tmp[r * W + c] = s;
    }
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c) {
      double s = 0;
      for (int i = -rad; i <= rad; ++i) {
        const int rr = std::clamp(r + i, 0, H - 1);
        s += k[i + rad] * tmp[rr * W + c];
      }
      out[r * W + c] = s;
    }
  return out;
}

inline BinaryMask mask_or(const BinaryMask& a, const BinaryMask& b) {
  BinaryMask out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.pixels()[i] |= b.pixels()[i];
  return out;
}

inline BinaryMask mask_and_not(const BinaryMask& a, const BinaryMask& b) {
  BinaryMask out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.pixels()[i] &= static_cast<std::uint8_t>(!b.pixels()[i]);
  return out;
}

}  // namespace volseg::maskops
