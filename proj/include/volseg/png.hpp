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

// Minimal 8-bit grayscale / RGB PNG writer (zlib for deflate and CRC).

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "volseg/error.hpp"
#include "volseg/volume.hpp"

namespace volseg::png {

namespace detail {

inline void put_be32(std::string& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<char>((v >> s) & 0xff));
}

inline void chunk(std::string& out, const char type[4], const std::string& data) {
  put_be32(out, static_cast<std::uint32_t>(data.size()));
  std::string body(type, 4);
  body += data;
  out += body;
  const auto crc = ::crc32(0L, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size()));
  put_be32(out, static_cast<std::uint32_t>(crc));
}

}  // namespace detail

/// `channels` is 1 (gray) or 3 (RGB); pixels are row-major, interleaved.
inline std::string encode(std::span<const std::uint8_t> pixels, int width, int height, int channels) {
  if (width < 1 || height < 1 || (channels != 1 && channels != 3)) throw ParameterError("png: bad image geometry");
  if (pixels.size() != static_cast<std::size_t>(width) * height * channels) throw ValidationError("png: pixel count");
  std::string out("\x89PNG\r\n\x1a\n", 8);

  std::string ihdr;
  detail::put_be32(ihdr, static_cast<std::uint32_t>(width));
  detail::put_be32(ihdr, static_cast<std::uint32_t>(height));
  ihdr.push_back(8);                            // bit depth
  ihdr.push_back(channels == 1 ? 0 : 2);        // colour type
  ihdr.append("\0\0\0", 3);                     // compression, filter, interlace
  detail::chunk(out, "IHDR", ihdr);

  const std::size_t stride = static_cast<std::size_t>(width) * channels;
  std::string raw;
  raw.reserve((stride + 1) * height);
  for (int y = 0; y < height; ++y) {
    raw.push_back(0);  // filter: none
    raw.append(reinterpret_cast<const char*>(pixels.data() + y * stride), stride);
  }
  uLongf clen = compressBound(static_cast<uLong>(raw.size()));
  std::string z(clen, '\0');
  if (compress2(reinterpret_cast<Bytef*>(z.data()), &clen, reinterpret_cast<const Bytef*>(raw.data()),
                static_cast<uLong>(raw.size()), Z_BEST_SPEED) != Z_OK) {
    throw IoError("png: deflate failed");
  }
  z.resize(clen);
  detail::chunk(out, "IDAT", z);
  detail::chunk(out, "IEND", {});
  return out;
}

/// Normalized slice in [0,1] as gray, or as RGB with the mask blended in red
/// at `alpha` opacity.
inline std::string render_slice(std::span<const float> slice, int rows, int cols, const BinaryMask* overlay,
                                double alpha = 0.4) {
  auto gray = [](float v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)); };
  if (!overlay) {
    std::vector<std::uint8_t> px(slice.size());
    std::transform(slice.begin(), slice.end(), px.begin(), gray);
    return encode(px, cols, rows, 1);
  }
  if (overlay->rows() != rows || overlay->cols() != cols) throw ValidationError("png: overlay shape mismatch");
  std::vector<std::uint8_t> px(slice.size() * 3);
  for (std::size_t i = 0; i < slice.size(); ++i) {
    const double g = gray(slice[i]);
    const bool m = overlay->pixels()[i];
    px[3 * i + 0] = static_cast<std::uint8_t>(std::lround(m ? (1 - alpha) * g + alpha * 255 : g));
    px[3 * i + 1] = static_cast<std::uint8_t>(std::lround(m ? (1 - alpha) * g : g));
    px[3 * i + 2] = static_cast<std::uint8_t>(std::lround(m ? (1 - alpha) * g : g));
  }
  return encode(px, cols, rows, 3);
}

}  // namespace volseg::png
