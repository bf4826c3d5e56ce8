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

// Volume packages and mask exports.
//
// A volume package is a directory holding
//   header.json  {"version":1,"dims":[N,H,W],"spacing":[sz,sy,sx],
//                 "dtype":"float32"|"int16","byte_order":"little"}
//   voxels.raw   slice-major, row-major within a slice, little-endian
//
// masks.json is {"dims":[N,H,W],"rle":[[runs...], ...]} where each slice's
// runs alternate starting with the count of zeros, in row-major order.

#include <array>
#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "json.hpp"
#include "volseg/volume.hpp"

namespace volseg {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace io_detail {

template <class U>
U to_little(U v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(U)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<U>(bytes);
  }
  return v;
}

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + p.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + p.string());
}

inline json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(what + ": " + e.what());
  }
}

inline std::vector<int> read_dims(const json& j, const std::string& what) {
  if (!j.contains("dims") || !j["dims"].is_array() || j["dims"].size() != 3) {
    throw FormatError(what + ": dims must be an array [N,H,W]");
  }
  std::vector<int> dims;
  for (const auto& d : j["dims"]) {
    if (!d.is_number_integer() || d.get<long>() < 1) throw FormatError(what + ": dims must be positive integers");
    dims.push_back(d.get<int>());
  }
  return dims;
}

}  // namespace io_detail

/// Parses a package from its two members held in memory.
inline Volume parse_volume(const std::string& header_text, const std::string& raw, const std::string& id) {
  const json h = io_detail::parse_json(header_text, "header.json");
  if (!h.is_object() || h.value("version", 0) != 1) throw FormatError("header.json: unsupported version");
  const auto dims = io_detail::read_dims(h, "header.json");
  Spacing sp;
  if (h.contains("spacing")) {
    const auto& s = h["spacing"];
    if (!s.is_array() || s.size() != 3 || !s[0].is_number() || !s[1].is_number() || !s[2].is_number()) {
      throw FormatError("header.json: spacing must be [sz,sy,sx]");
    }
    sp = {s[0].get<double>(), s[1].get<double>(), s[2].get<double>()};
  }
  const std::string dt = h.value("dtype", "");
  DType dtype;
  if (dt == "float32") {
    dtype = DType::float32;
  } else if (dt == "int16") {
    dtype = DType::int16;
  } else {
    throw FormatError("header.json: dtype must be float32 or int16");
  }
  if (h.value("byte_order", "little") != "little") throw FormatError("header.json: byte_order must be little");

  const std::size_t count = static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  const std::size_t elem = dtype == DType::float32 ? 4 : 2;
  if (raw.size() != count * elem) {
    throw TruncationError("voxels.raw holds " + std::to_string(raw.size()) + " bytes, header implies " +
                          std::to_string(count * elem));
  }
  std::vector<float> vox(count);
  for (std::size_t i = 0; i < count; ++i) {
    if (dtype == DType::float32) {
      std::uint32_t bits;
      std::memcpy(&bits, raw.data() + i * 4, 4);
      vox[i] = std::bit_cast<float>(io_detail::to_little(bits));
    } else {
      std::int16_t v;
      std::memcpy(&v, raw.data() + i * 2, 2);
      vox[i] = static_cast<float>(io_detail::to_little(v));
    }
  }
  return Volume(dims[0], dims[1], dims[2], std::move(vox), sp, dtype, id);
}

inline Volume load_volume(const fs::path& package) {
  return parse_volume(io_detail::read_file(package / "header.json"), io_detail::read_file(package / "voxels.raw"),
                      package.filename().string());
}

/// Writes `v` as a volume package in its source dtype. int16 packages require
/// integral voxel values in range.
inline void save_volume(const Volume& v, const fs::path& package) {
  std::error_code ec;
  fs::create_directories(package, ec);
  if (ec) throw IoError("cannot create " + package.string() + ": " + ec.message());
  json h = {{"version", 1},
            {"dims", {v.slices(), v.rows(), v.cols()}},
            {"spacing", {v.spacing().z, v.spacing().y, v.spacing().x}},
            {"dtype", dtype_name(v.source_dtype())},
            {"byte_order", "little"}};
  std::string raw;
  const auto& vox = v.voxels();
  if (v.source_dtype() == DType::float32) {
    raw.resize(vox.size() * 4);
    for (std::size_t i = 0; i < vox.size(); ++i) {
      const auto bits = io_detail::to_little(std::bit_cast<std::uint32_t>(vox[i]));
      std::memcpy(raw.data() + i * 4, &bits, 4);
    }
  } else {
    raw.resize(vox.size() * 2);
    for (std::size_t i = 0; i < vox.size(); ++i) {
      const float x = vox[i];
      if (x != std::round(x) || x < -32768.f || x > 32767.f) {
        throw ValidationError("int16 volume holds a non-integral or out-of-range voxel");
      }
      const auto s = io_detail::to_little(static_cast<std::int16_t>(x));
      std::memcpy(raw.data() + i * 2, &s, 2);
    }
  }
  io_detail::write_file(package / "header.json", h.dump(2));
  io_detail::write_file(package / "voxels.raw", raw);
}

/// clamp((x - lo) / (hi - lo), 0, 1) per voxel.
inline Volume normalize_intensity(const Volume& v, double window_lo = -100.0, double window_hi = 400.0) {
  if (!(window_lo < window_hi)) throw ParameterError("normalize_intensity: window_lo must be < window_hi");
  const double inv = 1.0 / (window_hi - window_lo);
  std::vector<float> out(v.voxels().size());
  std::transform(v.voxels().begin(), v.voxels().end(), out.begin(), [&](float x) {
    return static_cast<float>(std::clamp((static_cast<double>(x) - window_lo) * inv, 0.0, 1.0));
  });
  return Volume(v.slices(), v.rows(), v.cols(), std::move(out), v.spacing(), DType::float32, v.id());
}

// ---------------------------------------------------------------------------
// Run-length encoding

inline std::vector<std::uint32_t> rle_encode(const BinaryMask& m) {
  std::vector<std::uint32_t> runs;
  std::uint8_t cur = 0;
  std::uint32_t len = 0;
  for (auto px : m.pixels()) {
    if (px == cur) {
      ++len;
    } else {
      runs.push_back(len);
      cur = px;
      len = 1;
    }
  }
  runs.push_back(len);
  return runs;
}

inline BinaryMask rle_decode(const std::vector<std::uint32_t>& runs, int rows, int cols, int slice_index = 1) {
  BinaryMask m(rows, cols, slice_index);
  auto& px = m.pixels();
  std::size_t pos = 0;
  std::uint8_t val = 0;
  for (auto r : runs) {
    if (pos + r > px.size()) throw FormatError("rle runs exceed slice size");
    std::fill_n(px.begin() + static_cast<std::ptrdiff_t>(pos), r, val);
    pos += r;
    val ^= 1;
  }
  if (pos != px.size()) throw FormatError("rle runs do not cover the slice");
  return m;
}

inline json masks_to_json(const MaskSequence& m) {
  json rle = json::array();
  for (const auto& mask : m.masks()) rle.push_back(rle_encode(mask));
  return {{"dims", {m.size(), m.rows(), m.cols()}}, {"rle", std::move(rle)}};
}

inline MaskSequence masks_from_json(const json& j) {
  const auto dims = io_detail::read_dims(j, "masks.json");
  if (!j.contains("rle") || !j["rle"].is_array() || j["rle"].size() != static_cast<std::size_t>(dims[0])) {
    throw FormatError("masks.json: rle must hold one run list per slice");
  }
  std::vector<BinaryMask> masks;
  for (int k = 0; k < dims[0]; ++k) {
    const auto& runs = j["rle"][k];
    if (!runs.is_array()) throw FormatError("masks.json: run list must be an array");
    std::vector<std::uint32_t> r;
    for (const auto& v : runs) {
      if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long>() >= 0)) {
        throw FormatError("masks.json: run lengths must be non-negative integers");
      }
      r.push_back(v.get<std::uint32_t>());
    }
    masks.push_back(rle_decode(r, dims[1], dims[2], k + 1));
  }
  return MaskSequence(std::move(masks));
}

inline void export_masks(const MaskSequence& m, const fs::path& out) {
  io_detail::write_file(out, masks_to_json(m).dump());
}

inline MaskSequence import_masks(const fs::path& in) {
  return masks_from_json(io_detail::parse_json(io_detail::read_file(in), "masks.json"));
}

}  // namespace volseg
