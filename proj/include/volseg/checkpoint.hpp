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

// Checkpoint container:
//
//   "VSEGCKPT"  8-byte magic
//   u32         format version (1)
//   u64         manifest length in bytes
//   manifest    UTF-8 JSON: kind, arch, seed, train_hash, arrays[{name, shape}]
//   payload     float32 little-endian arrays in manifest order
//
// All integers are little-endian.

#include <cstring>
#include <string>

#include "volseg/interact2d.hpp"
#include "volseg/mrf.hpp"
#include "volseg/propagator.hpp"
#include "volseg/volume_io.hpp"

namespace volseg {

inline constexpr char kCheckpointMagic[8] = {'V', 'S', 'E', 'G', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointInfo {
  std::string kind;  // "interactor" | "propagator" | "quality"
  nlohmann::json arch;
  std::uint64_t seed = 0;
  std::uint64_t train_hash = 0;
};

namespace ckpt_detail {

template <class U>
void put(std::string& out, U v) {
  v = io_detail::to_little(v);
  out.append(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class U>
U get(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(U) > in.size()) throw TruncationError("checkpoint truncated");
  U v;
  std::memcpy(&v, in.data() + pos, sizeof v);
  pos += sizeof v;
  return io_detail::to_little(v);
}

}  // namespace ckpt_detail

inline std::string encode_checkpoint(const nn::ParamSet<float>& ps, const CheckpointInfo& info) {
  nlohmann::json arrays = nlohmann::json::array();
  for (const auto& [name, v] : ps.items()) arrays.push_back({{"name", name}, {"shape", v.value().shape}});
  const nlohmann::json manifest = {{"kind", info.kind},
                                   {"arch", info.arch},
                                   {"seed", info.seed},
                                   {"train_hash", info.train_hash},
                                   {"arrays", arrays}};
  const std::string m = manifest.dump();
  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  ckpt_detail::put<std::uint32_t>(out, kCheckpointVersion);
  ckpt_detail::put<std::uint64_t>(out, m.size());
  out += m;
  for (const auto& [_, v] : ps.items())
    for (float x : v.value().data) ckpt_detail::put<float>(out, x);
  return out;
}

struct DecodedCheckpoint {
  CheckpointInfo info;
  std::vector<std::pair<std::string, Tensor<float>>> arrays;
};

inline DecodedCheckpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof kCheckpointMagic || std::memcmp(bytes.data(), kCheckpointMagic, sizeof kCheckpointMagic)) {
    throw FormatError("not a volseg checkpoint (bad magic)");
  }
  std::size_t pos = sizeof kCheckpointMagic;
  const auto version = ckpt_detail::get<std::uint32_t>(bytes, pos);
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const auto mlen = ckpt_detail::get<std::uint64_t>(bytes, pos);
  if (mlen > bytes.size() - pos) throw TruncationError("checkpoint manifest truncated");
  const auto manifest = io_detail::parse_json(bytes.substr(pos, mlen), "checkpoint manifest");
  pos += mlen;
  DecodedCheckpoint out;
  try {
    out.info = {manifest.at("kind").get<std::string>(), manifest.at("arch"), manifest.at("seed").get<std::uint64_t>(),
                manifest.at("train_hash").get<std::uint64_t>()};
    for (const auto& a : manifest.at("arrays")) {
      Shape s = a.at("shape").get<Shape>();
      std::size_t numel = 1;
      for (int d : s) {
        if (d < 0) throw FormatError("negative dimension in checkpoint manifest");
        numel *= static_cast<std::size_t>(d);
      }
      if (numel > (bytes.size() - pos) / sizeof(float)) throw TruncationError("checkpoint payload truncated");
      Tensor<float> t(s);
      for (auto& x : t.data) x = ckpt_detail::get<float>(bytes, pos);
      out.arrays.emplace_back(a.at("name").get<std::string>(), std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed checkpoint manifest: ") + e.what());
  }
  if (pos != bytes.size()) throw FormatError("trailing bytes after checkpoint payload");
  return out;
}

/// Copies arrays into `ps`; names, order and shapes must match exactly.
inline void apply_checkpoint(nn::ParamSet<float>& ps, const DecodedCheckpoint& ck) {
  auto& items = ps.items();
  if (items.size() != ck.arrays.size()) {
    throw ValidationError("checkpoint has " + std::to_string(ck.arrays.size()) + " arrays, model expects " +
                          std::to_string(items.size()));
  }
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i].first != ck.arrays[i].first || items[i].second.value().shape != ck.arrays[i].second.shape) {
      throw ValidationError("checkpoint array " + ck.arrays[i].first + " does not match model parameter " +
                            items[i].first);
    }
    items[i].second.mutable_value() = ck.arrays[i].second;
  }
}

inline void save_checkpoint(const fs::path& path, const nn::ParamSet<float>& ps, const CheckpointInfo& info) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  io_detail::write_file(path, encode_checkpoint(ps, info));
}

inline DecodedCheckpoint read_checkpoint(const fs::path& path, const std::string& expected_kind) {
  auto ck = decode_checkpoint(io_detail::read_file(path));
  if (ck.info.kind != expected_kind) {
    throw FormatError("checkpoint " + path.string() + " holds a " + ck.info.kind + ", expected " + expected_kind);
  }
  return ck;
}

inline void save_interactor(const fs::path& path, const Interactor<float>& net, std::uint64_t seed,
                            std::uint64_t train_hash) {
  save_checkpoint(path, net.params(), {"interactor", net.config().to_json(), seed, train_hash});
}

inline Interactor<float> load_interactor(const fs::path& path, CheckpointInfo* info = nullptr) {
  auto ck = read_checkpoint(path, "interactor");
  Interactor<float> net(InteractorConfig::from_json(ck.info.arch));
  apply_checkpoint(net.params(), ck);
  if (info) *info = ck.info;
  return net;
}

inline void save_propagator(const fs::path& path, const PropagationModel<float>& model, std::uint64_t seed,
                            std::uint64_t train_hash) {
  save_checkpoint(path, model.params(), {"propagator", model.config().to_json(), seed, train_hash});
}

inline PropagationModel<float> load_propagator(const fs::path& path, CheckpointInfo* info = nullptr) {
  auto ck = read_checkpoint(path, "propagator");
  PropagationModel<float> model(MemoryConfig::from_json(ck.info.arch));
  apply_checkpoint(model.params(), ck);
  if (info) *info = ck.info;
  return model;
}

inline void save_quality(const fs::path& path, const QualityNet<float>& net, std::uint64_t seed,
                         std::uint64_t train_hash) {
  save_checkpoint(path, net.params(), {"quality", net.config().to_json(), seed, train_hash});
}

inline QualityNet<float> load_quality(const fs::path& path, CheckpointInfo* info = nullptr) {
  auto ck = read_checkpoint(path, "quality");
  QualityNet<float> net(QualityNetConfig::from_json(ck.info.arch));
  apply_checkpoint(net.params(), ck);
  if (info) *info = ck.info;
  return net;
}

}  // namespace volseg
