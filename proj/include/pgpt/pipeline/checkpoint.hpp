// Copyright 2026 The Parallel GPT Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "pgpt/data/features.hpp"
#include "pgpt/numerics/rng.hpp"
#include "pgpt/numerics/tensor.hpp"
#include "pgpt/rvq.hpp"

namespace pgpt {

enum class StageTag : std::uint32_t { tokenizer = 0, ar = 1, nar = 2, flow = 3 };

inline const char* stage_name(StageTag tag) {
  switch (tag) {
    case StageTag::tokenizer: return "tokenizer";
    case StageTag::ar: return "ar";
    case StageTag::nar: return "nar";
    case StageTag::flow: return "flow";
  }
  return "unknown";
}

inline StageTag stage_from_name(const std::string& name) {
  if (name == "tokenizer") return StageTag::tokenizer;
  if (name == "ar") return StageTag::ar;
  if (name == "nar") return StageTag::nar;
  if (name == "flow") return StageTag::flow;
  throw std::invalid_argument("unknown stage '" + name + "' (expected tokenizer, ar, nar or flow)");
}

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One training stage's artifact. Blobs are named f32 arrays; codebooks are
/// stored as blobs under "<stream>.rvq.<layer>.*".
struct Checkpoint {
  StageTag stage = StageTag::tokenizer;
  nlohmann::json config;    // full pipeline config snapshot
  nlohmann::json metadata;  // stage-specific extras (vocabulary, corpus info)
  std::uint64_t step = 0;
  RngState rng;
  std::vector<FeatureArray> blobs;

  const FeatureArray& blob(const std::string& name) const {
    for (const auto& b : blobs)
      if (b.name == name) return b;
    throw CheckpointError(std::string(stage_name(stage)) + " checkpoint has no blob " + name);
  }
  bool has_blob(const std::string& name) const {
    for (const auto& b : blobs)
      if (b.name == name) return true;
    return false;
  }

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

inline constexpr char kCheckpointMagic[8] = {'P', 'G', 'P', 'T', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Layout (little-endian): magic[8] | u32 version | u32 stage | u64 len + config
/// JSON | u64 len + metadata JSON | u64 step | u64 seed, u64 stream, u64 counter,
/// u32 lane | u32 blob count | per blob: u16 name length, name, u8 rank,
/// u64 dims[rank], f32 data.
inline std::vector<char> encode_checkpoint(const Checkpoint& c) {
  detail::ByteWriter w;
  w.raw(kCheckpointMagic, 8);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(c.stage));
  const std::string config = c.config.dump();
  const std::string meta = c.metadata.dump();
  w.u64(config.size());
  w.str(config);
  w.u64(meta.size());
  w.str(meta);
  w.u64(c.step);
  w.u64(c.rng.seed);
  w.u64(c.rng.stream);
  w.u64(c.rng.counter);
  w.u32(c.rng.lane);
  w.u32(static_cast<std::uint32_t>(c.blobs.size()));
  for (const auto& b : c.blobs) {
    std::uint64_t n = 1;
    for (auto d : b.dims) n *= d;
    if (n != b.data.size()) throw CheckpointError("blob " + b.name + ": dims do not match data length");
    if (b.name.size() > 0xFFFF) throw CheckpointError("blob name too long: " + b.name);
    w.u16(static_cast<std::uint16_t>(b.name.size()));
    w.str(b.name);
    w.u8(static_cast<std::uint8_t>(b.dims.size()));
    for (auto d : b.dims) w.u64(d);
    for (float v : b.data) w.f32(v);
  }
  return w.bytes();
}

inline Checkpoint decode_checkpoint(const std::vector<char>& bytes, const std::string& what) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
    throw MagicError(what + ": bad magic (expected PGPTCKPT)");
  }
  detail::ByteReader r(bytes, what);
  r.str(8);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) throw VersionError(what + ": unsupported checkpoint version " + std::to_string(version));
  Checkpoint c;
  const std::uint32_t stage = r.u32();
  if (stage > 3) throw CheckpointError(what + ": unknown stage tag " + std::to_string(stage));
  c.stage = static_cast<StageTag>(stage);
  auto json_field = [&](const char* name) {
    const std::uint64_t n = r.u64();
    r.need(n);
    try {
      return nlohmann::json::parse(r.str(n));
    } catch (const nlohmann::json::exception& e) {
      throw CheckpointError(what + ": malformed " + name + " JSON: " + e.what());
    }
  };
  c.config = json_field("config");
  c.metadata = json_field("metadata");
  c.step = r.u64();
  c.rng.seed = r.u64();
  c.rng.stream = r.u64();
  c.rng.counter = r.u64();
  c.rng.lane = r.u32();
  if (c.rng.lane > 4) throw CheckpointError(what + ": invalid RNG lane " + std::to_string(c.rng.lane));
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    FeatureArray b;
    b.name = r.str(r.u16());
    const std::uint8_t rank = r.u8();
    std::uint64_t n = 1;
    for (std::uint8_t k = 0; k < rank; ++k) {
      b.dims.push_back(r.u64());
      if (b.dims.back() != 0 && n > (std::uint64_t(1) << 40) / b.dims.back()) {
        throw TruncatedError(what + ": blob " + b.name + " is implausibly large");
      }
      n *= b.dims.back();
    }
    r.need(n * 4);
    b.data.resize(n);
    for (auto& v : b.data) v = r.f32();
    c.blobs.push_back(std::move(b));
  }
  if (r.remaining() != 0) throw CheckpointError(what + ": " + std::to_string(r.remaining()) + " trailing bytes");
  return c;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  detail::write_file(path, encode_checkpoint(c));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(detail::read_file(path), path.string());
}

// ---------------------------------------------------------------------------
// Parameter and codebook blobs.

template <typename Real>
void append_param_blobs(const ParamList<Real>& params, std::vector<FeatureArray>& out) {
  for (const auto& [name, t] : params) {
    FeatureArray a;
    a.name = name;
    for (auto d : t.shape()) a.dims.push_back(d);
    a.data.assign(t.data().begin(), t.data().end());
    out.push_back(std::move(a));
  }
}

/// Copies blob values into the given parameters; names and shapes must match.
template <typename Real>
void load_param_blobs(const Checkpoint& c, ParamList<Real>& params) {
  for (auto& [name, t] : params) {
    const auto& b = c.blob(name);
    std::vector<std::uint64_t> dims(t.shape().begin(), t.shape().end());
    if (b.dims != dims) throw CheckpointError("blob " + name + " has a different shape than the model built from its config");
    auto dst = t.mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<Real>(b.data[i]);
  }
}

inline void append_rvq_blobs(const std::string& prefix, const RVQStack& stack, std::vector<FeatureArray>& out) {
  for (std::size_t l = 0; l < stack.num_layers(); ++l) {
    const auto& cb = stack.layer(l);
    const std::string p = prefix + ".rvq." + std::to_string(l);
    out.push_back({p + ".entries", {cb.size, cb.dim}, cb.entries});
    out.push_back({p + ".ema_counts", {cb.size}, cb.ema_counts});
    out.push_back({p + ".ema_sums", {cb.size, cb.dim}, cb.ema_sums});
    out.push_back({p + ".idle_steps", {cb.size}, std::vector<float>(cb.idle_steps.begin(), cb.idle_steps.end())});
  }
}

inline void load_rvq_blobs(const Checkpoint& c, const std::string& prefix, RVQStack& stack) {
  for (std::size_t l = 0; l < stack.num_layers(); ++l) {
    auto& cb = stack.layer(l);
    const std::string p = prefix + ".rvq." + std::to_string(l);
    auto fetch = [&](const std::string& name, std::vector<std::uint64_t> dims) -> const std::vector<float>& {
      const auto& b = c.blob(name);
      if (b.dims != dims) throw CheckpointError("blob " + name + " does not match the codebook shape");
      return b.data;
    };
    cb.entries = fetch(p + ".entries", {cb.size, cb.dim});
    cb.ema_counts = fetch(p + ".ema_counts", {cb.size});
    cb.ema_sums = fetch(p + ".ema_sums", {cb.size, cb.dim});
    const auto& idle = fetch(p + ".idle_steps", {cb.size});
    for (std::size_t k = 0; k < cb.size; ++k) cb.idle_steps[k] = static_cast<std::uint32_t>(idle[k]);
  }
}

}  // namespace pgpt
