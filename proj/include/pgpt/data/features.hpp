// Copyright 2026 The Parallel GPT Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <vector>

#include "pgpt/numerics/matrix.hpp"

namespace pgpt {

/// Per-utterance continuous features. All frame matrices share T rows.
struct FeatureBundle {
  Matrix semantic;              // T x Ds
  Matrix acoustic;              // T x Da
  Matrix speaker_frames;        // T x Dsf
  std::vector<float> speaker_global;  // Dg
  Matrix mel;                   // T x M
  std::vector<int> symbols;     // BOS ... EOS

  std::size_t frames() const { return semantic.rows; }
  friend bool operator==(const FeatureBundle&, const FeatureBundle&) = default;
};

class FeatureFileError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class MagicError : public FeatureFileError {
 public:
  using FeatureFileError::FeatureFileError;
};
class VersionError : public FeatureFileError {
 public:
  using FeatureFileError::FeatureFileError;
};
class TruncatedError : public FeatureFileError {
 public:
  using FeatureFileError::FeatureFileError;
};
/// Structural violation: missing array, wrong rank, or frame counts that disagree.
class InvariantError : public FeatureFileError {
 public:
  using FeatureFileError::FeatureFileError;
};

inline void validate(const FeatureBundle& b) {
  const std::size_t t = b.semantic.rows;
  std::string bad;
  if (b.acoustic.rows != t) bad += " acoustic=" + std::to_string(b.acoustic.rows);
  if (b.speaker_frames.rows != t) bad += " speaker_frames=" + std::to_string(b.speaker_frames.rows);
  if (b.mel.rows != t) bad += " mel=" + std::to_string(b.mel.rows);
  if (!bad.empty()) {
    throw InvariantError("frame count mismatch: semantic=" + std::to_string(t) + bad);
  }
  auto finite = [](std::span<const float> v) {
    for (float x : v)
      if (!std::isfinite(x)) return false;
    return true;
  };
  if (!b.semantic.all_finite()) throw InvariantError("non-finite values in semantic");
  if (!b.acoustic.all_finite()) throw InvariantError("non-finite values in acoustic");
  if (!b.speaker_frames.all_finite()) throw InvariantError("non-finite values in speaker_frames");
  if (!finite(b.speaker_global)) throw InvariantError("non-finite values in speaker_global");
  if (!b.mel.all_finite()) throw InvariantError("non-finite values in mel");
}

/// One named array of a feature file.
struct FeatureArray {
  std::string name;
  std::vector<std::uint64_t> dims;
  std::vector<float> data;

  friend bool operator==(const FeatureArray&, const FeatureArray&) = default;
};

inline constexpr char kFeatureMagic[8] = {'P', 'G', 'P', 'T', 'F', 'E', 'A', 'T'};
inline constexpr std::uint32_t kFeatureVersion = 1;
inline constexpr std::uint8_t kDtypeF32 = 0;

namespace detail {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) { le(v, 2); }
  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void raw(const char* p, std::size_t n) { bytes_.insert(bytes_.end(), p, p + n); }
  void str(const std::string& s) { raw(s.data(), s.size()); }
  const std::vector<char>& bytes() const { return bytes_; }

 private:
  void le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  std::vector<char> bytes_;
};

class ByteReader {
 public:
  ByteReader(const std::vector<char>& bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}
  std::uint8_t u8() { return static_cast<std::uint8_t>(le(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(le(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::uint64_t u64() { return le(8); }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  void need(std::size_t n) const {
    if (remaining() < n) {
      throw TruncatedError(what_ + ": truncated at byte " + std::to_string(pos_) + " (needed " + std::to_string(n) +
                           " more)");
    }
  }

 private:
  std::uint64_t le(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= std::uint64_t(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  const std::vector<char>& bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

inline std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FeatureFileError("cannot open " + path.string());
  return std::vector<char>(std::istreambuf_iterator<char>(in), {});
}

inline void write_file(const std::filesystem::path& path, const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FeatureFileError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FeatureFileError("write failed for " + path.string());
}

}  // namespace detail

inline std::vector<char> encode_feature_arrays(const std::vector<FeatureArray>& arrays) {
  detail::ByteWriter w;
  w.raw(kFeatureMagic, 8);
  w.u32(kFeatureVersion);
  w.u32(static_cast<std::uint32_t>(arrays.size()));
  for (const auto& a : arrays) {
    std::uint64_t count = 1;
    for (auto d : a.dims) count *= d;
    if (count != a.data.size()) throw InvariantError("array " + a.name + ": dims do not match data length");
    w.u16(static_cast<std::uint16_t>(a.name.size()));
    w.str(a.name);
    w.u8(kDtypeF32);
    w.u8(static_cast<std::uint8_t>(a.dims.size()));
    for (auto d : a.dims) w.u64(d);
    for (float v : a.data) w.f32(v);
  }
  return w.bytes();
}

inline std::vector<FeatureArray> decode_feature_arrays(const std::vector<char>& bytes, const std::string& what) {
  detail::ByteReader r(bytes, what);
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kFeatureMagic, 8) != 0) {
    throw MagicError(what + ": bad magic (expected PGPTFEAT)");
  }
  r.str(8);
  const std::uint32_t version = r.u32();
  if (version != kFeatureVersion) {
    throw VersionError(what + ": unsupported version " + std::to_string(version));
  }
  const std::uint32_t count = r.u32();
  std::vector<FeatureArray> arrays;
  for (std::uint32_t i = 0; i < count; ++i) {
    FeatureArray a;
    a.name = r.str(r.u16());
    const std::uint8_t dtype = r.u8();
    if (dtype != kDtypeF32) throw FeatureFileError(what + ": array " + a.name + " has unsupported dtype " +
                                                   std::to_string(dtype));
    const std::uint8_t rank = r.u8();
    std::uint64_t n = 1;
    for (std::uint8_t k = 0; k < rank; ++k) {
      a.dims.push_back(r.u64());
      n *= a.dims.back();
    }
    r.need(n * 4);
    a.data.resize(n);
    for (auto& v : a.data) v = r.f32();
    arrays.push_back(std::move(a));
  }
  return arrays;
}

inline void write_feature_arrays(const std::filesystem::path& path, const std::vector<FeatureArray>& arrays) {
  detail::write_file(path, encode_feature_arrays(arrays));
}

inline std::vector<FeatureArray> read_feature_arrays(const std::filesystem::path& path) {
  return decode_feature_arrays(detail::read_file(path), path.string());
}

inline FeatureArray matrix_array(std::string name, const Matrix& m) {
  return {std::move(name), {m.rows, m.cols}, m.data};
}

inline FeatureArray vector_array(std::string name, std::vector<float> v) {
  const std::uint64_t n = v.size();
  return {std::move(name), {n}, std::move(v)};
}

inline const FeatureArray& find_array(const std::vector<FeatureArray>& arrays, const std::string& name,
                                      std::size_t rank) {
  for (const auto& a : arrays) {
    if (a.name != name) continue;
    if (a.dims.size() != rank) {
      throw InvariantError("array " + name + " has rank " + std::to_string(a.dims.size()) + ", expected " +
                           std::to_string(rank));
    }
    return a;
  }
  throw InvariantError("missing required array " + name);
}

inline Matrix array_matrix(const FeatureArray& a) {
  return Matrix(static_cast<std::size_t>(a.dims[0]), static_cast<std::size_t>(a.dims[1]), a.data);
}

inline std::vector<FeatureArray> bundle_arrays(const FeatureBundle& b) {
  std::vector<float> symbols(b.symbols.begin(), b.symbols.end());
  return {matrix_array("semantic", b.semantic),
          matrix_array("acoustic", b.acoustic),
          matrix_array("speaker_frames", b.speaker_frames),
          vector_array("speaker_global", b.speaker_global),
          matrix_array("mel", b.mel),
          vector_array("symbols", std::move(symbols))};
}

inline FeatureBundle bundle_from_arrays(const std::vector<FeatureArray>& arrays) {
  FeatureBundle b;
  b.semantic = array_matrix(find_array(arrays, "semantic", 2));
  b.acoustic = array_matrix(find_array(arrays, "acoustic", 2));
  b.speaker_frames = array_matrix(find_array(arrays, "speaker_frames", 2));
  b.speaker_global = find_array(arrays, "speaker_global", 1).data;
  b.mel = array_matrix(find_array(arrays, "mel", 2));
  for (float v : find_array(arrays, "symbols", 1).data) {
    if (v != std::floor(v) || v < 0) throw InvariantError("symbols array holds a non-integer id");
    b.symbols.push_back(static_cast<int>(v));
  }
  validate(b);
  return b;
}

inline void save_features(const std::filesystem::path& path, const FeatureBundle& bundle) {
  validate(bundle);
  write_feature_arrays(path, bundle_arrays(bundle));
}

inline FeatureBundle load_features(const std::filesystem::path& path) {
  return bundle_from_arrays(read_feature_arrays(path));
}

}  // namespace pgpt
