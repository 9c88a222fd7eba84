// Copyright 2026 The Parallel GPT Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "pgpt/numerics/matrix.hpp"
#include "pgpt/numerics/ops.hpp"
#include "pgpt/numerics/rng.hpp"

namespace pgpt {

struct RVQConfig {
  std::size_t dim = 64;
  std::size_t codebook_size = 64;
  std::size_t layers = 3;
  double ema_decay = 0.99;
  double commitment = 0.25;
  /// An entry unselected for this many consecutive train steps is re-seeded.
  std::size_t dead_code_steps = 100;
  /// Pin entry 0 of every layer to the zero vector. A zero codeword makes the
  /// residual norm non-increasing across layers for any input.
  bool zero_code = true;

  void validate() const {
    if (dim < 1) throw std::invalid_argument("RVQConfig.dim must be >= 1");
    if (codebook_size < 2) throw std::invalid_argument("RVQConfig.codebook_size must be >= 2");
    if (layers < 1) throw std::invalid_argument("RVQConfig.layers must be >= 1");
    if (!(ema_decay > 0.0 && ema_decay < 1.0)) throw std::invalid_argument("RVQConfig.ema_decay must be in (0,1)");
    if (commitment < 0.0) throw std::invalid_argument("RVQConfig.commitment must be >= 0");
  }
};

class TokenRangeError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// T x L integer token ids; column l holds quantizer layer l.
struct TokenMatrix {
  std::size_t frames = 0;
  std::size_t layers = 0;
  std::vector<int> ids;

  TokenMatrix() = default;
  TokenMatrix(std::size_t t, std::size_t l, int fill = 0) : frames(t), layers(l), ids(t * l, fill) {}

  int& operator()(std::size_t t, std::size_t l) { return ids[t * layers + l]; }
  int operator()(std::size_t t, std::size_t l) const { return ids[t * layers + l]; }

  std::vector<int> column(std::size_t l) const {
    std::vector<int> out(frames);
    for (std::size_t t = 0; t < frames; ++t) out[t] = (*this)(t, l);
    return out;
  }

  /// First `count` layers.
  TokenMatrix leading(std::size_t count) const {
    TokenMatrix out(frames, count);
    for (std::size_t t = 0; t < frames; ++t)
      for (std::size_t l = 0; l < count; ++l) out(t, l) = (*this)(t, l);
    return out;
  }

  /// Frames [begin, end).
  TokenMatrix slice(std::size_t begin, std::size_t end) const {
    TokenMatrix out(end - begin, layers);
    std::copy(ids.begin() + begin * layers, ids.begin() + end * layers, out.ids.begin());
    return out;
  }

  friend bool operator==(const TokenMatrix&, const TokenMatrix&) = default;
};

/// Appends columns of `b` after those of `a` (same frame count).
inline TokenMatrix append_layers(const TokenMatrix& a, const TokenMatrix& b) {
  if (a.frames != b.frames) throw ShapeError("append_layers: frame counts differ");
  TokenMatrix out(a.frames, a.layers + b.layers);
  for (std::size_t t = 0; t < a.frames; ++t) {
    for (std::size_t l = 0; l < a.layers; ++l) out(t, l) = a(t, l);
    for (std::size_t l = 0; l < b.layers; ++l) out(t, a.layers + l) = b(t, l);
  }
  return out;
}

struct Codebook {
  std::size_t size = 0;
  std::size_t dim = 0;
  std::vector<float> entries;     // K x D
  std::vector<float> ema_counts;  // K
  std::vector<float> ema_sums;    // K x D
  std::vector<std::uint32_t> idle_steps;  // consecutive train steps without selection

  Codebook() = default;
  Codebook(std::size_t k, std::size_t d)
      : size(k), dim(d), entries(k * d, 0.0f), ema_counts(k, 0.0f), ema_sums(k * d, 0.0f), idle_steps(k, 0) {}

  std::span<const float> entry(std::size_t k) const { return {entries.data() + k * dim, dim}; }
  std::span<float> entry(std::size_t k) { return {entries.data() + k * dim, dim}; }

  /// Squared Euclidean distance; the same arithmetic produces residual norms.
  double distance(std::span<const float> x, std::size_t k) const {
    const float* c = entries.data() + k * dim;
    double s = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      const float d = x[i] - c[i];
      s += double(d) * double(d);
    }
    return s;
  }

  /// Nearest entry; ties resolve to the lowest index.
  std::pair<std::size_t, double> nearest(std::span<const float> x) const {
    std::size_t best = 0;
    double best_d = distance(x, 0);
    for (std::size_t k = 1; k < size; ++k) {
      const double d = distance(x, k);
      if (d < best_d) {
        best_d = d;
        best = k;
      }
    }
    return {best, best_d};
  }

  friend bool operator==(const Codebook&, const Codebook&) = default;
};

struct RVQEncoding {
  TokenMatrix tokens;     // T x L
  Matrix quantized;       // T x D, sum of selected codewords
  Matrix residual_norms;  // T x L, norm of the residual left after each layer
};

struct RVQStepStats {
  double reconstruction_mse = 0.0;  // before the update
  double utilization = 0.0;         // fraction of entries selected in this step, averaged over layers
  std::size_t reseeded = 0;
};

struct CodebookUsage {
  double utilization = 0.0;  // fraction of entries selected at least once
  double perplexity = 0.0;   // exp(entropy of the selection histogram)
};

/// Residual vector quantizer for one stream.
class RVQStack {
 public:
  RVQStack() = default;
  explicit RVQStack(RVQConfig config) : config_(config) {
    config_.validate();
    layers_.assign(config_.layers, Codebook(config_.codebook_size, config_.dim));
  }

  /// Gaussian codebooks (entry 0 zeroed when zero_code is set).
  static RVQStack random(RVQConfig config, Rng& rng, double stddev = 1.0) {
    RVQStack stack(config);
    for (auto& cb : stack.layers_) {
      for (auto& v : cb.entries) v = static_cast<float>(rng.normal() * stddev);
      stack.pin_zero(cb);
      cb.ema_sums = cb.entries;
      std::fill(cb.ema_counts.begin(), cb.ema_counts.end(), 1.0f);
    }
    return stack;
  }

  const RVQConfig& config() const { return config_; }
  std::size_t num_layers() const { return layers_.size(); }
  std::size_t dim() const { return config_.dim; }
  const Codebook& layer(std::size_t l) const { return layers_.at(l); }
  Codebook& layer(std::size_t l) { return layers_.at(l); }

  /// Layer-wise k-means++ seeding on the residuals of `frames`.
  void init_from_data(const Matrix& frames, Rng& rng) {
    check_dim(frames);
    Matrix residual = frames;
    for (auto& cb : layers_) {
      kmeans_pp(cb, residual, rng);
      for (std::size_t t = 0; t < residual.rows; ++t) {
        auto r = residual.row(t);
        const auto k = cb.nearest(r).first;
        const auto c = cb.entry(k);
        for (std::size_t i = 0; i < cb.dim; ++i) r[i] = r[i] - c[i];
      }
    }
  }

  /// Greedy per-layer nearest codeword on the running residual.
  RVQEncoding encode(const Matrix& frames) const {
    check_dim(frames);
    const std::size_t t_len = frames.rows, d = config_.dim, n_layers = layers_.size();
    RVQEncoding out{TokenMatrix(t_len, n_layers), Matrix(t_len, d), Matrix(t_len, n_layers)};
    std::vector<float> residual(d);
    for (std::size_t t = 0; t < t_len; ++t) {
      std::copy(frames.row(t).begin(), frames.row(t).end(), residual.begin());
      for (std::size_t l = 0; l < n_layers; ++l) {
        const auto& cb = layers_[l];
        const auto [k, dist] = cb.nearest(residual);
        out.tokens(t, l) = static_cast<int>(k);
        const auto c = cb.entry(k);
        for (std::size_t i = 0; i < d; ++i) {
          residual[i] = residual[i] - c[i];
          out.quantized(t, i) += c[i];
        }
        out.residual_norms(t, l) = static_cast<float>(std::sqrt(dist));
      }
    }
    return out;
  }

  /// Sum of the codewords of layers [0, up_to_layer).
  Matrix decode(const TokenMatrix& tokens, std::size_t up_to_layer) const {
    if (up_to_layer < 1 || up_to_layer > layers_.size() || up_to_layer > tokens.layers) {
      throw std::invalid_argument("RVQ decode: up_to_layer " + std::to_string(up_to_layer) + " outside [1, " +
                                  std::to_string(std::min(layers_.size(), tokens.layers)) + "]");
    }
    Matrix out(tokens.frames, config_.dim);
    for (std::size_t t = 0; t < tokens.frames; ++t) {
      for (std::size_t l = 0; l < up_to_layer; ++l) {
        const int id = tokens(t, l);
        if (id < 0 || static_cast<std::size_t>(id) >= layers_[l].size) {
          throw TokenRangeError("RVQ decode: token " + std::to_string(id) + " at frame " + std::to_string(t) +
                                " layer " + std::to_string(l) + " outside [0, " + std::to_string(layers_[l].size) +
                                ")");
        }
        const auto c = layers_[l].entry(static_cast<std::size_t>(id));
        for (std::size_t i = 0; i < config_.dim; ++i) out(t, i) += c[i];
      }
    }
    return out;
  }

  Matrix decode(const TokenMatrix& tokens) const { return decode(tokens, std::min(layers_.size(), tokens.layers)); }

  /// One EMA codebook update on a batch of frames, followed by dead-code
  /// re-seeding. Per layer: counts <- decay*counts + (1-decay)*n_k and
  /// sums <- decay*sums + (1-decay)*sum of assigned residuals; entry = sums/counts.
  RVQStepStats train_step(const Matrix& frames, Rng& rng) {
    check_dim(frames);
    RVQStepStats stats;
    const std::size_t t_len = frames.rows, d = config_.dim;
    if (t_len == 0) return stats;
    const float decay = static_cast<float>(config_.ema_decay);

    Matrix residual = frames;
    double sq = 0.0;
    std::vector<Matrix> layer_inputs;
    std::vector<std::vector<std::size_t>> assign(layers_.size(), std::vector<std::size_t>(t_len));
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      layer_inputs.push_back(residual);
      for (std::size_t t = 0; t < t_len; ++t) {
        auto r = residual.row(t);
        const auto k = layers_[l].nearest(r).first;
        assign[l][t] = k;
        const auto c = layers_[l].entry(k);
        for (std::size_t i = 0; i < d; ++i) r[i] = r[i] - c[i];
      }
    }
    for (float v : residual.data) sq += double(v) * double(v);
    stats.reconstruction_mse = sq / double(residual.data.size());

    for (std::size_t l = 0; l < layers_.size(); ++l) {
      auto& cb = layers_[l];
      std::vector<float> counts(cb.size, 0.0f), sums(cb.size * d, 0.0f);
      for (std::size_t t = 0; t < t_len; ++t) {
        const auto k = assign[l][t];
        counts[k] += 1.0f;
        const auto x = layer_inputs[l].row(t);
        for (std::size_t i = 0; i < d; ++i) sums[k * d + i] += x[i];
      }
      std::size_t used = 0;
      for (std::size_t k = 0; k < cb.size; ++k) {
        if (counts[k] > 0.0f) ++used;
        if (pinned(k)) continue;
        cb.ema_counts[k] = decay * cb.ema_counts[k] + (1.0f - decay) * counts[k];
        for (std::size_t i = 0; i < d; ++i) {
          cb.ema_sums[k * d + i] = decay * cb.ema_sums[k * d + i] + (1.0f - decay) * sums[k * d + i];
        }
        if (cb.ema_counts[k] > 1e-12f) {
          for (std::size_t i = 0; i < d; ++i) cb.entries[k * d + i] = cb.ema_sums[k * d + i] / cb.ema_counts[k];
        }
        cb.idle_steps[k] = counts[k] > 0.0f ? 0 : cb.idle_steps[k] + 1;
        if (cb.idle_steps[k] >= config_.dead_code_steps) {
          const auto src = layer_inputs[l].row(rng.uniform_int(t_len));
          std::copy(src.begin(), src.end(), cb.entry(k).begin());
          std::copy(src.begin(), src.end(), cb.ema_sums.begin() + k * d);
          cb.ema_counts[k] = 1.0f;
          cb.idle_steps[k] = 0;
          ++stats.reseeded;
        }
      }
      stats.utilization += double(used) / double(cb.size);
    }
    stats.utilization /= double(layers_.size());
    return stats;
  }

  std::vector<CodebookUsage> usage(const Matrix& frames) const {
    const auto enc = encode(frames);
    std::vector<CodebookUsage> out;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      std::vector<double> hist(layers_[l].size, 0.0);
      for (std::size_t t = 0; t < enc.tokens.frames; ++t) hist[enc.tokens(t, l)] += 1.0;
      CodebookUsage u;
      double entropy = 0.0;
      std::size_t used = 0;
      for (double h : hist) {
        if (h <= 0) continue;
        ++used;
        const double p = h / double(enc.tokens.frames);
        entropy -= p * std::log(p);
      }
      u.utilization = double(used) / double(hist.size());
      u.perplexity = enc.tokens.frames ? std::exp(entropy) : 0.0;
      out.push_back(u);
    }
    return out;
  }

  friend bool operator==(const RVQStack& a, const RVQStack& b) { return a.layers_ == b.layers_; }

 private:
  bool pinned(std::size_t k) const { return config_.zero_code && k == 0; }

  void pin_zero(Codebook& cb) const {
    if (!config_.zero_code) return;
    std::fill_n(cb.entries.begin(), cb.dim, 0.0f);
  }

  void check_dim(const Matrix& frames) const {
    if (frames.cols != config_.dim) {
      throw ShapeError("RVQ: frame width " + std::to_string(frames.cols) + " does not match codebook dim " +
                       std::to_string(config_.dim));
    }
  }

  void kmeans_pp(Codebook& cb, const Matrix& data, Rng& rng) const {
    const std::size_t n = data.rows;
    std::fill(cb.entries.begin(), cb.entries.end(), 0.0f);
    std::size_t first = 0;
    std::vector<double> best(n, std::numeric_limits<double>::infinity());
    auto absorb = [&](std::size_t k) {
      for (std::size_t t = 0; t < n; ++t) best[t] = std::min(best[t], cb.distance(data.row(t), k));
    };
    if (config_.zero_code) {
      absorb(0);
      first = 1;
    }
    for (std::size_t k = first; k < cb.size; ++k) {
      if (n == 0) break;
      double total = 0.0;
      for (double b : best) total += std::isfinite(b) ? b : 0.0;
      std::size_t pick = 0;
      if (k == 0 || total <= 0.0) {
        pick = rng.uniform_int(n);
      } else {
        double u = rng.uniform() * total;
        for (pick = 0; pick + 1 < n; ++pick) {
          u -= best[pick];
          if (u < 0.0) break;
        }
      }
      std::copy(data.row(pick).begin(), data.row(pick).end(), cb.entry(k).begin());
      absorb(k);
    }
    cb.ema_sums = cb.entries;
    std::fill(cb.ema_counts.begin(), cb.ema_counts.end(), 1.0f);
    std::fill(cb.idle_steps.begin(), cb.idle_steps.end(), 0u);
  }

  RVQConfig config_;
  std::vector<Codebook> layers_;
};

/// Differentiable view of quantization for the encoder side. `z` is the
/// pre-quantization projection. The returned `quantized` carries z's
/// gradient unchanged (straight-through); `commitment` is
/// mse(z, stop_gradient(quantized)).
template <typename Real>
struct QuantizedTensor {
  Tensor<Real> quantized;
  Tensor<Real> commitment;
  RVQEncoding encoding;
};

template <typename Real>
QuantizedTensor<Real> quantize_straight_through(const RVQStack& stack, const Tensor<Real>& z) {
  auto enc = stack.encode(to_matrix(z));
  auto q = Tensor<Real>(z.shape(), std::vector<Real>(enc.quantized.data.begin(), enc.quantized.data.end()));
  auto commitment = mse(z, q);
  auto st = straight_through(z, q);
  return {std::move(st), std::move(commitment), std::move(enc)};
}

}  // namespace pgpt
