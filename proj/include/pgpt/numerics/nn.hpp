// Copyright 2026 The Parallel GPT Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <string>

#include "pgpt/numerics/ops.hpp"
#include "pgpt/numerics/rng.hpp"

// Building blocks shared by every model. Each module exposes
// collect(prefix, list) which appends (name, handle) pairs for its
// trainable tensors; names are the checkpoint keys.
namespace pgpt::nn {

template <typename Real>
Tensor<Real> normal_param(Shape shape, Rng& rng, double stddev) {
  std::vector<Real> data(shape_size(shape));
  for (auto& v : data) v = static_cast<Real>(rng.normal() * stddev);
  return Tensor<Real>(std::move(shape), std::move(data), true);
}

template <typename Real>
struct Linear {
  Tensor<Real> weight;  // [in, out]
  Tensor<Real> bias;    // [out]

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng, double stddev = -1.0)
      : weight(normal_param<Real>({in, out}, rng, stddev > 0 ? stddev : 1.0 / std::sqrt(double(in)))),
        bias(Tensor<Real>::zeros({out}, true)) {}

  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }

  Tensor<Real> operator()(const Tensor<Real>& x) const { return add(matmul(x, weight), bias); }

  void collect(const std::string& prefix, ParamList<Real>& out) const {
    out.emplace_back(prefix + ".weight", weight);
    out.emplace_back(prefix + ".bias", bias);
  }
};

template <typename Real>
struct LayerNorm {
  Tensor<Real> gamma;
  Tensor<Real> beta;

  LayerNorm() = default;
  explicit LayerNorm(std::size_t width)
      : gamma(Tensor<Real>::full({width}, Real(1), true)), beta(Tensor<Real>::zeros({width}, true)) {}

  Tensor<Real> operator()(const Tensor<Real>& x) const { return layer_norm(x, gamma, beta); }

  void collect(const std::string& prefix, ParamList<Real>& out) const {
    out.emplace_back(prefix + ".gamma", gamma);
    out.emplace_back(prefix + ".beta", beta);
  }
};

template <typename Real>
struct Embedding {
  Tensor<Real> table;  // [count, width]

  Embedding() = default;
  Embedding(std::size_t count, std::size_t width, Rng& rng, double stddev = 0.02)
      : table(normal_param<Real>({count, width}, rng, stddev)) {}

  std::size_t count() const { return table.dim(0); }
  Tensor<Real> operator()(std::span<const int> ids) const { return embedding(table, ids); }

  void collect(const std::string& prefix, ParamList<Real>& out) const { out.emplace_back(prefix + ".table", table); }
};

template <typename Real>
struct MultiHeadAttention {
  Linear<Real> query, key, value, output;
  std::size_t heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(std::size_t width, std::size_t n_heads, Rng& rng, double out_std)
      : query(width, width, rng), key(width, width, rng), value(width, width, rng),
        output(width, width, rng, out_std), heads(n_heads) {}

  Tensor<Real> operator()(const Tensor<Real>& x, bool causal) const {
    return output(attention(query(x), key(x), value(x), heads, causal));
  }

  void collect(const std::string& prefix, ParamList<Real>& out) const {
    query.collect(prefix + ".query", out);
    key.collect(prefix + ".key", out);
    value.collect(prefix + ".value", out);
    output.collect(prefix + ".output", out);
  }
};

/// Pre-norm transformer block: x + attn(ln(x)), then x + mlp(ln(x)).
template <typename Real>
struct TransformerBlock {
  LayerNorm<Real> ln_attn, ln_mlp;
  MultiHeadAttention<Real> attn;
  Linear<Real> fc_in, fc_out;

  TransformerBlock() = default;
  TransformerBlock(std::size_t width, std::size_t heads, std::size_t depth, Rng& rng) {
    const double residual_std = 1.0 / std::sqrt(double(width) * 2.0 * double(depth));
    ln_attn = LayerNorm<Real>(width);
    ln_mlp = LayerNorm<Real>(width);
    attn = MultiHeadAttention<Real>(width, heads, rng, residual_std);
    fc_in = Linear<Real>(width, 4 * width, rng);
    fc_out = Linear<Real>(4 * width, width, rng, residual_std / 2.0);
  }

  Tensor<Real> operator()(const Tensor<Real>& x, bool causal) const {
    auto h = add(x, attn(ln_attn(x), causal));
    return add(h, fc_out(gelu(fc_in(ln_mlp(h)))));
  }

  void collect(const std::string& prefix, ParamList<Real>& out) const {
    ln_attn.collect(prefix + ".ln_attn", out);
    attn.collect(prefix + ".attn", out);
    ln_mlp.collect(prefix + ".ln_mlp", out);
    fc_in.collect(prefix + ".fc_in", out);
    fc_out.collect(prefix + ".fc_out", out);
  }
};

/// Fixed sinusoidal encoding [rows, width] (not trainable).
template <typename Real>
Tensor<Real> sinusoidal_positions(std::size_t rows, std::size_t width) {
  std::vector<Real> data(rows * width);
  for (std::size_t t = 0; t < rows; ++t) {
    for (std::size_t i = 0; i < width; ++i) {
      const double freq = std::pow(10000.0, -double(2 * (i / 2)) / double(width));
      const double angle = double(t) * freq;
      data[t * width + i] = static_cast<Real>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  }
  return Tensor<Real>({rows, width}, std::move(data));
}

/// Rows [begin, begin + count) of a learned position table.
template <typename Real>
Tensor<Real> position_rows(const Embedding<Real>& table, std::size_t begin, std::size_t count) {
  if (begin + count > table.count()) {
    throw std::length_error("position table of " + std::to_string(table.count()) + " rows cannot cover positions [" +
                            std::to_string(begin) + "," + std::to_string(begin + count) + ")");
  }
  std::vector<int> ids(count);
  for (std::size_t i = 0; i < count; ++i) ids[i] = static_cast<int>(begin + i);
  return table(ids);
}

template <typename Real>
void collect_all(const std::string& prefix, const std::vector<TransformerBlock<Real>>& blocks, ParamList<Real>& out) {
  for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(prefix + "." + std::to_string(i), out);
}

}  // namespace pgpt::nn
