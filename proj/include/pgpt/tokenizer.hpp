// Copyright 2026 The Parallel GPT Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <iostream>
#include <stdexcept>
#include <vector>

#include "pgpt/data/features.hpp"
#include "pgpt/flow_decoder.hpp"
#include "pgpt/numerics/nn.hpp"
#include "pgpt/rvq.hpp"

namespace pgpt {

struct TokenizerConfig {
  std::size_t semantic_dim = 64;
  std::size_t acoustic_dim = 64;
  std::size_t speaker_frame_dim = 64;
  std::size_t speaker_global_dim = 16;
  std::size_t condition_dim = 64;
  std::size_t codebook_size = 64;
  std::size_t rvq_layers = 3;
  double ema_decay = 0.99;
  double commitment = 0.25;
  std::size_t dead_code_steps = 100;
  std::size_t condition_heads = 4;
  std::size_t condition_blocks = 2;
  std::size_t conv_kernel = 3;

  void validate() const {
    if (semantic_dim < 1 || acoustic_dim < 1 || speaker_frame_dim < 1 || speaker_global_dim < 1) {
      throw std::invalid_argument("TokenizerConfig: feature widths must be >= 1");
    }
    if (condition_dim < 1 || condition_heads < 1 || condition_dim % condition_heads != 0) {
      throw std::invalid_argument("TokenizerConfig.condition_dim must be a positive multiple of condition_heads");
    }
    if (conv_kernel < 1 || conv_kernel % 2 == 0) throw std::invalid_argument("TokenizerConfig.conv_kernel must be odd");
    stream_rvq(semantic_dim).validate();
  }

  RVQConfig stream_rvq(std::size_t dim) const {
    RVQConfig c;
    c.dim = dim;
    c.codebook_size = codebook_size;
    c.layers = rvq_layers;
    c.ema_decay = ema_decay;
    c.commitment = commitment;
    c.dead_code_steps = dead_code_steps;
    return c;
  }
};

/// Temporally aligned semantic and acoustic token matrices (T x layers each).
struct ParallelTokens {
  TokenMatrix semantic;
  TokenMatrix acoustic;

  std::size_t frames() const { return semantic.frames; }
  void validate() const {
    if (semantic.frames != acoustic.frames) {
      throw ShapeError("ParallelTokens: semantic has " + std::to_string(semantic.frames) + " frames, acoustic has " +
                       std::to_string(acoustic.frames));
    }
  }
  friend bool operator==(const ParallelTokens&, const ParallelTokens&) = default;
};

/// Time-invariant speaker embedding.
struct SpeakerCondition {
  std::vector<float> vector;

  bool all_finite() const {
    for (float v : vector)
      if (!std::isfinite(v)) return false;
    return true;
  }
  friend bool operator==(const SpeakerCondition&, const SpeakerCondition&) = default;
};

struct EncodedSpeech {
  ParallelTokens tokens;
  SpeakerCondition condition;
};

/// Conditioning handed to the flow decoder.
struct FlowInput {
  Matrix features;  // T x (Ds + Da)
  SpeakerCondition condition;
};

template <typename Real>
struct TokenizerLosses {
  Tensor<Real> semantic;    // reconstruction of the semantic stream
  Tensor<Real> acoustic;    // reconstruction of the acoustic stream
  Tensor<Real> speaker;     // 1 - cos distillation
  Tensor<Real> mel;         // flow-matching regression
  Tensor<Real> total;       // unweighted sum of the four terms
};

/// 1 - cos(a, b). A zero-norm side yields 1.
template <typename Real>
Tensor<Real> cosine_distance(const Tensor<Real>& a, const Tensor<Real>& b) {
  auto cos = cosine_similarity(a, b);
  if (cos.item() == Real(0)) {
    bool zero_a = true, zero_b = true;
    for (Real v : a.data()) zero_a = zero_a && v == Real(0);
    for (Real v : b.data()) zero_b = zero_b && v == Real(0);
    if (zero_a || zero_b) std::clog << "pgpt: zero-norm vector in speaker distillation, loss set to 1\n";
  }
  return add_scalar(scale(cos, Real(-1)), Real(1));
}

/// Two independent RVQ streams plus the speaker path: a position-encoded
/// projector, a distillation head onto the global speaker vector, and a
/// conv + attention condition encoder with mean pooling. Codebooks learn by
/// EMA; the speaker path and the flow decoder learn by gradient.
template <typename Real>
class ParallelTokenizer {
 public:
  ParallelTokenizer() = default;
  ParallelTokenizer(TokenizerConfig config, Rng& rng) : config_(config) {
    config_.validate();
    semantic_rvq_ = RVQStack(config_.stream_rvq(config_.semantic_dim));
    acoustic_rvq_ = RVQStack(config_.stream_rvq(config_.acoustic_dim));
    speaker_projector_ = nn::Linear<Real>(config_.speaker_frame_dim, config_.condition_dim, rng);
    distill_head_ = nn::Linear<Real>(config_.condition_dim, config_.speaker_global_dim, rng);
    conv_ = nn::Linear<Real>(config_.conv_kernel * config_.condition_dim, config_.condition_dim, rng);
    for (std::size_t i = 0; i < config_.condition_blocks; ++i) {
      blocks_.emplace_back(config_.condition_dim, config_.condition_heads, config_.condition_blocks, rng);
    }
    condition_norm_ = nn::LayerNorm<Real>(config_.condition_dim);
  }

  const TokenizerConfig& config() const { return config_; }
  nn::Linear<Real>& distill_head() { return distill_head_; }
  const RVQStack& semantic_rvq() const { return semantic_rvq_; }
  const RVQStack& acoustic_rvq() const { return acoustic_rvq_; }
  RVQStack& semantic_rvq() { return semantic_rvq_; }
  RVQStack& acoustic_rvq() { return acoustic_rvq_; }
  std::size_t feature_dim() const { return config_.semantic_dim + config_.acoustic_dim; }

  /// Position-encoded projection of the speaker frames: [T, condition_dim].
  Tensor<Real> project_speaker(const Matrix& speaker_frames) const {
    if (speaker_frames.cols != config_.speaker_frame_dim) {
      throw ShapeError("speaker_frames width " + std::to_string(speaker_frames.cols) + " != " +
                       std::to_string(config_.speaker_frame_dim));
    }
    auto x = to_tensor<Real>(speaker_frames);
    if (speaker_frames.rows > 0) x = add(x, nn::sinusoidal_positions<Real>(speaker_frames.rows, speaker_frames.cols));
    return speaker_projector_(x);
  }

  /// Condition encoder over projected frames: [1, condition_dim].
  Tensor<Real> condition_from_projection(const Tensor<Real>& projected) const {
    if (projected.rows() == 0) throw std::invalid_argument("speaker condition requires at least one frame");
    auto h = gelu(conv_(unfold_time(projected, config_.conv_kernel)));
    for (const auto& block : blocks_) h = block(h, false);
    return mean_rows(condition_norm_(h));
  }

  /// 1 - cos(distill_head(mean-pooled projection), target).
  Tensor<Real> speaker_distill_loss(const Tensor<Real>& projected, std::span<const float> target) const {
    if (target.size() != config_.speaker_global_dim) {
      throw ShapeError("speaker_global has " + std::to_string(target.size()) + " dims, expected " +
                       std::to_string(config_.speaker_global_dim));
    }
    auto pooled = distill_head_(mean_rows(projected));
    return cosine_distance(reshape(pooled, {pooled.size()}), Tensor<Real>({target.size()}, std::vector<Real>(target.begin(), target.end())));
  }

  EncodedSpeech encode_speech(const FeatureBundle& bundle) const {
    NoGradGuard guard;
    validate(bundle);
    EncodedSpeech out;
    out.tokens.semantic = semantic_rvq_.encode(bundle.semantic).tokens;
    out.tokens.acoustic = acoustic_rvq_.encode(bundle.acoustic).tokens;
    out.condition = speaker_condition(bundle.speaker_frames);
    return out;
  }

  SpeakerCondition speaker_condition(const Matrix& speaker_frames) const {
    NoGradGuard guard;
    auto c = condition_from_projection(project_speaker(speaker_frames));
    return {std::vector<float>(c.data().begin(), c.data().end())};
  }

  /// Channel-wise concatenation of both decoded streams: T x (Ds + Da).
  Matrix decode_features(const ParallelTokens& tokens) const {
    tokens.validate();
    return concat_columns(semantic_rvq_.decode(tokens.semantic), acoustic_rvq_.decode(tokens.acoustic));
  }

  FlowInput decode_tokens(const ParallelTokens& tokens, const SpeakerCondition& condition) const {
    if (condition.vector.size() != config_.condition_dim) {
      throw ShapeError("speaker condition has " + std::to_string(condition.vector.size()) + " dims, expected " +
                       std::to_string(config_.condition_dim));
    }
    return {decode_features(tokens), condition};
  }

  TokenizerLosses<Real> losses(const FeatureBundle& bundle, const FlowDecoder<Real>& flow, Rng& rng) const {
    validate(bundle);
    const auto q_sem = to_tensor<Real>(semantic_rvq_.encode(bundle.semantic).quantized);
    const auto q_ac = to_tensor<Real>(acoustic_rvq_.encode(bundle.acoustic).quantized);
    auto projected = project_speaker(bundle.speaker_frames);
    TokenizerLosses<Real> out;
    out.semantic = mse(q_sem, to_tensor<Real>(bundle.semantic));
    out.acoustic = mse(q_ac, to_tensor<Real>(bundle.acoustic));
    out.speaker = speaker_distill_loss(projected, bundle.speaker_global);
    auto condition = condition_from_projection(projected);
    out.mel = cfm_train_loss(flow, to_tensor<Real>(bundle.mel), concat_cols<Real>({q_sem, q_ac}), condition, rng);
    out.total = add(add(out.semantic, out.acoustic), add(out.speaker, out.mel));
    return out;
  }

  /// EMA codebook update on one batch of frames.
  std::pair<RVQStepStats, RVQStepStats> codebook_step(const Matrix& semantic, const Matrix& acoustic, Rng& rng) {
    return {semantic_rvq_.train_step(semantic, rng), acoustic_rvq_.train_step(acoustic, rng)};
  }

  void init_codebooks(const Matrix& semantic, const Matrix& acoustic, Rng& rng) {
    semantic_rvq_.init_from_data(semantic, rng);
    acoustic_rvq_.init_from_data(acoustic, rng);
  }

  void collect(const std::string& prefix, ParamList<Real>& out) const {
    speaker_projector_.collect(prefix + ".speaker_projector", out);
    distill_head_.collect(prefix + ".distill_head", out);
    conv_.collect(prefix + ".condition_conv", out);
    nn::collect_all(prefix + ".condition_block", blocks_, out);
    condition_norm_.collect(prefix + ".condition_norm", out);
  }

 private:
  TokenizerConfig config_;
  RVQStack semantic_rvq_, acoustic_rvq_;
  nn::Linear<Real> speaker_projector_, distill_head_, conv_;
  std::vector<nn::TransformerBlock<Real>> blocks_;
  nn::LayerNorm<Real> condition_norm_;
};

}  // namespace pgpt
