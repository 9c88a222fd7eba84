// Copyright 2026 The Parallel GPT Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <vector>

#include "pgpt/numerics/nn.hpp"
#include "pgpt/tokenizer.hpp"

namespace pgpt {

struct NARConfig {
  std::size_t semantic_vocab = 64;
  std::size_t acoustic_vocab = 64;
  std::size_t model_dim = 128;
  std::size_t n_heads = 4;
  std::size_t n_layers = 3;
  std::size_t classifier_dim = 128;
  std::size_t max_target_len = 128;
  std::size_t max_ref_len = 64;

  void validate() const {
    if (model_dim < 1 || n_heads < 1 || model_dim % n_heads != 0) {
      throw std::invalid_argument("NARConfig.n_heads must divide model_dim");
    }
    if (n_layers < 1 || classifier_dim < 1) throw std::invalid_argument("NARConfig: n_layers and classifier_dim must be >= 1");
    if (semantic_vocab < 1 || acoustic_vocab < 1) throw std::invalid_argument("NARConfig: vocabularies must be >= 1");
    if (max_target_len < 1 || max_ref_len < 1) throw std::invalid_argument("NARConfig: position tables must be >= 1");
  }
};

/// One predicted token layer for both streams.
struct TokenLayerPair {
  std::vector<int> semantic;
  std::vector<int> acoustic;
  friend bool operator==(const TokenLayerPair&, const TokenLayerPair&) = default;
};

template <typename Real>
struct NARLosses {
  Tensor<Real> second;
  Tensor<Real> third;
  Tensor<Real> total;
};

/// Mean cross-entropy over the 2T joint targets of one stage: each frame
/// contributes its semantic slice and its acoustic slice of the classifier output.
template <typename Real>
Tensor<Real> joint_layer_loss(const Tensor<Real>& logits, const TokenLayerPair& target, std::size_t semantic_vocab) {
  const std::size_t t = target.semantic.size();
  if (target.acoustic.size() != t || logits.rows() != t) {
    throw ShapeError("joint_layer_loss: " + std::to_string(logits.rows()) + " logit rows for " + std::to_string(t) +
                     " semantic and " + std::to_string(target.acoustic.size()) + " acoustic targets");
  }
  auto sem = cross_entropy(slice_cols(logits, 0, semantic_vocab), target.semantic);
  auto ac = cross_entropy(slice_cols(logits, semantic_vocab, logits.cols()), target.acoustic);
  return scale(add(sem, ac), Real(0.5));
}

/// One coupled prediction stage. Stage s knows target layers 1..s and
/// reference layers 1..s+1 and predicts target layer s+1 of both streams.
/// Every frame embeds all known tokens of both streams by summation; the
/// reference is prepended with its own segment and position embeddings and
/// attention is bidirectional.
template <typename Real>
class CoupledStage {
 public:
  CoupledStage() = default;
  CoupledStage(NARConfig config, std::size_t stage, Rng& rng) : config_(config), stage_(stage) {
    config_.validate();
    if (stage != 1 && stage != 2) throw std::invalid_argument("CoupledStage: stage must be 1 or 2");
    const std::size_t d = config_.model_dim;
    for (std::size_t l = 0; l < stage_; ++l) {
      sem_emb_.emplace_back(config_.semantic_vocab, d, rng);
      ac_emb_.emplace_back(config_.acoustic_vocab, d, rng);
    }
    for (std::size_t l = 0; l < stage_ + 1; ++l) {
      ref_sem_emb_.emplace_back(config_.semantic_vocab, d, rng);
      ref_ac_emb_.emplace_back(config_.acoustic_vocab, d, rng);
    }
    segment_ = nn::Embedding<Real>(2, d, rng);
    target_pos_ = nn::Embedding<Real>(config_.max_target_len, d, rng);
    ref_pos_ = nn::Embedding<Real>(config_.max_ref_len, d, rng);
    for (std::size_t i = 0; i < config_.n_layers; ++i) blocks_.emplace_back(d, config_.n_heads, config_.n_layers, rng);
    final_norm_ = nn::LayerNorm<Real>(d);
    classifier_hidden_ = nn::Linear<Real>(d, config_.classifier_dim, rng);
    classifier_out_ = nn::Linear<Real>(config_.classifier_dim, config_.semantic_vocab + config_.acoustic_vocab, rng);
  }

  std::size_t stage() const { return stage_; }
  std::size_t known_layers() const { return stage_; }
  std::size_t reference_layers() const { return stage_ + 1; }

  /// Joint logits [T, K_s + K_a] for the next layer of every target frame.
  Tensor<Real> logits(const ParallelTokens& known, const ParallelTokens& ref) const {
    known.validate();
    ref.validate();
    const std::size_t t = known.frames(), r = ref.frames();
    if (t == 0) return Tensor<Real>::zeros({0, config_.semantic_vocab + config_.acoustic_vocab});
    require_layers(known, known_layers(), "target");
    if (r > 0) require_layers(ref, reference_layers(), "reference");
    if (t > config_.max_target_len) throw std::length_error("target of " + std::to_string(t) + " frames exceeds max_target_len");
    if (r > config_.max_ref_len) throw std::length_error("reference of " + std::to_string(r) + " frames exceeds max_ref_len");

    auto target_rows = add(frame_embedding(known, sem_emb_, ac_emb_), nn::position_rows(target_pos_, 0, t));
    target_rows = add(target_rows, broadcast_rows(segment_row(1), t));
    Tensor<Real> h = target_rows;
    if (r > 0) {
      auto ref_rows = add(frame_embedding(ref, ref_sem_emb_, ref_ac_emb_), nn::position_rows(ref_pos_, 0, r));
      ref_rows = add(ref_rows, broadcast_rows(segment_row(0), r));
      h = concat_rows<Real>({ref_rows, target_rows});
    }
    for (const auto& block : blocks_) h = block(h, false);
    h = final_norm_(slice_rows(h, r, r + t));
    return classifier_out_(gelu(classifier_hidden_(h)));
  }

  /// Per-frame argmax within each stream's slice.
  TokenLayerPair predict(const ParallelTokens& known, const ParallelTokens& ref) const {
    NoGradGuard guard;
    const auto l = logits(known, ref);
    const std::size_t ks = config_.semantic_vocab, k = l.cols();
    TokenLayerPair out;
    for (std::size_t i = 0; i < l.rows(); ++i) {
      out.semantic.push_back(argmax(l, i, 0, ks));
      out.acoustic.push_back(argmax(l, i, ks, k) - static_cast<int>(ks));
    }
    return out;
  }

  void collect(const std::string& prefix, ParamList<Real>& out) const {
    for (std::size_t l = 0; l < sem_emb_.size(); ++l) {
      sem_emb_[l].collect(prefix + ".semantic_embedding." + std::to_string(l), out);
      ac_emb_[l].collect(prefix + ".acoustic_embedding." + std::to_string(l), out);
    }
    for (std::size_t l = 0; l < ref_sem_emb_.size(); ++l) {
      ref_sem_emb_[l].collect(prefix + ".ref_semantic_embedding." + std::to_string(l), out);
      ref_ac_emb_[l].collect(prefix + ".ref_acoustic_embedding." + std::to_string(l), out);
    }
    segment_.collect(prefix + ".segment", out);
    target_pos_.collect(prefix + ".target_position", out);
    ref_pos_.collect(prefix + ".ref_position", out);
    nn::collect_all(prefix + ".block", blocks_, out);
    final_norm_.collect(prefix + ".final_norm", out);
    classifier_hidden_.collect(prefix + ".classifier_hidden", out);
    classifier_out_.collect(prefix + ".classifier_out", out);
  }

 private:
  static void require_layers(const ParallelTokens& t, std::size_t layers, const char* what) {
    if (t.semantic.layers < layers || t.acoustic.layers < layers) {
      throw ShapeError(std::string(what) + " tokens need " + std::to_string(layers) + " layers per stream, got " +
                       std::to_string(t.semantic.layers) + "/" + std::to_string(t.acoustic.layers));
    }
  }

  Tensor<Real> segment_row(int id) const {
    const int ids[1] = {id};
    return segment_(ids);
  }

  static Tensor<Real> frame_embedding(const ParallelTokens& t, const std::vector<nn::Embedding<Real>>& sem,
                                      const std::vector<nn::Embedding<Real>>& ac) {
    Tensor<Real> sum;
    for (std::size_t l = 0; l < sem.size(); ++l) {
      auto e = add(sem[l](t.semantic.column(l)), ac[l](t.acoustic.column(l)));
      sum = l == 0 ? e : add(sum, e);
    }
    return sum;
  }

  static int argmax(const Tensor<Real>& m, std::size_t row, std::size_t begin, std::size_t end) {
    std::size_t best = begin;
    for (std::size_t j = begin + 1; j < end; ++j)
      if (m[row * m.cols() + j] > m[row * m.cols() + best]) best = j;
    return static_cast<int>(best);
  }

  NARConfig config_;
  std::size_t stage_ = 1;
  std::vector<nn::Embedding<Real>> sem_emb_, ac_emb_, ref_sem_emb_, ref_ac_emb_;
  nn::Embedding<Real> segment_, target_pos_, ref_pos_;
  std::vector<nn::TransformerBlock<Real>> blocks_;
  nn::LayerNorm<Real> final_norm_;
  nn::Linear<Real> classifier_hidden_, classifier_out_;
};

/// Target layer `layer` (0-based) of both streams.
inline TokenLayerPair layer_of(const ParallelTokens& t, std::size_t layer) {
  return {t.semantic.column(layer), t.acoustic.column(layer)};
}

inline TokenMatrix with_layer(const TokenMatrix& m, const std::vector<int>& ids) {
  if (ids.size() != m.frames) throw ShapeError("with_layer: frame count mismatch");
  TokenMatrix extra(m.frames, 1);
  extra.ids = ids;
  return append_layers(m, extra);
}

/// Two coupled stages: layer 2 from the top layer, then layer 3 from layers 1-2.
template <typename Real>
class CoupledNAR {
 public:
  CoupledNAR() = default;
  CoupledNAR(NARConfig config, Rng& rng) : config_(config), stage1_(config, 1, rng), stage2_(config, 2, rng) {}

  const NARConfig& config() const { return config_; }
  const CoupledStage<Real>& stage1() const { return stage1_; }
  const CoupledStage<Real>& stage2() const { return stage2_; }

  TokenLayerPair predict_layer2(const ParallelTokens& top, const ParallelTokens& ref) const {
    return stage1_.predict(leading(top, 1), leading(ref, 2));
  }

  TokenLayerPair predict_layer3(const ParallelTokens& layers12, const ParallelTokens& ref) const {
    return stage2_.predict(leading(layers12, 2), leading(ref, 3));
  }

  /// Completes the top layer to all three layers; layer 1 is never altered.
  ParallelTokens complete_tokens(const ParallelTokens& top, const ParallelTokens& ref) const {
    top.validate();
    auto out = leading(top, 1);
    const auto second = predict_layer2(out, ref);
    out = {with_layer(out.semantic, second.semantic), with_layer(out.acoustic, second.acoustic)};
    const auto third = predict_layer3(out, ref);
    out = {with_layer(out.semantic, third.semantic), with_layer(out.acoustic, third.acoustic)};
    out.validate();
    return out;
  }

  /// Teacher-forced losses on ground-truth 3-layer tokens.
  NARLosses<Real> loss(const ParallelTokens& truth, const ParallelTokens& ref) const {
    NARLosses<Real> out;
    out.second = joint_layer_loss(stage1_.logits(leading(truth, 1), leading(ref, 2)), layer_of(truth, 1), config_.semantic_vocab);
    out.third = joint_layer_loss(stage2_.logits(leading(truth, 2), leading(ref, 3)), layer_of(truth, 2), config_.semantic_vocab);
    out.total = add(out.second, out.third);
    return out;
  }

  void collect(const std::string& prefix, ParamList<Real>& out) const {
    stage1_.collect(prefix + ".stage1", out);
    stage2_.collect(prefix + ".stage2", out);
  }

 private:
  static ParallelTokens leading(const ParallelTokens& t, std::size_t layers) {
    if (t.frames() == 0) return {TokenMatrix(0, layers), TokenMatrix(0, layers)};
    if (t.semantic.layers < layers || t.acoustic.layers < layers) {
      throw ShapeError("need " + std::to_string(layers) + " token layers per stream, got " +
                       std::to_string(t.semantic.layers) + "/" + std::to_string(t.acoustic.layers));
    }
    return {t.semantic.leading(layers), t.acoustic.leading(layers)};
  }

  NARConfig config_;
  CoupledStage<Real> stage1_, stage2_;
};

}  // namespace pgpt
