// Copyright 2026 The Parallel GPT Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <vector>

#include "pgpt/data/vocabulary.hpp"
#include "pgpt/numerics/nn.hpp"
#include "pgpt/tokenizer.hpp"

namespace pgpt {

struct ARConfig {
  std::size_t text_vocab = 32;
  std::size_t semantic_vocab = 64;
  std::size_t acoustic_vocab = 64;
  std::size_t model_dim = 128;
  std::size_t n_heads = 4;
  std::size_t n_layers = 4;
  std::size_t stop_hidden = 64;
  std::size_t max_text_len = 64;    // text position table rows
  std::size_t max_speech_len = 128; // shared speech position table rows (reference + target)
  std::size_t max_len = 64;         // generation cap in frames
  // Text ids reserved by the vocabulary. Speech streams carry no special
  // tokens: the stop head emits EOS outside both vocabularies.
  int text_pad_id = kPadId;
  int text_bos_id = kBosId;
  int text_eos_id = kEosId;
  /// false: one head over the merged K_s * K_a vocabulary.
  bool parallel = true;
  /// true: the AR trunk predicts all `rvq_layers` of both streams (six heads).
  bool only_ar = false;
  std::size_t rvq_layers = 3;

  void validate() const {
    if (model_dim < 2 || model_dim % 2 != 0) throw std::invalid_argument("ARConfig.model_dim must be even");
    if (n_heads < 1 || model_dim % n_heads != 0) throw std::invalid_argument("ARConfig.n_heads must divide model_dim");
    if (n_layers < 1) throw std::invalid_argument("ARConfig.n_layers must be >= 1");
    if (max_len < 1) throw std::invalid_argument("ARConfig.max_len must be >= 1");
    if (text_vocab <= std::size_t(kFirstSymbolId)) throw std::invalid_argument("ARConfig.text_vocab must exceed 3");
    if (semantic_vocab < 1 || acoustic_vocab < 1) throw std::invalid_argument("ARConfig: speech vocabularies must be >= 1");
    if (max_text_len < 1 || max_speech_len < 1) throw std::invalid_argument("ARConfig: position tables must be >= 1");
    if (stop_hidden < 1) throw std::invalid_argument("ARConfig.stop_hidden must be >= 1");
    if (only_ar && rvq_layers < 1) throw std::invalid_argument("ARConfig.rvq_layers must be >= 1");
    if (only_ar && !parallel) throw std::invalid_argument("ARConfig: only_ar requires parallel heads");
  }

  /// Token layers consumed and produced per stream.
  std::size_t stream_layers() const { return only_ar ? rvq_layers : 1; }
};

/// Logits over the target frames. Rows of `semantic`/`acoustic` predict
/// frame t; `stop` has one extra row: row t decides whether to halt before
/// frame t.
template <typename Real>
struct ARLogits {
  std::vector<Tensor<Real>> semantic;  // per layer, [T, K_s]
  std::vector<Tensor<Real>> acoustic;  // per layer, [T, K_a]
  Tensor<Real> joint;                  // merged mode only, [T, K_s * K_a]
  Tensor<Real> stop;                   // [T + 1, 1]
};

template <typename Real>
struct ARLosses {
  Tensor<Real> semantic;
  Tensor<Real> acoustic;
  Tensor<Real> stop;
  Tensor<Real> total;
};

struct GenerateOptions {
  std::size_t top_k = 8;
  double temperature = 1.0;
  std::size_t max_len = 0;  // 0 uses ARConfig.max_len
  std::uint64_t seed = 0;
};

struct GenerationResult {
  ParallelTokens tokens;
  bool terminated = false;  // the stop head fired
  bool truncated = false;   // the length cap was reached first
};

/// Stop labels for T target frames: 0 before each frame, 1 after the last.
inline std::vector<double> stop_labels(std::size_t frames) {
  std::vector<double> labels(frames + 1, 0.0);
  labels[frames] = 1.0;
  return labels;
}

/// Top-k sampling from one logit row at the given temperature. Ties keep
/// the lower index; k = 1 is argmax.
template <typename Real>
int sample_top_k(std::span<const Real> logits, std::size_t top_k, double temperature, Rng& rng) {
  if (logits.empty()) throw std::invalid_argument("sample_top_k: empty logits");
  if (top_k < 1) throw std::invalid_argument("sample_top_k: top_k must be >= 1");
  if (!(temperature > 0.0)) throw std::invalid_argument("sample_top_k: temperature must be > 0");
  const std::size_t k = std::min(top_k, logits.size());
  std::vector<std::size_t> order(logits.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return logits[a] > logits[b]; });
  if (k == 1) return static_cast<int>(order[0]);
  std::vector<double> p(k);
  const double top = double(logits[order[0]]);
  double z = 0.0;
  for (std::size_t i = 0; i < k; ++i) z += p[i] = std::exp((double(logits[order[i]]) - top) / temperature);
  double u = rng.uniform() * z;
  for (std::size_t i = 0; i < k; ++i) {
    if (u < p[i]) return static_cast<int>(order[i]);
    u -= p[i];
  }
  return static_cast<int>(order[k - 1]);
}

/// Dual-stream decoder-only transformer over [text ; reference ; target].
/// The final state is split in half: the first half feeds the semantic
/// heads, the second half the acoustic heads, and the full state the stop head.
template <typename Real>
class ParallelAR {
 public:
  ParallelAR() = default;
  ParallelAR(ARConfig config, Rng& rng) : config_(config) {
    config_.validate();
    const std::size_t d = config_.model_dim;
    text_emb_ = nn::Embedding<Real>(config_.text_vocab, d, rng);
    text_pos_ = nn::Embedding<Real>(config_.max_text_len, d, rng);
    speech_pos_ = nn::Embedding<Real>(config_.max_speech_len, d, rng);
    if (config_.parallel) {
      for (std::size_t l = 0; l < config_.stream_layers(); ++l) {
        sem_emb_.emplace_back(config_.semantic_vocab, d, rng);
        ac_emb_.emplace_back(config_.acoustic_vocab, d, rng);
        sem_head_.emplace_back(d / 2, config_.semantic_vocab, rng);
        ac_head_.emplace_back(d / 2, config_.acoustic_vocab, rng);
      }
    } else {
      joint_emb_ = nn::Embedding<Real>(config_.semantic_vocab * config_.acoustic_vocab, d, rng);
      joint_head_ = nn::Linear<Real>(d, config_.semantic_vocab * config_.acoustic_vocab, rng);
    }
    for (std::size_t i = 0; i < config_.n_layers; ++i) blocks_.emplace_back(d, config_.n_heads, config_.n_layers, rng);
    final_norm_ = nn::LayerNorm<Real>(d);
    stop_hidden_ = nn::Linear<Real>(d, config_.stop_hidden, rng);
    stop_out_ = nn::Linear<Real>(config_.stop_hidden, 1, rng);
  }

  const ARConfig& config() const { return config_; }
  nn::Linear<Real>& stop_output() { return stop_out_; }

  /// Embedding sequence [N_text + T_ref + T_tgt, d].
  Tensor<Real> assemble_input(std::span<const int> text, const ParallelTokens& ref,
                              const ParallelTokens* target = nullptr) const {
    if (text.empty()) throw std::invalid_argument("assemble_input: text must be non-empty");
    if (text.size() > config_.max_text_len) {
      throw std::length_error("text of " + std::to_string(text.size()) + " ids exceeds max_text_len " +
                              std::to_string(config_.max_text_len));
    }
    check_stream(ref, "reference");
    const std::size_t t_ref = ref.frames();
    const std::size_t t_tgt = target ? target->frames() : 0;
    if (target) check_stream(*target, "target");
    if (t_ref + t_tgt > config_.max_speech_len) {
      throw std::length_error("speech of " + std::to_string(t_ref + t_tgt) + " frames exceeds max_speech_len " +
                              std::to_string(config_.max_speech_len));
    }
    std::vector<Tensor<Real>> parts;
    parts.push_back(add(text_emb_(text), nn::position_rows(text_pos_, 0, text.size())));
    if (t_ref > 0) parts.push_back(add(speech_embedding(ref), nn::position_rows(speech_pos_, 0, t_ref)));
    if (t_tgt > 0) parts.push_back(add(speech_embedding(*target), nn::position_rows(speech_pos_, t_ref, t_tgt)));
    return parts.size() == 1 ? parts[0] : concat_rows(parts);
  }

  /// Final hidden states of the causal stack over an assembly.
  Tensor<Real> hidden(const Tensor<Real>& assembly) const {
    auto h = assembly;
    for (const auto& block : blocks_) h = block(h, true);
    return final_norm_(h);
  }

  /// Teacher-forced logits for `target` given text and reference.
  ARLogits<Real> forward(std::span<const int> text, const ParallelTokens& ref, const ParallelTokens& target) const {
    const auto h = hidden(assemble_input(text, ref, &target));
    const std::size_t first = text.size() + ref.frames() - 1;
    const std::size_t t_tgt = target.frames();
    ARLogits<Real> out;
    out.stop = stop_logits(slice_rows(h, first, first + t_tgt + 1));
    if (t_tgt == 0) return out;
    const auto states = slice_rows(h, first, first + t_tgt);
    if (config_.parallel) {
      const auto sem_half = slice_cols(states, 0, config_.model_dim / 2);
      const auto ac_half = slice_cols(states, config_.model_dim / 2, config_.model_dim);
      for (std::size_t l = 0; l < config_.stream_layers(); ++l) {
        out.semantic.push_back(sem_head_[l](sem_half));
        out.acoustic.push_back(ac_head_[l](ac_half));
      }
    } else {
      out.joint = joint_head_(states);
    }
    return out;
  }

  /// Per-token mean cross-entropy on each stream plus BCE on the stop rows.
  ARLosses<Real> loss(const ARLogits<Real>& logits, const ParallelTokens& target) const {
    ARLosses<Real> out;
    const auto labels = stop_labels(target.frames());
    out.stop = bce_with_logits(logits.stop, std::vector<Real>(labels.begin(), labels.end()));
    if (target.frames() == 0) {
      out.semantic = Tensor<Real>::scalar(0);
      out.acoustic = Tensor<Real>::scalar(0);
    } else if (config_.parallel) {
      for (std::size_t l = 0; l < config_.stream_layers(); ++l) {
        auto s = cross_entropy(logits.semantic[l], target.semantic.column(l));
        auto a = cross_entropy(logits.acoustic[l], target.acoustic.column(l));
        out.semantic = l == 0 ? s : add(out.semantic, s);
        out.acoustic = l == 0 ? a : add(out.acoustic, a);
      }
    } else {
      out.semantic = cross_entropy(logits.joint, joint_ids(target));
      out.acoustic = Tensor<Real>::scalar(0);
    }
    out.total = add(add(out.semantic, out.acoustic), out.stop);
    return out;
  }

  /// P(stop) after the given prefix.
  double stop_probability(std::span<const int> text, const ParallelTokens& ref, const ParallelTokens& prefix) const {
    NoGradGuard guard;
    return 1.0 / (1.0 + std::exp(-double(forward_step(text, ref, prefix).stop.item())));
  }

  GenerationResult generate(std::span<const int> text, const ParallelTokens& ref, const GenerateOptions& options) const {
    NoGradGuard guard;
    const std::size_t cap = options.max_len > 0 ? options.max_len : config_.max_len;
    const std::size_t layers = config_.stream_layers();
    Rng rng(options.seed, 0x67656e6572617465ull);
    GenerationResult result;
    result.tokens.semantic = TokenMatrix(0, layers);
    result.tokens.acoustic = TokenMatrix(0, layers);
    auto& sem = result.tokens.semantic;
    auto& ac = result.tokens.acoustic;
    while (true) {
      const auto step = forward_step(text, ref, result.tokens);
      const double p_stop = 1.0 / (1.0 + std::exp(-double(step.stop.item())));
      if (p_stop > 0.5) {
        result.terminated = true;
        break;
      }
      if (sem.frames >= cap) {
        result.truncated = true;
        break;
      }
      std::vector<int> s_ids(layers), a_ids(layers);
      if (config_.parallel) {
        for (std::size_t l = 0; l < layers; ++l) {
          s_ids[l] = sample_top_k<Real>(step.semantic[l].data(), options.top_k, options.temperature, rng);
          a_ids[l] = sample_top_k<Real>(step.acoustic[l].data(), options.top_k, options.temperature, rng);
        }
      } else {
        const int joint = sample_top_k<Real>(step.joint.data(), options.top_k, options.temperature, rng);
        s_ids[0] = joint / static_cast<int>(config_.acoustic_vocab);
        a_ids[0] = joint % static_cast<int>(config_.acoustic_vocab);
      }
      sem = append_frame(sem, s_ids);
      ac = append_frame(ac, a_ids);
    }
    return result;
  }

  /// Logits for the next frame after `prefix` (one row per head) and the
  /// stop logit of the same state.
  ARLogits<Real> forward_step(std::span<const int> text, const ParallelTokens& ref, const ParallelTokens& prefix) const {
    const auto h = hidden(assemble_input(text, ref, &prefix));
    const auto state = slice_rows(h, h.rows() - 1, h.rows());
    ARLogits<Real> out;
    out.stop = stop_logits(state);
    if (config_.parallel) {
      for (std::size_t l = 0; l < config_.stream_layers(); ++l) {
        out.semantic.push_back(sem_head_[l](slice_cols(state, 0, config_.model_dim / 2)));
        out.acoustic.push_back(ac_head_[l](slice_cols(state, config_.model_dim / 2, config_.model_dim)));
      }
    } else {
      out.joint = joint_head_(state);
    }
    return out;
  }

  void collect(const std::string& prefix, ParamList<Real>& out) const {
    text_emb_.collect(prefix + ".text_embedding", out);
    text_pos_.collect(prefix + ".text_position", out);
    speech_pos_.collect(prefix + ".speech_position", out);
    for (std::size_t l = 0; l < sem_emb_.size(); ++l) {
      const std::string layer = "." + std::to_string(l);
      sem_emb_[l].collect(prefix + ".semantic_embedding" + layer, out);
      ac_emb_[l].collect(prefix + ".acoustic_embedding" + layer, out);
    }
    if (!config_.parallel) joint_emb_.collect(prefix + ".joint_embedding", out);
    nn::collect_all(prefix + ".block", blocks_, out);
    final_norm_.collect(prefix + ".final_norm", out);
    for (std::size_t l = 0; l < sem_head_.size(); ++l) {
      const std::string layer = "." + std::to_string(l);
      sem_head_[l].collect(prefix + ".semantic_head" + layer, out);
      ac_head_[l].collect(prefix + ".acoustic_head" + layer, out);
    }
    if (!config_.parallel) joint_head_.collect(prefix + ".joint_head", out);
    stop_hidden_.collect(prefix + ".stop_hidden", out);
    stop_out_.collect(prefix + ".stop_out", out);
  }

  /// Leading layers of `tokens` in the shape this model consumes.
  ParallelTokens input_layers(const ParallelTokens& tokens) const {
    const std::size_t l = config_.stream_layers();
    if (tokens.semantic.layers < l || tokens.acoustic.layers < l) {
      throw ShapeError("AR model needs " + std::to_string(l) + " token layers per stream");
    }
    return {tokens.semantic.leading(l), tokens.acoustic.leading(l)};
  }

 private:
  void check_stream(const ParallelTokens& tokens, const char* what) const {
    tokens.validate();
    const std::size_t l = config_.stream_layers();
    if (tokens.frames() > 0 && (tokens.semantic.layers != l || tokens.acoustic.layers != l)) {
      throw ShapeError(std::string(what) + " tokens need exactly " + std::to_string(l) + " layers per stream");
    }
  }

  std::vector<int> joint_ids(const ParallelTokens& t) const {
    std::vector<int> ids(t.frames());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const int s = t.semantic(i, 0), a = t.acoustic(i, 0);
      if (s < 0 || a < 0 || s >= int(config_.semantic_vocab) || a >= int(config_.acoustic_vocab)) {
        throw TokenRangeError("merged token pair (" + std::to_string(s) + "," + std::to_string(a) + ") out of range");
      }
      ids[i] = s * static_cast<int>(config_.acoustic_vocab) + a;
    }
    return ids;
  }

  Tensor<Real> speech_embedding(const ParallelTokens& t) const {
    if (!config_.parallel) return joint_emb_(joint_ids(t));
    Tensor<Real> sum;
    for (std::size_t l = 0; l < config_.stream_layers(); ++l) {
      auto frame = add(sem_emb_[l](t.semantic.column(l)), ac_emb_[l](t.acoustic.column(l)));
      sum = l == 0 ? frame : add(sum, frame);
    }
    return sum;
  }

  Tensor<Real> stop_logits(const Tensor<Real>& states) const { return stop_out_(gelu(stop_hidden_(states))); }

  static TokenMatrix append_frame(const TokenMatrix& m, const std::vector<int>& ids) {
    TokenMatrix out(m.frames + 1, m.layers);
    std::copy(m.ids.begin(), m.ids.end(), out.ids.begin());
    std::copy(ids.begin(), ids.end(), out.ids.begin() + m.ids.size());
    return out;
  }

  ARConfig config_;
  nn::Embedding<Real> text_emb_, text_pos_, speech_pos_;
  std::vector<nn::Embedding<Real>> sem_emb_, ac_emb_;
  nn::Embedding<Real> joint_emb_;
  std::vector<nn::TransformerBlock<Real>> blocks_;
  nn::LayerNorm<Real> final_norm_;
  std::vector<nn::Linear<Real>> sem_head_, ac_head_;
  nn::Linear<Real> joint_head_;
  nn::Linear<Real> stop_hidden_, stop_out_;
};

}  // namespace pgpt
