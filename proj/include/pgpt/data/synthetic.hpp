// Copyright 2026 The Parallel GPT Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "pgpt/data/features.hpp"
#include "pgpt/data/vocabulary.hpp"
#include "pgpt/numerics/rng.hpp"

namespace pgpt {

/// Generator settings for a corpus with known latent factors.
///
/// Utterance i is spoken by speaker i % n_speakers and reads text
/// (i / n_speakers) % n_texts, so every text is read by every speaker once
/// the corpus holds n_speakers * n_texts utterances. Durations belong to the
/// text, which keeps frame alignment identical across speakers.
struct SyntheticSpec {
  std::size_t vocab_size = 32;
  std::size_t n_speakers = 4;
  std::size_t n_texts = 8;
  std::size_t n_utterances = 32;
  std::size_t min_symbols = 4;
  std::size_t max_symbols = 8;
  std::size_t min_frames_per_symbol = 2;
  std::size_t max_frames_per_symbol = 4;
  std::size_t semantic_dim = 64;
  std::size_t acoustic_dim = 64;
  std::size_t speaker_frame_dim = 64;
  std::size_t speaker_global_dim = 16;
  std::size_t mel_dim = 32;
  std::size_t speaker_latent_dim = 8;
  std::size_t prosody_dim = 2;
  std::size_t acoustic_classes = 8;
  double noise_scale = 0.0;
  std::uint64_t seed = 1;

  void validate() const {
    auto positive = [](std::size_t v, const char* name) {
      if (v < 1) throw std::invalid_argument(std::string("SyntheticSpec.") + name + " must be >= 1");
    };
    positive(n_speakers, "n_speakers");
    positive(n_texts, "n_texts");
    positive(n_utterances, "n_utterances");
    positive(min_symbols, "min_symbols");
    positive(min_frames_per_symbol, "min_frames_per_symbol");
    positive(semantic_dim, "semantic_dim");
    positive(acoustic_dim, "acoustic_dim");
    positive(speaker_frame_dim, "speaker_frame_dim");
    positive(speaker_global_dim, "speaker_global_dim");
    positive(mel_dim, "mel_dim");
    positive(speaker_latent_dim, "speaker_latent_dim");
    positive(prosody_dim, "prosody_dim");
    positive(acoustic_classes, "acoustic_classes");
    if (vocab_size <= kFirstSymbolId) throw std::invalid_argument("SyntheticSpec.vocab_size must exceed 3");
    if (max_symbols < min_symbols) throw std::invalid_argument("SyntheticSpec: max_symbols < min_symbols");
    if (max_frames_per_symbol < min_frames_per_symbol) {
      throw std::invalid_argument("SyntheticSpec: max_frames_per_symbol < min_frames_per_symbol");
    }
    if (!(noise_scale >= 0.0)) throw std::invalid_argument("SyntheticSpec.noise_scale must be >= 0");
  }
};

struct Utterance {
  std::string text;
  FeatureBundle bundle;
  std::size_t speaker_id = 0;
  std::size_t text_id = 0;
};

/// Ground-truth factors behind a synthetic corpus, kept for oracle tests.
struct SyntheticLatents {
  std::vector<std::vector<float>> speaker_latents;     // n_speakers x Z
  std::vector<std::vector<float>> semantic_templates;  // vocab x Ds (rows < 3 unused)
  std::vector<std::size_t> symbol_class;               // vocab
  std::vector<std::vector<int>> frame_symbols;         // per utterance, per frame
  std::vector<Matrix> prosody;                         // per utterance, T x P
};

struct SyntheticCorpus {
  SyntheticSpec spec;
  Vocabulary vocabulary;
  std::vector<Utterance> utterances;
  SyntheticLatents latents;
};

namespace detail {

inline Matrix gaussian_matrix(std::size_t r, std::size_t c, double stddev, Rng& rng) {
  Matrix m(r, c);
  for (auto& v : m.data) v = static_cast<float>(rng.normal() * stddev);
  return m;
}

inline std::vector<float> mat_vec(const Matrix& m, std::span<const float> v) {
  std::vector<float> out(m.rows, 0.0f);
  for (std::size_t r = 0; r < m.rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < m.cols; ++c) s += double(m(r, c)) * v[c];
    out[r] = static_cast<float>(s);
  }
  return out;
}

}  // namespace detail

/// Builds the corpus. Features per frame t of utterance (speaker s, text k):
///   semantic[t]       = template[symbol(t)] + noise
///   acoustic[t]       = A_s * prosody(t) + b_s + class_signature[class(symbol(t))] + noise
///   speaker_frames[t] = F * z_s + noise
///   speaker_global    = G * z_s
///   mel[t]            = P * [semantic_clean[t]; acoustic_clean[t]]
/// with A_s, b_s linear in the speaker latent z_s and P a fixed projection.
inline SyntheticCorpus generate_synthetic_corpus(const SyntheticSpec& spec) {
  spec.validate();
  SyntheticCorpus corpus;
  corpus.spec = spec;
  corpus.vocabulary = Vocabulary::synthetic(spec.vocab_size);

  const std::size_t z_dim = spec.speaker_latent_dim;
  const std::size_t ds = spec.semantic_dim, da = spec.acoustic_dim;
  const std::size_t p_dim = spec.prosody_dim;

  Rng factor_rng(spec.seed, 1);
  auto& lat = corpus.latents;
  for (std::size_t s = 0; s < spec.n_speakers; ++s) {
    std::vector<float> z(z_dim);
    for (auto& v : z) v = static_cast<float>(factor_rng.normal());
    lat.speaker_latents.push_back(std::move(z));
  }
  lat.semantic_templates.assign(spec.vocab_size, std::vector<float>(ds, 0.0f));
  lat.symbol_class.assign(spec.vocab_size, 0);
  for (std::size_t v = kFirstSymbolId; v < spec.vocab_size; ++v) {
    for (auto& x : lat.semantic_templates[v]) x = static_cast<float>(factor_rng.normal());
    lat.symbol_class[v] = (v - kFirstSymbolId) % spec.acoustic_classes;
  }
  const Matrix class_signature = detail::gaussian_matrix(spec.acoustic_classes, da, 1.0, factor_rng);
  // Speaker-dependent affine map of the prosody trajectory.
  const Matrix prosody_basis = detail::gaussian_matrix(da * p_dim, z_dim, 0.3 / std::sqrt(double(z_dim)), factor_rng);
  const Matrix offset_basis = detail::gaussian_matrix(da, z_dim, 0.5 / std::sqrt(double(z_dim)), factor_rng);
  const Matrix frame_basis = detail::gaussian_matrix(spec.speaker_frame_dim, z_dim, 1.0 / std::sqrt(double(z_dim)), factor_rng);
  const Matrix global_basis = detail::gaussian_matrix(spec.speaker_global_dim, z_dim, 1.0 / std::sqrt(double(z_dim)), factor_rng);
  const Matrix mel_projection = detail::gaussian_matrix(spec.mel_dim, ds + da, 1.0 / std::sqrt(double(ds + da)), factor_rng);

  // Texts and their durations.
  Rng text_rng(spec.seed, 2);
  std::vector<std::vector<int>> texts;
  std::vector<std::vector<std::size_t>> durations;
  const std::size_t n_symbols = spec.vocab_size - kFirstSymbolId;
  for (std::size_t k = 0; k < spec.n_texts; ++k) {
    const std::size_t len = spec.min_symbols + text_rng.uniform_int(spec.max_symbols - spec.min_symbols + 1);
    std::vector<int> ids;
    std::vector<std::size_t> dur;
    for (std::size_t i = 0; i < len; ++i) {
      ids.push_back(kFirstSymbolId + static_cast<int>(text_rng.uniform_int(n_symbols)));
      dur.push_back(spec.min_frames_per_symbol +
                    text_rng.uniform_int(spec.max_frames_per_symbol - spec.min_frames_per_symbol + 1));
    }
    texts.push_back(std::move(ids));
    durations.push_back(std::move(dur));
  }

  for (std::size_t u = 0; u < spec.n_utterances; ++u) {
    Rng utt_rng(spec.seed, 1000 + u);
    const std::size_t s = u % spec.n_speakers;
    const std::size_t k = (u / spec.n_speakers) % spec.n_texts;
    const auto& z = lat.speaker_latents[s];

    std::vector<int> frame_symbols;
    for (std::size_t i = 0; i < texts[k].size(); ++i) frame_symbols.insert(frame_symbols.end(), durations[k][i], texts[k][i]);
    const std::size_t t_len = frame_symbols.size();

    // Smooth prosody: one sinusoid per prosody dimension with random frequency and phase.
    Matrix prosody(t_len, p_dim);
    for (std::size_t j = 0; j < p_dim; ++j) {
      const double cycles = utt_rng.uniform(0.5, 2.0);
      const double phase = utt_rng.uniform(0.0, 2.0 * std::numbers::pi);
      for (std::size_t t = 0; t < t_len; ++t) {
        prosody(t, j) = static_cast<float>(std::sin(2.0 * std::numbers::pi * cycles * double(t) / double(t_len) + phase));
      }
    }

    const auto affine = detail::mat_vec(prosody_basis, z);  // da x p
    const auto offset = detail::mat_vec(offset_basis, z);
    const auto spk_frame = detail::mat_vec(frame_basis, z);

    Utterance utt;
    utt.speaker_id = s;
    utt.text_id = k;
    FeatureBundle& b = utt.bundle;
    b.symbols.push_back(kBosId);
    b.symbols.insert(b.symbols.end(), texts[k].begin(), texts[k].end());
    b.symbols.push_back(kEosId);
    utt.text = corpus.vocabulary.decode(b.symbols);

    b.semantic = Matrix(t_len, ds);
    b.acoustic = Matrix(t_len, da);
    b.speaker_frames = Matrix(t_len, spec.speaker_frame_dim);
    b.mel = Matrix(t_len, spec.mel_dim);
    b.speaker_global = detail::mat_vec(global_basis, z);

    std::vector<float> clean(ds + da);
    for (std::size_t t = 0; t < t_len; ++t) {
      const int sym = frame_symbols[t];
      for (std::size_t d = 0; d < ds; ++d) clean[d] = lat.semantic_templates[sym][d];
      for (std::size_t d = 0; d < da; ++d) {
        double v = offset[d] + class_signature(lat.symbol_class[sym], d);
        for (std::size_t j = 0; j < p_dim; ++j) v += affine[d * p_dim + j] * prosody(t, j);
        clean[ds + d] = static_cast<float>(v);
      }
      const auto mel = detail::mat_vec(mel_projection, clean);
      std::copy(mel.begin(), mel.end(), b.mel.row(t).begin());
      for (std::size_t d = 0; d < ds; ++d) b.semantic(t, d) = clean[d] + float(spec.noise_scale * utt_rng.normal());
      for (std::size_t d = 0; d < da; ++d) b.acoustic(t, d) = clean[ds + d] + float(spec.noise_scale * utt_rng.normal());
      for (std::size_t d = 0; d < spec.speaker_frame_dim; ++d) {
        b.speaker_frames(t, d) = spk_frame[d] + float(spec.noise_scale * utt_rng.normal());
      }
    }
    lat.frame_symbols.push_back(std::move(frame_symbols));
    lat.prosody.push_back(std::move(prosody));
    corpus.utterances.push_back(std::move(utt));
  }
  return corpus;
}

}  // namespace pgpt
