// Copyright 2026 The Parallel GPT Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pgpt/pipeline/corpus_io.hpp"
#include "pgpt/pipeline/models.hpp"

namespace pgpt {

/// Frames [begin, end) of both streams.
inline ParallelTokens slice_frames(const ParallelTokens& t, std::size_t begin, std::size_t end) {
  return {t.semantic.slice(begin, end), t.acoustic.slice(begin, end)};
}

inline ParallelTokens leading_layers(const ParallelTokens& t, std::size_t layers) {
  if (t.semantic.layers < layers || t.acoustic.layers < layers) {
    throw ShapeError("need " + std::to_string(layers) + " token layers per stream");
  }
  return {t.semantic.leading(layers), t.acoustic.leading(layers)};
}

/// Tokens and speaker conditions of every utterance under a frozen tokenizer.
struct EncodedDataset {
  std::vector<EncodedSpeech> utterances;
  std::vector<std::size_t> reference;  // reference utterance per entry
};

inline EncodedDataset encode_dataset(const ParallelTokenizer<float>& tokenizer, const Dataset& data) {
  EncodedDataset e;
  for (std::size_t i = 0; i < data.size(); ++i) {
    e.utterances.push_back(tokenizer.encode_speech(data.entries[i].bundle));
    e.reference.push_back(reference_index(data, i));
  }
  return e;
}

/// Leading `max_frames` frames of the reference tokens for entry i.
inline ParallelTokens reference_tokens(const EncodedDataset& e, std::size_t i, std::size_t max_frames) {
  const auto& tokens = e.utterances[e.reference[i]].tokens;
  return slice_frames(tokens, 0, std::min(max_frames, tokens.frames()));
}

/// Mean squared error over the mean per-column variance of `truth`.
inline double relative_mse(const Matrix& pred, const Matrix& truth) {
  const double var = total_variance(truth), err = mean_squared_error(pred, truth);
  return var > 0 ? err / var : (err > 0 ? std::numeric_limits<double>::infinity() : 0.0);
}

struct CodebookReport {
  std::string stream;
  std::size_t layer = 0;
  double utilization = 0.0;
  double perplexity = 0.0;
  friend bool operator==(const CodebookReport&, const CodebookReport&) = default;
};

struct TokenizerMetrics {
  double semantic_relative_mse = 0.0;
  double acoustic_relative_mse = 0.0;
  std::vector<CodebookReport> codebooks;
};

inline TokenizerMetrics tokenizer_metrics(const ParallelTokenizer<float>& tok, const Dataset& data) {
  std::vector<const Matrix*> sem, ac;
  for (const auto& e : data.entries) {
    sem.push_back(&e.bundle.semantic);
    ac.push_back(&e.bundle.acoustic);
  }
  const Matrix s = stack_rows(sem), a = stack_rows(ac);
  TokenizerMetrics m;
  m.semantic_relative_mse = relative_mse(tok.semantic_rvq().decode(tok.semantic_rvq().encode(s).tokens), s);
  m.acoustic_relative_mse = relative_mse(tok.acoustic_rvq().decode(tok.acoustic_rvq().encode(a).tokens), a);
  auto add_usage = [&](const char* stream, const RVQStack& stack, const Matrix& frames) {
    const auto usage = stack.usage(frames);
    for (std::size_t l = 0; l < usage.size(); ++l) m.codebooks.push_back({stream, l + 1, usage[l].utilization, usage[l].perplexity});
  };
  add_usage("semantic", tok.semantic_rvq(), s);
  add_usage("acoustic", tok.acoustic_rvq(), a);
  return m;
}

struct ARMetrics {
  std::vector<double> semantic_accuracy;  // per predicted layer
  std::vector<double> acoustic_accuracy;
  double stop_accuracy = 0.0;
};

inline int row_argmax(const Tensor<float>& m, std::size_t row) {
  const std::size_t k = m.cols();
  const auto d = m.data().subspan(row * k, k);
  return static_cast<int>(std::max_element(d.begin(), d.end()) - d.begin());
}

/// Teacher-forced next-frame accuracy per stream and layer, plus stop accuracy.
inline ARMetrics ar_metrics(const ParallelAR<float>& ar, const Dataset& data, const EncodedDataset& enc,
                            std::size_t ref_max_frames) {
  NoGradGuard guard;
  const auto& c = ar.config();
  const std::size_t layers = c.stream_layers();
  std::vector<double> sem_hits(layers, 0.0), ac_hits(layers, 0.0);
  double stop_hits = 0.0, frames = 0.0, stop_rows = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto target = ar.input_layers(enc.utterances[i].tokens);
    const auto ref = ar.input_layers(reference_tokens(enc, i, ref_max_frames));
    const auto logits = ar.forward(data.entries[i].bundle.symbols, ref, target);
    const std::size_t t = target.frames();
    for (std::size_t f = 0; f < t; ++f) {
      if (c.parallel) {
        for (std::size_t l = 0; l < layers; ++l) {
          sem_hits[l] += row_argmax(logits.semantic[l], f) == target.semantic(f, l);
          ac_hits[l] += row_argmax(logits.acoustic[l], f) == target.acoustic(f, l);
        }
      } else {
        const int joint = row_argmax(logits.joint, f);
        sem_hits[0] += joint / int(c.acoustic_vocab) == target.semantic(f, 0);
        ac_hits[0] += joint % int(c.acoustic_vocab) == target.acoustic(f, 0);
      }
    }
    const auto labels = stop_labels(t);
    for (std::size_t r = 0; r <= t; ++r) stop_hits += (logits.stop[r] > 0.0f) == (labels[r] > 0.5);
    frames += double(t);
    stop_rows += double(t + 1);
  }
  ARMetrics m;
  for (std::size_t l = 0; l < layers; ++l) {
    m.semantic_accuracy.push_back(sem_hits[l] / std::max(1.0, frames));
    m.acoustic_accuracy.push_back(ac_hits[l] / std::max(1.0, frames));
  }
  m.stop_accuracy = stop_hits / std::max(1.0, stop_rows);
  return m;
}

struct NARMetrics {
  double stage1_exact_match = 0.0;  // fraction of layer-2 tokens (both streams) predicted exactly
  double stage2_exact_match = 0.0;  // same for layer 3
};

inline double layer_match(const TokenLayerPair& pred, const TokenLayerPair& truth, double& total) {
  double hits = 0.0;
  for (std::size_t f = 0; f < truth.semantic.size(); ++f) {
    hits += pred.semantic[f] == truth.semantic[f];
    hits += pred.acoustic[f] == truth.acoustic[f];
  }
  total += 2.0 * double(truth.semantic.size());
  return hits;
}

/// Stage-wise exact match with ground-truth lower layers (teacher forcing).
inline NARMetrics nar_metrics(const CoupledNAR<float>& nar, const EncodedDataset& enc, std::size_t ref_max_frames) {
  double h1 = 0, n1 = 0, h2 = 0, n2 = 0;
  for (std::size_t i = 0; i < enc.utterances.size(); ++i) {
    const auto& truth = enc.utterances[i].tokens;
    const auto ref = reference_tokens(enc, i, ref_max_frames);
    h1 += layer_match(nar.predict_layer2(leading_layers(truth, 1), ref), layer_of(truth, 1), n1);
    h2 += layer_match(nar.predict_layer3(leading_layers(truth, 2), ref), layer_of(truth, 2), n2);
  }
  return {h1 / std::max(1.0, n1), h2 / std::max(1.0, n2)};
}

inline Tensor<float> condition_tensor(const SpeakerCondition& c) {
  return Tensor<float>({1, c.vector.size()}, c.vector);
}

struct MelMetrics {
  double mse = 0.0;
  double relative_mse = 0.0;
};

/// Flow samples from ground-truth tokens and the utterance's own condition.
inline MelMetrics mel_metrics(const ParallelTokenizer<float>& tok, const FlowDecoder<float>& flow, const Dataset& data,
                              const EncodedDataset& enc, std::size_t solver_steps, std::uint64_t seed) {
  std::vector<Matrix> preds;
  std::vector<const Matrix*> pred_ptr, truth_ptr;
  preds.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto input = tok.decode_tokens(enc.utterances[i].tokens, enc.utterances[i].condition);
    preds.push_back(sample_mel(flow, to_tensor<float>(input.features), condition_tensor(input.condition),
                               input.features.rows, SolverConfig{solver_steps, seed + i}));
  }
  for (std::size_t i = 0; i < data.size(); ++i) {
    pred_ptr.push_back(&preds[i]);
    truth_ptr.push_back(&data.entries[i].bundle.mel);
  }
  const Matrix p = stack_rows(pred_ptr), t = stack_rows(truth_ptr);
  return {mean_squared_error(p, t), relative_mse(p, t)};
}

// ---------------------------------------------------------------------------
// Evaluation report.

struct EvalReport {
  std::size_t utterances = 0;
  std::vector<double> ar_semantic_accuracy;
  std::vector<double> ar_acoustic_accuracy;
  double ar_stop_accuracy = 0.0;
  bool nar_evaluated = false;
  double nar_stage1_exact_match = 0.0;
  double nar_stage2_exact_match = 0.0;
  double semantic_recon_relative_mse = 0.0;
  double acoustic_recon_relative_mse = 0.0;
  std::vector<CodebookReport> codebooks;
  double mel_mse = 0.0;
  double mel_relative_mse = 0.0;
  /// Full inference (greedy) on training utterances, compared where lengths agree.
  std::size_t inference_compared = 0;
  std::size_t inference_length_mismatch = 0;
  double inference_mel_mse = 0.0;

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

inline Json to_json(const EvalReport& r) {
  Json cb = Json::array();
  for (const auto& c : r.codebooks) {
    cb.push_back({{"stream", c.stream}, {"layer", c.layer}, {"utilization", c.utilization}, {"perplexity", c.perplexity}});
  }
  return {{"utterances", r.utterances},
          {"ar", {{"semantic_accuracy", r.ar_semantic_accuracy},
                  {"acoustic_accuracy", r.ar_acoustic_accuracy},
                  {"stop_accuracy", r.ar_stop_accuracy}}},
          {"nar", {{"evaluated", r.nar_evaluated},
                   {"stage1_exact_match", r.nar_stage1_exact_match},
                   {"stage2_exact_match", r.nar_stage2_exact_match}}},
          {"tokenizer", {{"semantic_recon_relative_mse", r.semantic_recon_relative_mse},
                         {"acoustic_recon_relative_mse", r.acoustic_recon_relative_mse},
                         {"codebooks", cb}}},
          {"mel", {{"mse", r.mel_mse}, {"relative_mse", r.mel_relative_mse}}},
          {"inference", {{"compared", r.inference_compared},
                         {"length_mismatch", r.inference_length_mismatch},
                         {"mel_mse", r.inference_mel_mse}}}};
}

inline EvalReport eval_report_from_json(const Json& j) {
  EvalReport r;
  try {
    r.utterances = j.at("utterances").get<std::size_t>();
    r.ar_semantic_accuracy = j.at("ar").at("semantic_accuracy").get<std::vector<double>>();
    r.ar_acoustic_accuracy = j.at("ar").at("acoustic_accuracy").get<std::vector<double>>();
    r.ar_stop_accuracy = j.at("ar").at("stop_accuracy").get<double>();
    r.nar_evaluated = j.at("nar").at("evaluated").get<bool>();
    r.nar_stage1_exact_match = j.at("nar").at("stage1_exact_match").get<double>();
    r.nar_stage2_exact_match = j.at("nar").at("stage2_exact_match").get<double>();
    const auto& t = j.at("tokenizer");
    r.semantic_recon_relative_mse = t.at("semantic_recon_relative_mse").get<double>();
    r.acoustic_recon_relative_mse = t.at("acoustic_recon_relative_mse").get<double>();
    for (const auto& c : t.at("codebooks")) {
      r.codebooks.push_back({c.at("stream").get<std::string>(), c.at("layer").get<std::size_t>(),
                             c.at("utilization").get<double>(), c.at("perplexity").get<double>()});
    }
    r.mel_mse = j.at("mel").at("mse").get<double>();
    r.mel_relative_mse = j.at("mel").at("relative_mse").get<double>();
    r.inference_compared = j.at("inference").at("compared").get<std::size_t>();
    r.inference_length_mismatch = j.at("inference").at("length_mismatch").get<std::size_t>();
    r.inference_mel_mse = j.at("inference").at("mel_mse").get<double>();
  } catch (const Json::exception& e) {
    throw std::runtime_error(std::string("malformed evaluation report: ") + e.what());
  }
  return r;
}

inline std::string format_report(const EvalReport& r) {
  std::ostringstream s;
  s.precision(4);
  s << "utterances: " << r.utterances << "\n";
  for (std::size_t l = 0; l < r.ar_semantic_accuracy.size(); ++l) {
    s << "ar teacher-forced accuracy layer " << l + 1 << ": semantic " << r.ar_semantic_accuracy[l] << ", acoustic "
      << r.ar_acoustic_accuracy[l] << "\n";
  }
  s << "ar stop accuracy: " << r.ar_stop_accuracy << "\n";
  if (r.nar_evaluated) {
    s << "nar exact match: stage 1 " << r.nar_stage1_exact_match << ", stage 2 " << r.nar_stage2_exact_match << "\n";
  } else {
    s << "nar: not used (only-AR configuration)\n";
  }
  s << "tokenizer reconstruction mse / variance: semantic " << r.semantic_recon_relative_mse << ", acoustic "
    << r.acoustic_recon_relative_mse << "\n";
  for (const auto& c : r.codebooks) {
    s << "codebook " << c.stream << " layer " << c.layer << ": utilization " << c.utilization << ", perplexity "
      << c.perplexity << "\n";
  }
  s << "mel mse (ground-truth tokens): " << r.mel_mse << " (relative " << r.mel_relative_mse << ")\n";
  s << "inference mel mse: " << r.inference_mel_mse << " over " << r.inference_compared << " utterances ("
    << r.inference_length_mismatch << " length mismatches)\n";
  return s.str();
}

}  // namespace pgpt
