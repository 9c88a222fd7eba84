// Copyright 2026 The Parallel GPT Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "pgpt/pipeline/evaluate.hpp"
#include "pgpt/pipeline/train.hpp"

namespace pgpt {

inline constexpr const char* kStageFiles[4] = {"tokenizer.ckpt", "ar.ckpt", "nar.ckpt", "flow.ckpt"};

/// The four trained stages, checked for compatibility.
struct Pipeline {
  PipelineConfig config;
  TokenizerModel tokenizer;
  ParallelAR<float> ar;
  std::optional<CoupledNAR<float>> nar;  // empty for the only-AR configuration
  FlowDecoder<float> flow;
};

inline Pipeline build_pipeline(const Checkpoint& tok, const Checkpoint& ar, const Checkpoint& nar, const Checkpoint& flow) {
  check_compatible(tok, ar, nar, flow);
  Pipeline p;
  p.tokenizer = load_tokenizer_model(tok);
  p.config = p.tokenizer.config;
  p.config.ar = checkpoint_config(ar).ar;
  p.config.nar = checkpoint_config(nar).nar;
  p.config.flow = checkpoint_config(flow).flow;
  p.ar = load_ar(ar);
  if (!p.config.ar.only_ar) {
    if (nar.metadata.value("skipped", false)) {
      throw CompatibilityError("nar checkpoint is empty but the ar checkpoint needs a NAR stage (ar.only_ar is false)");
    }
    p.nar = load_nar(nar);
  }
  p.flow = load_flow(flow);
  return p;
}

inline Pipeline load_pipeline(const std::filesystem::path& dir) {
  std::vector<Checkpoint> c;
  for (const char* name : kStageFiles) {
    const auto path = dir / name;
    if (!std::filesystem::exists(path)) throw CheckpointError("missing checkpoint " + path.string());
    c.push_back(load_checkpoint(path));
  }
  return build_pipeline(c[0], c[1], c[2], c[3]);
}

struct InferOptions {
  std::uint64_t seed = 0;
  std::size_t top_k = 8;
  double temperature = 1.0;
  std::size_t solver_steps = 32;
  std::size_t max_len = 0;  // 0: the AR config's cap
};

struct InferResult {
  ParallelTokens tokens;  // all three layers
  SpeakerCondition condition;
  Matrix mel;
  bool terminated = false;
  bool truncated = false;
};

/// Encode reference, generate top tokens, complete detailed tokens, decode
/// and sample mel frames.
inline InferResult infer(const Pipeline& p, std::span<const int> text, const FeatureBundle& reference,
                         const InferOptions& options) {
  const auto ref = p.tokenizer.tokenizer.encode_speech(reference);
  const std::size_t ref_frames = std::min(p.config.options.ref_max_frames, ref.tokens.frames());
  const auto ref_tokens = slice_frames(ref.tokens, 0, ref_frames);
  const auto gen = p.ar.generate(text, p.ar.input_layers(ref_tokens),
                                 GenerateOptions{options.top_k, options.temperature, options.max_len, options.seed});
  if (gen.tokens.frames() == 0) throw std::runtime_error("generation produced no frames");
  InferResult r;
  r.terminated = gen.terminated;
  r.truncated = gen.truncated;
  r.condition = ref.condition;
  r.tokens = p.nar ? p.nar->complete_tokens(gen.tokens, ref_tokens) : gen.tokens;
  const auto input = p.tokenizer.tokenizer.decode_tokens(r.tokens, r.condition);
  r.mel = sample_mel(p.flow, to_tensor<float>(input.features), condition_tensor(input.condition), input.features.rows,
                     SolverConfig{options.solver_steps, options.seed});
  return r;
}

inline InferResult infer_text(const Pipeline& p, const std::string& text, const FeatureBundle& reference,
                              const InferOptions& options) {
  return infer(p, p.tokenizer.vocabulary.encode(text), reference, options);
}

inline Matrix token_matrix_array(const TokenMatrix& t) {
  Matrix m(t.frames, t.layers);
  for (std::size_t i = 0; i < t.ids.size(); ++i) m.data[i] = static_cast<float>(t.ids[i]);
  return m;
}

/// Output feature file: mel [T, M], semantic_tokens / acoustic_tokens [T, 3]
/// and speaker_condition [C].
inline void write_inference(const std::filesystem::path& path, const InferResult& r) {
  write_feature_arrays(path, {matrix_array("mel", r.mel), matrix_array("semantic_tokens", token_matrix_array(r.tokens.semantic)),
                              matrix_array("acoustic_tokens", token_matrix_array(r.tokens.acoustic)),
                              vector_array("speaker_condition", r.condition.vector)});
}

/// Validates an inference output file and returns its mel frames.
inline Matrix check_inference_file(const std::filesystem::path& path, const PipelineConfig& c) {
  const auto arrays = read_feature_arrays(path);
  const Matrix mel = array_matrix(find_array(arrays, "mel", 2));
  const Matrix sem = array_matrix(find_array(arrays, "semantic_tokens", 2));
  const Matrix ac = array_matrix(find_array(arrays, "acoustic_tokens", 2));
  if (mel.rows == 0) throw InvariantError("mel has no frames");
  if (mel.cols != c.flow.mel_dim) throw InvariantError("mel width " + std::to_string(mel.cols) + " != " + std::to_string(c.flow.mel_dim));
  if (!mel.all_finite()) throw InvariantError("mel holds non-finite values");
  if (sem.rows != mel.rows || ac.rows != mel.rows) throw InvariantError("token and mel frame counts differ");
  auto ids_ok = [](const Matrix& m, std::size_t vocab) {
    for (float v : m.data)
      if (v != std::floor(v) || v < 0 || v >= float(vocab)) return false;
    return true;
  };
  if (!ids_ok(sem, c.tokenizer.codebook_size) || !ids_ok(ac, c.tokenizer.codebook_size)) {
    throw InvariantError("token ids outside the codebook range");
  }
  if (find_array(arrays, "speaker_condition", 1).data.size() != c.tokenizer.condition_dim) {
    throw InvariantError("speaker_condition has the wrong width");
  }
  return mel;
}

struct EvalOptions {
  std::size_t inference_utterances = 8;  // greedy full-pipeline runs compared with ground truth
  std::uint64_t seed = 0;
};

inline EvalReport evaluate(const Pipeline& p, const Dataset& data, const EvalOptions& options = {}) {
  p.config.check_corpus(data.spec);
  EvalReport r;
  r.utterances = data.size();
  const auto& tok = p.tokenizer.tokenizer;
  const auto enc = encode_dataset(tok, data);
  const auto tm = tokenizer_metrics(tok, data);
  r.semantic_recon_relative_mse = tm.semantic_relative_mse;
  r.acoustic_recon_relative_mse = tm.acoustic_relative_mse;
  r.codebooks = tm.codebooks;
  const auto am = ar_metrics(p.ar, data, enc, p.config.options.ref_max_frames);
  r.ar_semantic_accuracy = am.semantic_accuracy;
  r.ar_acoustic_accuracy = am.acoustic_accuracy;
  r.ar_stop_accuracy = am.stop_accuracy;
  if (p.nar) {
    const auto nm = nar_metrics(*p.nar, enc, p.config.options.ref_max_frames);
    r.nar_evaluated = true;
    r.nar_stage1_exact_match = nm.stage1_exact_match;
    r.nar_stage2_exact_match = nm.stage2_exact_match;
  }
  const auto mm = mel_metrics(tok, p.flow, data, enc, p.config.options.solver_steps, options.seed);
  r.mel_mse = mm.mse;
  r.mel_relative_mse = mm.relative_mse;
  double err = 0.0, count = 0.0;
  const std::size_t n = std::min(options.inference_utterances, data.size());
  for (std::size_t i = 0; i < n; ++i) {
    InferOptions io;
    io.seed = options.seed + i;
    io.top_k = 1;
    io.solver_steps = p.config.options.solver_steps;
    InferResult out;
    try {
      out = infer(p, data.entries[i].bundle.symbols, data.entries[reference_index(data, i)].bundle, io);
    } catch (const std::runtime_error&) {
      ++r.inference_length_mismatch;
      continue;
    }
    const auto& truth = data.entries[i].bundle.mel;
    if (out.mel.rows != truth.rows) {
      ++r.inference_length_mismatch;
      continue;
    }
    ++r.inference_compared;
    err += mean_squared_error(out.mel, truth) * double(truth.data.size());
    count += double(truth.data.size());
  }
  r.inference_mel_mse = count > 0 ? err / count : 0.0;
  return r;
}

}  // namespace pgpt
