// Copyright 2026 The Parallel GPT Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "pgpt/coupled_nar.hpp"
#include "pgpt/data/vocabulary.hpp"
#include "pgpt/flow_decoder.hpp"
#include "pgpt/parallel_ar.hpp"
#include "pgpt/pipeline/checkpoint.hpp"
#include "pgpt/pipeline/config.hpp"
#include "pgpt/tokenizer.hpp"

namespace pgpt {

/// Tokenizer stage artifact: encoder, codebooks and the jointly trained flow decoder.
struct TokenizerModel {
  PipelineConfig config;
  Vocabulary vocabulary;
  ParallelTokenizer<float> tokenizer;
  FlowDecoder<float> flow;

  ParamList<float> parameters() const {
    ParamList<float> p;
    tokenizer.collect("tokenizer", p);
    flow.collect("flow", p);
    return p;
  }
};

inline TokenizerModel build_tokenizer_model(const PipelineConfig& config, const Vocabulary& vocabulary, Rng& rng) {
  TokenizerModel m;
  m.config = config;
  m.vocabulary = vocabulary;
  m.tokenizer = ParallelTokenizer<float>(config.tokenizer, rng);
  m.flow = FlowDecoder<float>(config.flow, rng);
  return m;
}

inline Json vocabulary_json(const Vocabulary& v) { return v.tokens(); }

inline Checkpoint make_checkpoint(StageTag stage, const PipelineConfig& config, Json metadata, std::uint64_t step,
                                  const RngState& rng) {
  Checkpoint c;
  c.stage = stage;
  c.config = to_json(config);
  c.metadata = std::move(metadata);
  if (c.metadata.is_null()) c.metadata = Json::object();
  c.step = step;
  c.rng = rng;
  return c;
}

inline Checkpoint tokenizer_checkpoint(const TokenizerModel& m, std::uint64_t step, const RngState& rng, Json extra = {}) {
  Json meta = extra.is_object() ? extra : Json::object();
  meta["vocabulary"] = vocabulary_json(m.vocabulary);
  auto c = make_checkpoint(StageTag::tokenizer, m.config, meta, step, rng);
  append_param_blobs(m.parameters(), c.blobs);
  append_rvq_blobs("semantic", m.tokenizer.semantic_rvq(), c.blobs);
  append_rvq_blobs("acoustic", m.tokenizer.acoustic_rvq(), c.blobs);
  return c;
}

inline void require_stage(const Checkpoint& c, StageTag expected) {
  if (c.stage != expected) {
    throw CheckpointError(std::string("expected a ") + stage_name(expected) + " checkpoint, got " + stage_name(c.stage));
  }
}

inline PipelineConfig checkpoint_config(const Checkpoint& c) {
  try {
    return config_from_json(c.config);
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string(stage_name(c.stage)) + " checkpoint config snapshot: " + e.what());
  }
}

inline Vocabulary checkpoint_vocabulary(const Checkpoint& c) {
  if (!c.metadata.contains("vocabulary")) throw CheckpointError("checkpoint metadata lacks the text vocabulary");
  return Vocabulary(c.metadata.at("vocabulary").get<std::vector<std::string>>());
}

inline TokenizerModel load_tokenizer_model(const Checkpoint& c) {
  require_stage(c, StageTag::tokenizer);
  Rng rng(0);
  auto m = build_tokenizer_model(checkpoint_config(c), checkpoint_vocabulary(c), rng);
  auto params = m.parameters();
  load_param_blobs(c, params);
  load_rvq_blobs(c, "semantic", m.tokenizer.semantic_rvq());
  load_rvq_blobs(c, "acoustic", m.tokenizer.acoustic_rvq());
  return m;
}

inline Checkpoint flow_checkpoint(const PipelineConfig& config, const FlowDecoder<float>& flow, std::uint64_t step,
                                  const RngState& rng, Json metadata = {}) {
  auto c = make_checkpoint(StageTag::flow, config, std::move(metadata), step, rng);
  ParamList<float> p;
  flow.collect("flow", p);
  append_param_blobs(p, c.blobs);
  return c;
}

inline FlowDecoder<float> load_flow(const Checkpoint& c) {
  require_stage(c, StageTag::flow);
  Rng rng(0);
  FlowDecoder<float> flow(checkpoint_config(c).flow, rng);
  ParamList<float> p;
  flow.collect("flow", p);
  load_param_blobs(c, p);
  return flow;
}

inline Checkpoint ar_checkpoint(const PipelineConfig& config, const ParallelAR<float>& ar, std::uint64_t step,
                                const RngState& rng, Json metadata = {}) {
  auto c = make_checkpoint(StageTag::ar, config, std::move(metadata), step, rng);
  ParamList<float> p;
  ar.collect("ar", p);
  append_param_blobs(p, c.blobs);
  return c;
}

inline ParallelAR<float> load_ar(const Checkpoint& c) {
  require_stage(c, StageTag::ar);
  Rng rng(0);
  ParallelAR<float> ar(checkpoint_config(c).ar, rng);
  ParamList<float> p;
  ar.collect("ar", p);
  load_param_blobs(c, p);
  return ar;
}

/// NAR checkpoints built from an only-AR config carry no blobs.
inline Checkpoint nar_checkpoint(const PipelineConfig& config, const CoupledNAR<float>* nar, std::uint64_t step,
                                 const RngState& rng, Json metadata = {}) {
  if (!metadata.is_object()) metadata = Json::object();
  metadata["skipped"] = nar == nullptr;
  auto c = make_checkpoint(StageTag::nar, config, std::move(metadata), step, rng);
  if (nar) {
    ParamList<float> p;
    nar->collect("nar", p);
    append_param_blobs(p, c.blobs);
  }
  return c;
}

inline CoupledNAR<float> load_nar(const Checkpoint& c) {
  require_stage(c, StageTag::nar);
  if (c.metadata.value("skipped", false)) throw CheckpointError("nar checkpoint was skipped (only-AR configuration)");
  Rng rng(0);
  CoupledNAR<float> nar(checkpoint_config(c).nar, rng);
  ParamList<float> p;
  nar.collect("nar", p);
  load_param_blobs(c, p);
  return nar;
}

// ---------------------------------------------------------------------------
// Compatibility of the four stage checkpoints.

namespace detail {

inline void json_diff(const Json& a, const Json& b, const std::string& path, std::vector<std::string>& out) {
  if (a.is_object() && b.is_object()) {
    for (const auto& [k, v] : a.items()) {
      if (!b.contains(k)) out.push_back(path + "." + k);
      else json_diff(v, b.at(k), path + "." + k, out);
    }
    for (const auto& [k, v] : b.items())
      if (!a.contains(k)) out.push_back(path + "." + k);
    return;
  }
  if (a != b) out.push_back(path);
}

}  // namespace detail

class CompatibilityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Throws CompatibilityError naming every mismatched field. Sections owned by
/// an earlier stage (tokenizer, flow dims) must agree in every later snapshot.
inline void check_compatible(const Checkpoint& tok, const Checkpoint& ar, const Checkpoint& nar, const Checkpoint& flow) {
  require_stage(tok, StageTag::tokenizer);
  require_stage(ar, StageTag::ar);
  require_stage(nar, StageTag::nar);
  require_stage(flow, StageTag::flow);
  std::vector<std::string> bad;
  auto compare = [&](const Checkpoint& other, const char* section) {
    std::vector<std::string> diff;
    detail::json_diff(tok.config.at(section), other.config.at(section), std::string(section), diff);
    for (auto& d : diff) bad.push_back(std::string(stage_name(other.stage)) + ":" + d);
  };
  for (const auto* c : {&ar, &nar, &flow}) {
    compare(*c, "tokenizer");
    compare(*c, "flow");
  }
  {
    std::vector<std::string> diff;
    detail::json_diff(ar.config.at("ar"), nar.config.at("ar"), "ar", diff);
    detail::json_diff(ar.config.at("nar"), nar.config.at("nar"), "nar", diff);
    for (auto& d : diff) bad.push_back("nar:" + d);
  }
  if (!bad.empty()) {
    std::string msg = "incompatible checkpoints, mismatched fields:";
    for (const auto& b : bad) msg += " " + b;
    throw CompatibilityError(msg);
  }
  // Stage configs must also agree on vocabularies and dimensions.
  PipelineConfig merged = checkpoint_config(tok);
  merged.ar = checkpoint_config(ar).ar;
  merged.nar = checkpoint_config(nar).nar;
  merged.flow = checkpoint_config(flow).flow;
  try {
    merged.validate();
  } catch (const ConfigError& e) {
    throw CompatibilityError(std::string("incompatible checkpoints: ") + e.what());
  }
}

/// A later stage's config must keep the tokenizer and flow sections of the
/// tokenizer checkpoint it builds on.
inline void require_tokenizer_match(const PipelineConfig& config, const Checkpoint& tokenizer_ckpt) {
  require_stage(tokenizer_ckpt, StageTag::tokenizer);
  const Json mine = to_json(config);
  std::vector<std::string> diff;
  for (const char* section : {"tokenizer", "flow"}) {
    detail::json_diff(tokenizer_ckpt.config.at(section), mine.at(section), section, diff);
  }
  if (!diff.empty()) {
    std::string msg = "config does not match the tokenizer checkpoint, mismatched fields:";
    for (const auto& d : diff) msg += " " + d;
    throw CompatibilityError(msg);
  }
}

}  // namespace pgpt
