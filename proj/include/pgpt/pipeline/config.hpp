// Copyright 2026 The Parallel GPT Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <set>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "pgpt/coupled_nar.hpp"
#include "pgpt/data/synthetic.hpp"
#include "pgpt/flow_decoder.hpp"
#include "pgpt/parallel_ar.hpp"
#include "pgpt/tokenizer.hpp"

namespace pgpt {

using Json = nlohmann::json;

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class ScheduleKind { constant, cosine };

/// Linear warmup from base_lr to peak_lr, then constant or cosine from
/// peak_lr to final_lr over decay_steps (0: the remaining steps).
struct TrainSchedule {
  std::size_t total_steps = 1000;
  std::size_t warmup_steps = 0;
  ScheduleKind kind = ScheduleKind::cosine;
  double base_lr = 3e-5;
  double peak_lr = 3e-4;
  double final_lr = 3e-5;
  std::size_t decay_steps = 0;
  std::size_t batch_size = 1;
  std::uint64_t seed = 1;

  void validate(const std::string& where) const {
    if (total_steps < 1) throw ConfigError(where + ".total_steps must be >= 1");
    if (warmup_steps > total_steps) throw ConfigError(where + ".warmup_steps must be <= total_steps");
    if (!(base_lr > 0) || !(peak_lr > 0) || !(final_lr > 0)) throw ConfigError(where + ": learning rates must be > 0");
    if (batch_size < 1) throw ConfigError(where + ".batch_size must be >= 1");
  }

  double learning_rate(std::size_t step) const {
    if (step < warmup_steps) return base_lr + (peak_lr - base_lr) * double(step) / double(warmup_steps);
    if (kind == ScheduleKind::constant) return peak_lr;
    const std::size_t span = decay_steps > 0 ? decay_steps : std::max<std::size_t>(1, total_steps - warmup_steps);
    const double progress = std::min(1.0, double(step - warmup_steps) / double(span));
    return final_lr + (peak_lr - final_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  }
};

struct TrainingOptions {
  std::size_t ref_max_frames = 24;  // reference prompt cap (frames)
  std::size_t log_every = 100;
  std::size_t solver_steps = 32;     // Euler steps for mel sampling
  std::size_t top_k = 8;
  double temperature = 1.0;
};

struct PipelineConfig {
  std::string profile = "toy";
  TokenizerConfig tokenizer;
  FlowConfig flow;
  ARConfig ar;
  NARConfig nar;
  TrainSchedule tokenizer_schedule, ar_schedule, nar_schedule, flow_schedule;
  TrainingOptions options;

  void validate() const {
    auto wrap = [](const char* where, auto&& fn) {
      try {
        fn();
      } catch (const ConfigError&) {
        throw;
      } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string(where) + ": " + e.what());
      }
    };
    wrap("tokenizer", [&] { tokenizer.validate(); });
    wrap("flow", [&] { flow.validate(); });
    wrap("ar", [&] { ar.validate(); });
    wrap("nar", [&] { nar.validate(); });
    tokenizer_schedule.validate("schedule.tokenizer");
    ar_schedule.validate("schedule.ar");
    nar_schedule.validate("schedule.nar");
    flow_schedule.validate("schedule.flow");
    std::string bad;
    auto same = [&](std::size_t a, std::size_t b, const char* what) {
      if (a != b) bad += std::string(bad.empty() ? "" : "; ") + what + " (" + std::to_string(a) + " vs " + std::to_string(b) + ")";
    };
    same(ar.semantic_vocab, tokenizer.codebook_size, "ar.semantic_vocab != tokenizer.codebook_size");
    same(ar.acoustic_vocab, tokenizer.codebook_size, "ar.acoustic_vocab != tokenizer.codebook_size");
    same(nar.semantic_vocab, tokenizer.codebook_size, "nar.semantic_vocab != tokenizer.codebook_size");
    same(nar.acoustic_vocab, tokenizer.codebook_size, "nar.acoustic_vocab != tokenizer.codebook_size");
    same(flow.feature_dim, tokenizer.semantic_dim + tokenizer.acoustic_dim,
         "flow.feature_dim != tokenizer.semantic_dim + tokenizer.acoustic_dim");
    same(flow.condition_dim, tokenizer.condition_dim, "flow.condition_dim != tokenizer.condition_dim");
    same(ar.rvq_layers, tokenizer.rvq_layers, "ar.rvq_layers != tokenizer.rvq_layers");
    if (tokenizer.rvq_layers != 3) bad += std::string(bad.empty() ? "" : "; ") + "tokenizer.rvq_layers must be 3";
    if (options.ref_max_frames < 1) bad += std::string(bad.empty() ? "" : "; ") + "options.ref_max_frames must be >= 1";
    if (options.ref_max_frames > nar.max_ref_len) bad += std::string(bad.empty() ? "" : "; ") + "options.ref_max_frames > nar.max_ref_len";
    if (options.solver_steps < 1) bad += std::string(bad.empty() ? "" : "; ") + "options.solver_steps must be >= 1";
    if (options.top_k < 1) bad += std::string(bad.empty() ? "" : "; ") + "options.top_k must be >= 1";
    if (!(options.temperature > 0)) bad += std::string(bad.empty() ? "" : "; ") + "options.temperature must be > 0";
    if (!bad.empty()) throw ConfigError("inconsistent config: " + bad);
  }

  /// Checks that model dimensions match a corpus.
  void check_corpus(const SyntheticSpec& spec) const {
    std::string bad;
    auto same = [&](std::size_t a, std::size_t b, const char* what) {
      if (a != b) bad += std::string(bad.empty() ? "" : "; ") + what + " (" + std::to_string(a) + " vs " + std::to_string(b) + ")";
    };
    same(tokenizer.semantic_dim, spec.semantic_dim, "tokenizer.semantic_dim vs data semantic_dim");
    same(tokenizer.acoustic_dim, spec.acoustic_dim, "tokenizer.acoustic_dim vs data acoustic_dim");
    same(tokenizer.speaker_frame_dim, spec.speaker_frame_dim, "tokenizer.speaker_frame_dim vs data speaker_frame_dim");
    same(tokenizer.speaker_global_dim, spec.speaker_global_dim, "tokenizer.speaker_global_dim vs data speaker_global_dim");
    same(flow.mel_dim, spec.mel_dim, "flow.mel_dim vs data mel_dim");
    same(ar.text_vocab, spec.vocab_size, "ar.text_vocab vs data vocab_size");
    if (!bad.empty()) throw ConfigError("config does not match data: " + bad);
  }
};

/// Desk-scale profile for the toy corpus.
inline PipelineConfig toy_profile() {
  PipelineConfig c;
  c.profile = "toy";
  c.flow.hidden_dim = 256;
  auto schedule = [](std::size_t steps, std::size_t warmup, double base, double peak, double final_lr, std::uint64_t seed) {
    TrainSchedule s;
    s.total_steps = steps;
    s.warmup_steps = warmup;
    s.kind = ScheduleKind::cosine;
    s.base_lr = base;
    s.peak_lr = peak;
    s.final_lr = final_lr;
    s.seed = seed;
    return s;
  };
  c.tokenizer_schedule = schedule(5000, 200, 1e-5, 1e-3, 1e-4, 11);
  c.ar_schedule = schedule(10000, 500, 1e-5, 3e-4, 3e-5, 12);
  c.nar_schedule = schedule(5000, 300, 1e-5, 3e-4, 3e-5, 13);
  c.flow_schedule = schedule(3000, 100, 1e-5, 5e-4, 5e-5, 14);
  return c;
}

/// Full-scale shapes and schedules (recorded, not run at desk scale).
inline PipelineConfig full_profile() {
  PipelineConfig c;
  c.profile = "full";
  c.tokenizer.semantic_dim = 768;
  c.tokenizer.acoustic_dim = 768;
  c.tokenizer.speaker_frame_dim = 80;
  c.tokenizer.speaker_global_dim = 192;
  c.tokenizer.condition_dim = 512;
  c.tokenizer.codebook_size = 1024;
  c.tokenizer.condition_heads = 8;
  c.flow.mel_dim = 80;
  c.flow.feature_dim = 1536;
  c.flow.condition_dim = 512;
  c.flow.hidden_dim = 1024;
  c.ar.text_vocab = 512;
  c.ar.semantic_vocab = c.ar.acoustic_vocab = 1024;
  c.ar.model_dim = 1024;
  c.ar.n_heads = 16;
  c.ar.n_layers = 12;
  c.ar.stop_hidden = 512;
  c.ar.max_text_len = 512;
  c.ar.max_speech_len = 2048;
  c.ar.max_len = 1500;
  c.nar.semantic_vocab = c.nar.acoustic_vocab = 1024;
  c.nar.model_dim = 1024;
  c.nar.n_heads = 16;
  c.nar.classifier_dim = 1024;
  c.nar.max_target_len = 2048;
  c.nar.max_ref_len = 1024;
  c.options.ref_max_frames = 225;
  // Tokenizer: AdamW at 2e-4 for 450k steps (per-epoch decay not modelled).
  c.tokenizer_schedule = {450000, 0, ScheduleKind::constant, 2e-4, 2e-4, 2e-4, 0, 16, 1};
  c.flow_schedule = c.tokenizer_schedule;
  // AR: 800k steps, batch 16, 1e-2 during a 2k warmup, then cosine over 40k
  // steps from 1e-5 to 1e-4 as stated.
  c.ar_schedule = {800000, 2000, ScheduleKind::cosine, 1e-2, 1e-5, 1e-4, 40000, 16, 1};
  // NAR: fixed 2e-5 for 200k steps, batch 16.
  c.nar_schedule = {200000, 0, ScheduleKind::constant, 2e-5, 2e-5, 2e-5, 0, 16, 1};
  return c;
}

inline PipelineConfig profile_by_name(const std::string& name) {
  if (name == "toy") return toy_profile();
  if (name == "full") return full_profile();
  throw ConfigError("unknown profile '" + name + "' (expected toy or full)");
}

// ---------------------------------------------------------------------------
// JSON mapping. Every field is required and unknown keys are rejected.

namespace detail {

class StrictObject {
 public:
  StrictObject(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + " must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    const std::string where = path_ + "." + key;
    if (!j_.contains(key)) throw ConfigError("missing field " + where);
    const Json& v = j_.at(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError(where + " must be a boolean");
        out = v.get<bool>();
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw ConfigError(where + " must be an integer");
        if constexpr (std::is_unsigned_v<T>) {
          if (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0) {
            throw ConfigError(where + " must be non-negative");
          }
        }
        out = v.get<T>();
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw ConfigError(where + " must be a number");
        out = v.get<T>();
      } else {
        if (!v.is_string()) throw ConfigError(where + " must be a string");
        out = v.get<T>();
      }
    } catch (const Json::exception& e) {
      throw ConfigError(where + ": " + e.what());
    }
  }

  StrictObject child(const char* key) {
    seen_.insert(key);
    if (!j_.contains(key)) throw ConfigError("missing field " + path_ + "." + key);
    return StrictObject(j_.at(key), path_ + "." + key);
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError("unknown field " + path_ + "." + key);
    }
  }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline Json schedule_json(const TrainSchedule& s) {
  return {{"total_steps", s.total_steps}, {"warmup_steps", s.warmup_steps},
          {"kind", s.kind == ScheduleKind::constant ? "constant" : "cosine"},
          {"base_lr", s.base_lr}, {"peak_lr", s.peak_lr}, {"final_lr", s.final_lr},
          {"decay_steps", s.decay_steps}, {"batch_size", s.batch_size}, {"seed", s.seed}};
}

inline TrainSchedule schedule_from(StrictObject o) {
  TrainSchedule s;
  std::string kind;
  o.get("total_steps", s.total_steps);
  o.get("warmup_steps", s.warmup_steps);
  o.get("kind", kind);
  o.get("base_lr", s.base_lr);
  o.get("peak_lr", s.peak_lr);
  o.get("final_lr", s.final_lr);
  o.get("decay_steps", s.decay_steps);
  o.get("batch_size", s.batch_size);
  o.get("seed", s.seed);
  o.finish();
  if (kind == "constant") s.kind = ScheduleKind::constant;
  else if (kind == "cosine") s.kind = ScheduleKind::cosine;
  else throw ConfigError("schedule kind must be constant or cosine, got '" + kind + "'");
  return s;
}

}  // namespace detail

inline Json to_json(const PipelineConfig& c) {
  const auto& t = c.tokenizer;
  const auto& f = c.flow;
  const auto& a = c.ar;
  const auto& n = c.nar;
  Json j;
  j["profile"] = c.profile;
  j["tokenizer"] = {{"semantic_dim", t.semantic_dim}, {"acoustic_dim", t.acoustic_dim},
                    {"speaker_frame_dim", t.speaker_frame_dim}, {"speaker_global_dim", t.speaker_global_dim},
                    {"condition_dim", t.condition_dim}, {"codebook_size", t.codebook_size},
                    {"rvq_layers", t.rvq_layers}, {"ema_decay", t.ema_decay}, {"commitment", t.commitment},
                    {"dead_code_steps", t.dead_code_steps}, {"condition_heads", t.condition_heads},
                    {"condition_blocks", t.condition_blocks}, {"conv_kernel", t.conv_kernel}};
  j["flow"] = {{"mel_dim", f.mel_dim}, {"feature_dim", f.feature_dim}, {"condition_dim", f.condition_dim},
               {"hidden_dim", f.hidden_dim}, {"hidden_layers", f.hidden_layers}, {"time_features", f.time_features},
               {"predict_data", f.predict_data}, {"terminal_epsilon", f.terminal_epsilon}};
  j["ar"] = {{"text_vocab", a.text_vocab}, {"semantic_vocab", a.semantic_vocab}, {"acoustic_vocab", a.acoustic_vocab},
             {"model_dim", a.model_dim}, {"n_heads", a.n_heads}, {"n_layers", a.n_layers},
             {"stop_hidden", a.stop_hidden}, {"max_text_len", a.max_text_len}, {"max_speech_len", a.max_speech_len},
             {"max_len", a.max_len}, {"text_pad_id", a.text_pad_id}, {"text_bos_id", a.text_bos_id},
             {"text_eos_id", a.text_eos_id}, {"parallel", a.parallel}, {"only_ar", a.only_ar},
             {"rvq_layers", a.rvq_layers}};
  j["nar"] = {{"semantic_vocab", n.semantic_vocab}, {"acoustic_vocab", n.acoustic_vocab}, {"model_dim", n.model_dim},
              {"n_heads", n.n_heads}, {"n_layers", n.n_layers}, {"classifier_dim", n.classifier_dim},
              {"max_target_len", n.max_target_len}, {"max_ref_len", n.max_ref_len}};
  j["schedule"] = {{"tokenizer", detail::schedule_json(c.tokenizer_schedule)},
                   {"ar", detail::schedule_json(c.ar_schedule)},
                   {"nar", detail::schedule_json(c.nar_schedule)},
                   {"flow", detail::schedule_json(c.flow_schedule)}};
  j["options"] = {{"ref_max_frames", c.options.ref_max_frames}, {"log_every", c.options.log_every},
                  {"solver_steps", c.options.solver_steps}, {"top_k", c.options.top_k},
                  {"temperature", c.options.temperature}};
  return j;
}

inline PipelineConfig config_from_json(const Json& j) {
  PipelineConfig c;
  detail::StrictObject root(j, "config");
  root.get("profile", c.profile);
  {
    auto o = root.child("tokenizer");
    auto& t = c.tokenizer;
    o.get("semantic_dim", t.semantic_dim);
    o.get("acoustic_dim", t.acoustic_dim);
    o.get("speaker_frame_dim", t.speaker_frame_dim);
    o.get("speaker_global_dim", t.speaker_global_dim);
    o.get("condition_dim", t.condition_dim);
    o.get("codebook_size", t.codebook_size);
    o.get("rvq_layers", t.rvq_layers);
    o.get("ema_decay", t.ema_decay);
    o.get("commitment", t.commitment);
    o.get("dead_code_steps", t.dead_code_steps);
    o.get("condition_heads", t.condition_heads);
    o.get("condition_blocks", t.condition_blocks);
    o.get("conv_kernel", t.conv_kernel);
    o.finish();
  }
  {
    auto o = root.child("flow");
    auto& f = c.flow;
    o.get("mel_dim", f.mel_dim);
    o.get("feature_dim", f.feature_dim);
    o.get("condition_dim", f.condition_dim);
    o.get("hidden_dim", f.hidden_dim);
    o.get("hidden_layers", f.hidden_layers);
    o.get("time_features", f.time_features);
    o.get("predict_data", f.predict_data);
    o.get("terminal_epsilon", f.terminal_epsilon);
    o.finish();
  }
  {
    auto o = root.child("ar");
    auto& a = c.ar;
    o.get("text_vocab", a.text_vocab);
    o.get("semantic_vocab", a.semantic_vocab);
    o.get("acoustic_vocab", a.acoustic_vocab);
    o.get("model_dim", a.model_dim);
    o.get("n_heads", a.n_heads);
    o.get("n_layers", a.n_layers);
    o.get("stop_hidden", a.stop_hidden);
    o.get("max_text_len", a.max_text_len);
    o.get("max_speech_len", a.max_speech_len);
    o.get("max_len", a.max_len);
    o.get("text_pad_id", a.text_pad_id);
    o.get("text_bos_id", a.text_bos_id);
    o.get("text_eos_id", a.text_eos_id);
    o.get("parallel", a.parallel);
    o.get("only_ar", a.only_ar);
    o.get("rvq_layers", a.rvq_layers);
    o.finish();
  }
  {
    auto o = root.child("nar");
    auto& n = c.nar;
    o.get("semantic_vocab", n.semantic_vocab);
    o.get("acoustic_vocab", n.acoustic_vocab);
    o.get("model_dim", n.model_dim);
    o.get("n_heads", n.n_heads);
    o.get("n_layers", n.n_layers);
    o.get("classifier_dim", n.classifier_dim);
    o.get("max_target_len", n.max_target_len);
    o.get("max_ref_len", n.max_ref_len);
    o.finish();
  }
  {
    auto o = root.child("schedule");
    c.tokenizer_schedule = detail::schedule_from(o.child("tokenizer"));
    c.ar_schedule = detail::schedule_from(o.child("ar"));
    c.nar_schedule = detail::schedule_from(o.child("nar"));
    c.flow_schedule = detail::schedule_from(o.child("flow"));
    o.finish();
  }
  {
    auto o = root.child("options");
    o.get("ref_max_frames", c.options.ref_max_frames);
    o.get("log_every", c.options.log_every);
    o.get("solver_steps", c.options.solver_steps);
    o.get("top_k", c.options.top_k);
    o.get("temperature", c.options.temperature);
    o.finish();
  }
  root.finish();
  c.validate();
  return c;
}

// SyntheticSpec mapping for gen-data. Every field is required.
inline Json to_json(const SyntheticSpec& s) {
  return {{"vocab_size", s.vocab_size}, {"n_speakers", s.n_speakers}, {"n_texts", s.n_texts},
          {"n_utterances", s.n_utterances}, {"min_symbols", s.min_symbols}, {"max_symbols", s.max_symbols},
          {"min_frames_per_symbol", s.min_frames_per_symbol}, {"max_frames_per_symbol", s.max_frames_per_symbol},
          {"semantic_dim", s.semantic_dim}, {"acoustic_dim", s.acoustic_dim},
          {"speaker_frame_dim", s.speaker_frame_dim}, {"speaker_global_dim", s.speaker_global_dim},
          {"mel_dim", s.mel_dim}, {"speaker_latent_dim", s.speaker_latent_dim}, {"prosody_dim", s.prosody_dim},
          {"acoustic_classes", s.acoustic_classes}, {"noise_scale", s.noise_scale}, {"seed", s.seed}};
}

inline SyntheticSpec spec_from_json(const Json& j) {
  SyntheticSpec s;
  detail::StrictObject o(j, "spec");
  o.get("vocab_size", s.vocab_size);
  o.get("n_speakers", s.n_speakers);
  o.get("n_texts", s.n_texts);
  o.get("n_utterances", s.n_utterances);
  o.get("min_symbols", s.min_symbols);
  o.get("max_symbols", s.max_symbols);
  o.get("min_frames_per_symbol", s.min_frames_per_symbol);
  o.get("max_frames_per_symbol", s.max_frames_per_symbol);
  o.get("semantic_dim", s.semantic_dim);
  o.get("acoustic_dim", s.acoustic_dim);
  o.get("speaker_frame_dim", s.speaker_frame_dim);
  o.get("speaker_global_dim", s.speaker_global_dim);
  o.get("mel_dim", s.mel_dim);
  o.get("speaker_latent_dim", s.speaker_latent_dim);
  o.get("prosody_dim", s.prosody_dim);
  o.get("acoustic_classes", s.acoustic_classes);
  o.get("noise_scale", s.noise_scale);
  o.get("seed", s.seed);
  o.finish();
  try {
    s.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return s;
}

}  // namespace pgpt
