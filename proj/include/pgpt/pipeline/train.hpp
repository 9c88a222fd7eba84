// Copyright 2026 The Parallel GPT Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pgpt/numerics/optim.hpp"
#include "pgpt/pipeline/evaluate.hpp"

namespace pgpt {

class NonFiniteLossError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LossPoint {
  std::size_t step = 0;
  double loss = 0.0;  // mean over the logging window
  double learning_rate = 0.0;
};

struct TrainReport {
  std::string stage;
  std::size_t steps = 0;
  double seconds = 0.0;
  double final_loss = 0.0;  // mean loss of the last logging window
  std::vector<LossPoint> curve;
  Json metrics = Json::object();
};

inline Json to_json(const TrainReport& r) {
  Json curve = Json::array();
  for (const auto& p : r.curve) curve.push_back({{"step", p.step}, {"loss", p.loss}, {"learning_rate", p.learning_rate}});
  return {{"stage", r.stage}, {"steps", r.steps}, {"seconds", r.seconds}, {"final_loss", r.final_loss},
          {"curve", curve}, {"metrics", r.metrics}};
}

struct StageResult {
  Checkpoint checkpoint;
  TrainReport report;
};

/// Per-step progress callback: (stage, step, total_steps, window mean loss).
using ProgressFn = std::function<void(const std::string&, std::size_t, std::size_t, double)>;

namespace detail {

/// Epoch-wise shuffled utterance order.
class EpochSampler {
 public:
  EpochSampler(std::size_t n, Rng& rng) : n_(n), rng_(rng) {}
  std::size_t next() {
    if (pos_ == order_.size()) {
      order_.resize(n_);
      for (std::size_t i = 0; i < n_; ++i) order_[i] = i;
      for (std::size_t i = n_; i > 1; --i) std::swap(order_[i - 1], order_[rng_.uniform_int(i)]);
      pos_ = 0;
    }
    return order_[pos_++];
  }

 private:
  std::size_t n_;
  Rng& rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

class LossTracker {
 public:
  LossTracker(std::string stage, std::size_t log_every, std::size_t total, const ProgressFn& progress)
      : stage_(std::move(stage)), log_every_(std::max<std::size_t>(1, log_every)), total_(total), progress_(progress) {
    report_.stage = stage_;
  }

  void record(std::size_t step, double loss, double lr) {
    if (!std::isfinite(loss)) {
      throw NonFiniteLossError(stage_ + " training: non-finite loss at step " + std::to_string(step) + " (lr " +
                               std::to_string(lr) + ")");
    }
    sum_ += loss;
    ++count_;
    if ((step + 1) % log_every_ == 0 || step + 1 == total_) {
      const double mean = sum_ / double(count_);
      report_.curve.push_back({step + 1, mean, lr});
      report_.final_loss = mean;
      if (progress_) progress_(stage_, step + 1, total_, mean);
      sum_ = 0.0;
      count_ = 0;
    }
  }

  TrainReport finish(double seconds) {
    report_.steps = total_;
    report_.seconds = seconds;
    return report_;
  }

 private:
  std::string stage_;
  std::size_t log_every_, total_;
  const ProgressFn& progress_;
  TrainReport report_;
  double sum_ = 0.0;
  std::size_t count_ = 0;
};

inline double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

/// One optimizer step with gradients accumulated over `batch` utterances.
template <typename LossFn>
double accumulate_step(Adam<float>& opt, std::size_t batch, double lr, LossFn&& loss_for_sample) {
  opt.zero_grad();
  double total = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    auto loss = loss_for_sample();
    total += double(loss.item());
    scale(loss, 1.0f / float(batch)).backward();
  }
  if (std::isfinite(total)) opt.step(lr);
  return total / double(batch);
}

inline void check_dataset(const PipelineConfig& cfg, const Dataset& data) {
  cfg.check_corpus(data.spec);
}

inline Json tokenizer_metrics_json(const TokenizerMetrics& m) {
  Json cb = Json::array();
  for (const auto& c : m.codebooks) {
    cb.push_back({{"stream", c.stream}, {"layer", c.layer}, {"utilization", c.utilization}, {"perplexity", c.perplexity}});
  }
  return {{"semantic_recon_relative_mse", m.semantic_relative_mse},
          {"acoustic_recon_relative_mse", m.acoustic_relative_mse},
          {"codebooks", cb}};
}

}  // namespace detail

/// Stage 1: tokenizer codebooks (k-means++ then EMA), speaker path and the
/// jointly trained flow decoder.
inline StageResult train_tokenizer(const PipelineConfig& cfg, const Dataset& data, const ProgressFn& progress = {}) {
  cfg.validate();
  detail::check_dataset(cfg, data);
  const auto start = std::chrono::steady_clock::now();
  const auto& sched = cfg.tokenizer_schedule;
  Rng rng(sched.seed, 0x746f6b656e697a65ull);
  auto model = build_tokenizer_model(cfg, data.vocabulary, rng);
  {
    std::vector<const Matrix*> sem, ac;
    for (const auto& e : data.entries) {
      sem.push_back(&e.bundle.semantic);
      ac.push_back(&e.bundle.acoustic);
    }
    model.tokenizer.init_codebooks(stack_rows(sem), stack_rows(ac), rng);
  }
  Adam<float> opt(model.parameters(), AdamConfig{});
  detail::EpochSampler sampler(data.size(), rng);
  detail::LossTracker tracker("tokenizer", cfg.options.log_every, sched.total_steps, progress);
  for (std::size_t step = 0; step < sched.total_steps; ++step) {
    const double lr = sched.learning_rate(step);
    std::vector<const Matrix*> sem, ac;
    const double loss = detail::accumulate_step(opt, sched.batch_size, lr, [&] {
      const auto& b = data.entries[sampler.next()].bundle;
      sem.push_back(&b.semantic);
      ac.push_back(&b.acoustic);
      return model.tokenizer.losses(b, model.flow, rng).total;
    });
    tracker.record(step, loss, lr);
    model.tokenizer.codebook_step(stack_rows(sem), stack_rows(ac), rng);
  }
  auto report = tracker.finish(detail::seconds_since(start));
  report.metrics = detail::tokenizer_metrics_json(tokenizer_metrics(model.tokenizer, data));
  Json meta = {{"corpus_spec", to_json(data.spec)}};
  return {tokenizer_checkpoint(model, sched.total_steps, rng.state(), meta), report};
}

/// Stage 2: parallel AR model on the frozen tokenizer's tokens.
inline StageResult train_ar(const PipelineConfig& cfg, const Dataset& data, const Checkpoint& tokenizer_ckpt,
                            const ProgressFn& progress = {}) {
  cfg.validate();
  detail::check_dataset(cfg, data);
  const auto start = std::chrono::steady_clock::now();
  require_tokenizer_match(cfg, tokenizer_ckpt);
  const auto tok = load_tokenizer_model(tokenizer_ckpt);
  const auto enc = encode_dataset(tok.tokenizer, data);
  const auto& sched = cfg.ar_schedule;
  Rng rng(sched.seed, 0x6172ull);
  ParallelAR<float> ar(cfg.ar, rng);
  ParamList<float> params;
  ar.collect("ar", params);
  Adam<float> opt(params, AdamConfig{});
  detail::EpochSampler sampler(data.size(), rng);
  detail::LossTracker tracker("ar", cfg.options.log_every, sched.total_steps, progress);
  for (std::size_t step = 0; step < sched.total_steps; ++step) {
    const double lr = sched.learning_rate(step);
    const double loss = detail::accumulate_step(opt, sched.batch_size, lr, [&] {
      const std::size_t i = sampler.next();
      const auto target = ar.input_layers(enc.utterances[i].tokens);
      const auto ref = ar.input_layers(reference_tokens(enc, i, cfg.options.ref_max_frames));
      return ar.loss(ar.forward(data.entries[i].bundle.symbols, ref, target), target).total;
    });
    tracker.record(step, loss, lr);
  }
  auto report = tracker.finish(detail::seconds_since(start));
  const auto m = ar_metrics(ar, data, enc, cfg.options.ref_max_frames);
  report.metrics = {{"semantic_accuracy", m.semantic_accuracy}, {"acoustic_accuracy", m.acoustic_accuracy},
                    {"stop_accuracy", m.stop_accuracy}};
  return {ar_checkpoint(cfg, ar, sched.total_steps, rng.state()), report};
}

/// Stage 3: coupled NAR, stage 1 then stage 2, each for the full schedule.
/// Skipped (empty checkpoint) for the only-AR configuration.
inline StageResult train_nar(const PipelineConfig& cfg, const Dataset& data, const Checkpoint& tokenizer_ckpt,
                             const ProgressFn& progress = {}) {
  cfg.validate();
  detail::check_dataset(cfg, data);
  const auto start = std::chrono::steady_clock::now();
  const auto& sched = cfg.nar_schedule;
  Rng rng(sched.seed, 0x6e6172ull);
  if (cfg.ar.only_ar) {
    TrainReport report;
    report.stage = "nar";
    report.metrics = {{"skipped", true}};
    return {nar_checkpoint(cfg, nullptr, 0, rng.state()), report};
  }
  require_tokenizer_match(cfg, tokenizer_ckpt);
  const auto tok = load_tokenizer_model(tokenizer_ckpt);
  const auto enc = encode_dataset(tok.tokenizer, data);
  CoupledNAR<float> nar(cfg.nar, rng);
  TrainReport report;
  report.stage = "nar";
  for (std::size_t s = 1; s <= 2; ++s) {
    const auto& stage = s == 1 ? nar.stage1() : nar.stage2();
    ParamList<float> params;
    stage.collect("nar.stage" + std::to_string(s), params);
    Adam<float> opt(params, AdamConfig{});
    detail::EpochSampler sampler(data.size(), rng);
    detail::LossTracker tracker("nar" + std::to_string(s), cfg.options.log_every, sched.total_steps, progress);
    for (std::size_t step = 0; step < sched.total_steps; ++step) {
      const double lr = sched.learning_rate(step);
      const double loss = detail::accumulate_step(opt, sched.batch_size, lr, [&] {
        const std::size_t i = sampler.next();
        const auto& truth = enc.utterances[i].tokens;
        const auto ref = reference_tokens(enc, i, cfg.options.ref_max_frames);
        return joint_layer_loss(stage.logits(leading_layers(truth, s), leading_layers(ref, s + 1)), layer_of(truth, s),
                                cfg.nar.semantic_vocab);
      });
      tracker.record(step, loss, lr);
    }
    const auto part = tracker.finish(0.0);
    for (auto p : part.curve) {
      p.step += (s - 1) * sched.total_steps;
      report.curve.push_back(p);
    }
    report.final_loss = part.final_loss;
  }
  report.steps = 2 * sched.total_steps;
  report.seconds = detail::seconds_since(start);
  const auto m = nar_metrics(nar, enc, cfg.options.ref_max_frames);
  report.metrics = {{"stage1_exact_match", m.stage1_exact_match}, {"stage2_exact_match", m.stage2_exact_match}};
  return {nar_checkpoint(cfg, &nar, report.steps, rng.state()), report};
}

/// Stage 4: flow decoder fine-tuned on features decoded from the frozen
/// tokenizer's tokens, starting from the jointly trained weights.
inline StageResult train_flow(const PipelineConfig& cfg, const Dataset& data, const Checkpoint& tokenizer_ckpt,
                              const ProgressFn& progress = {}) {
  cfg.validate();
  detail::check_dataset(cfg, data);
  const auto start = std::chrono::steady_clock::now();
  require_tokenizer_match(cfg, tokenizer_ckpt);
  const auto tok = load_tokenizer_model(tokenizer_ckpt);
  Rng init_rng(0);
  FlowDecoder<float> flow(checkpoint_config(tokenizer_ckpt).flow, init_rng);
  {
    ParamList<float> src, dst;
    tok.flow.collect("flow", src);
    flow.collect("flow", dst);
    for (std::size_t i = 0; i < dst.size(); ++i) {
      auto d = dst[i].second.mutable_data();
      std::copy(src[i].second.data().begin(), src[i].second.data().end(), d.begin());
    }
  }
  const auto enc = encode_dataset(tok.tokenizer, data);
  std::vector<Tensor<float>> features, conditions, mels;
  for (std::size_t i = 0; i < data.size(); ++i) {
    features.push_back(to_tensor<float>(tok.tokenizer.decode_features(enc.utterances[i].tokens)));
    conditions.push_back(condition_tensor(enc.utterances[i].condition));
    mels.push_back(to_tensor<float>(data.entries[i].bundle.mel));
  }
  const auto& sched = cfg.flow_schedule;
  Rng rng(sched.seed, 0x666c6f77ull);
  ParamList<float> params;
  flow.collect("flow", params);
  Adam<float> opt(params, AdamConfig{});
  detail::EpochSampler sampler(data.size(), rng);
  detail::LossTracker tracker("flow", cfg.options.log_every, sched.total_steps, progress);
  for (std::size_t step = 0; step < sched.total_steps; ++step) {
    const double lr = sched.learning_rate(step);
    const double loss = detail::accumulate_step(opt, sched.batch_size, lr, [&] {
      const std::size_t i = sampler.next();
      return cfm_train_loss(flow, mels[i], features[i], conditions[i], rng);
    });
    tracker.record(step, loss, lr);
  }
  auto report = tracker.finish(detail::seconds_since(start));
  const auto m = mel_metrics(tok.tokenizer, flow, data, enc, cfg.options.solver_steps, sched.seed);
  report.metrics = {{"mel_mse", m.mse}, {"mel_relative_mse", m.relative_mse}};
  return {flow_checkpoint(cfg, flow, sched.total_steps, rng.state()), report};
}

}  // namespace pgpt
