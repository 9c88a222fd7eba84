// Copyright 2026 The Parallel GPT Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance runner: prints one PASS/FAIL line per criterion and exits
// nonzero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pgpt/metrics.hpp"
#include "pgpt/numerics/gradcheck.hpp"
#include "pgpt/numerics/optim.hpp"
#include "pgpt/pipeline/pipeline.hpp"

namespace fs = std::filesystem;
using namespace pgpt;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(4);
  s << v;
  return s.str();
}

Matrix random_frames(std::size_t t, std::size_t d, Rng& rng, double stddev = 1.0) {
  Matrix m(t, d);
  for (auto& v : m.data) v = static_cast<float>(rng.normal() * stddev);
  return m;
}

template <typename Real>
Tensor<Real> gaussian(std::size_t r, std::size_t c, Rng& rng) {
  std::vector<Real> v(r * c);
  for (auto& x : v) x = static_cast<Real>(rng.normal());
  return Tensor<Real>({r, c}, std::move(v));
}

// ---------------------------------------------------------------- 1, 2: RVQ

// Exhaustive per-layer nearest-neighbour search, independent of Codebook helpers.
TokenMatrix brute_force_tokens(const RVQStack& stack, const Matrix& frames) {
  TokenMatrix out(frames.rows, stack.num_layers());
  for (std::size_t t = 0; t < frames.rows; ++t) {
    std::vector<float> r(frames.row(t).begin(), frames.row(t).end());
    for (std::size_t l = 0; l < stack.num_layers(); ++l) {
      const auto& cb = stack.layer(l);
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < cb.size; ++k) {
        double s = 0;
        for (std::size_t i = 0; i < cb.dim; ++i) {
          const float diff = r[i] - cb.entries[k * cb.dim + i];
          s += double(diff) * diff;
        }
        if (s < best_d) best_d = s, best = k;
      }
      out(t, l) = static_cast<int>(best);
      for (std::size_t i = 0; i < cb.dim; ++i) r[i] -= cb.entries[best * cb.dim + i];
    }
  }
  return out;
}

struct RVQFixture {
  RVQStack stack;
  Matrix frames;
};

RVQFixture rvq_fixture() {
  Rng rng(2026);
  auto stack = RVQStack::random(RVQConfig{8, 16, 3}, rng);
  return {std::move(stack), random_frames(1000, 8, rng, 1.5)};
}

Outcome rvq_oracle() {
  const auto start = Clock::now();
  const auto f = rvq_fixture();
  const auto tokens = f.stack.encode(f.frames).tokens;
  const auto oracle = brute_force_tokens(f.stack, f.frames);
  std::size_t mismatched = 0;
  for (std::size_t i = 0; i < tokens.ids.size(); ++i) mismatched += tokens.ids[i] != oracle.ids[i];
  const double secs = seconds_since(start);
  return {mismatched == 0 && secs < 10.0,
          std::to_string(mismatched) + " mismatched tokens of " + std::to_string(tokens.ids.size()) + ", " + fmt(secs) +
              " s"};
}

Outcome residual_monotonicity() {
  const auto f = rvq_fixture();
  const auto enc = f.stack.encode(f.frames);
  std::size_t violations = 0;
  for (std::size_t t = 0; t < f.frames.rows; ++t) {
    double norm = 0;
    for (float v : f.frames.row(t)) norm += double(v) * v;
    float prev = static_cast<float>(std::sqrt(norm));
    for (std::size_t l = 0; l < f.stack.num_layers(); ++l) {
      violations += enc.residual_norms(t, l) > prev;
      prev = enc.residual_norms(t, l);
    }
  }
  return {violations == 0, std::to_string(violations) + " violations over " + std::to_string(f.frames.rows) +
                               " frames x " + std::to_string(f.stack.num_layers()) + " layers"};
}

// ------------------------------------------------------------ shared models

ARConfig tiny_ar_config() {
  ARConfig c;
  c.text_vocab = 12;
  c.semantic_vocab = 7;
  c.acoustic_vocab = 5;
  c.model_dim = 16;
  c.n_heads = 2;
  c.n_layers = 2;
  c.stop_hidden = 8;
  c.max_text_len = 16;
  c.max_speech_len = 40;
  c.max_len = 12;
  return c;
}

NARConfig tiny_nar_config() {
  NARConfig c;
  c.semantic_vocab = 6;
  c.acoustic_vocab = 4;
  c.model_dim = 16;
  c.n_heads = 2;
  c.n_layers = 2;
  c.classifier_dim = 12;
  c.max_target_len = 32;
  c.max_ref_len = 16;
  return c;
}

ParallelTokens random_tokens(std::size_t frames, std::size_t layers, std::size_t sem_vocab, std::size_t ac_vocab,
                             Rng& rng) {
  ParallelTokens t{TokenMatrix(frames, layers), TokenMatrix(frames, layers)};
  for (auto& id : t.semantic.ids) id = static_cast<int>(rng.uniform_int(sem_vocab));
  for (auto& id : t.acoustic.ids) id = static_cast<int>(rng.uniform_int(ac_vocab));
  return t;
}

ParallelTokens random_tokens(std::size_t frames, std::size_t layers, const ARConfig& c, Rng& rng) {
  return random_tokens(frames, layers, c.semantic_vocab, c.acoustic_vocab, rng);
}

std::vector<int> random_text(std::size_t n, const ARConfig& c, Rng& rng) {
  std::vector<int> ids{kBosId};
  for (std::size_t i = 0; i < n; ++i) ids.push_back(kFirstSymbolId + static_cast<int>(rng.uniform_int(c.text_vocab - 3)));
  ids.push_back(kEosId);
  return ids;
}

FlowConfig small_flow_config() {
  FlowConfig c;
  c.mel_dim = 6;
  c.feature_dim = 5;
  c.condition_dim = 3;
  c.hidden_dim = 64;
  return c;
}

// --------------------------------------------------------- 3: gradient suite

Outcome gradient_suite() {
  const auto start = Clock::now();
  std::vector<std::pair<std::string, GradCheckReport>> reports;

  {
    Rng rng(8);
    auto stack = RVQStack::random(RVQConfig{4, 8, 3}, rng);
    nn::Linear<double> projector(4, 4, rng);
    const auto x = to_tensor<double>(random_frames(6, 4, rng));
    ParamList<double> params;
    projector.collect("projector", params);
    reports.emplace_back("rvq", grad_check([&] { return quantize_straight_through(stack, projector(x)).commitment; },
                                           params));
  }
  {
    auto c = tiny_ar_config();
    c.model_dim = 8;
    c.n_layers = 1;
    Rng rng(11);
    ParallelAR<double> model(c, rng);
    const auto text = random_text(2, c, rng);
    const auto ref = random_tokens(2, 1, c, rng);
    const auto tgt = random_tokens(3, 1, c, rng);
    ParamList<double> params;
    model.collect("ar", params);
    reports.emplace_back("ar", grad_check([&] { return model.loss(model.forward(text, ref, tgt), tgt).total; }, params));
  }
  {
    auto c = tiny_nar_config();
    c.model_dim = 8;
    c.n_layers = 1;
    c.classifier_dim = 6;
    Rng rng(7);
    CoupledNAR<double> nar(c, rng);
    const auto truth = random_tokens(3, 3, c.semantic_vocab, c.acoustic_vocab, rng);
    const auto ref = random_tokens(2, 3, c.semantic_vocab, c.acoustic_vocab, rng);
    ParamList<double> params;
    nar.collect("nar", params);
    reports.emplace_back("nar", grad_check([&] { return nar.loss(truth, ref).total; }, params));
  }
  {
    Rng rng(6);
    FlowDecoder<double> model(small_flow_config(), rng);
    auto direct_config = small_flow_config();
    direct_config.predict_data = false;
    FlowDecoder<double> direct(direct_config, rng);
    auto mel = gaussian<double>(3, 6, rng), x0 = gaussian<double>(3, 6, rng);
    auto features = gaussian<double>(3, 5, rng);
    features.set_requires_grad(true);
    auto speaker = gaussian<double>(1, 3, rng);
    speaker.set_requires_grad(true);
    const std::vector<double> t{0.1, 0.4, 0.7};
    ParamList<double> params{{"features", features}, {"speaker", speaker}};
    model.collect("flow", params);
    direct.collect("direct", params);
    reports.emplace_back("cfm", grad_check([&] {
      return add(cfm_loss_at(model, mel, x0, t, features, speaker), cfm_loss_at(direct, mel, x0, t, features, speaker));
    }, params));
  }
  {
    SyntheticSpec spec;
    spec.n_utterances = 1;
    spec.max_symbols = 4;
    spec.max_frames_per_symbol = 2;
    const auto corpus = generate_synthetic_corpus(spec);
    const auto& b = corpus.utterances[0].bundle;
    TokenizerConfig config;
    config.condition_dim = 8;
    config.condition_heads = 2;
    Rng rng(6);
    ParallelTokenizer<double> tok(config, rng);
    ParamList<double> params;
    tok.collect("tokenizer", params);
    const auto probe = gaussian<double>(1, config.condition_dim, rng);
    reports.emplace_back("condition", grad_check([&] {
      auto projected = tok.project_speaker(b.speaker_frames);
      return add(tok.speaker_distill_loss(projected, b.speaker_global),
                 sum(mul(tok.condition_from_projection(projected), probe)));
    }, params));
  }

  const double secs = seconds_since(start);
  bool pass = secs < 60.0;
  std::string detail;
  for (const auto& [name, r] : reports) {
    pass = pass && r.passed;
    detail += name + " " + fmt(r.max_rel_error) + (r.passed ? "" : " (over 1e-4)") + ", ";
  }
  return {pass, "max rel error: " + detail + fmt(secs) + " s"};
}

// ---------------------------------------------------------- 4: AR causality

Outcome ar_causality() {
  const auto c = tiny_ar_config();
  Rng rng(4);
  ParallelAR<float> model(c, rng);
  std::size_t violations = 0, compared = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto text = random_text(1 + rng.uniform_int(4), c, rng);
    const auto ref = random_tokens(rng.uniform_int(5), 1, c, rng);
    auto tgt = random_tokens(3 + rng.uniform_int(6), 1, c, rng);
    const std::size_t t = rng.uniform_int(tgt.frames() - 1);
    const auto base = model.forward(text, ref, tgt);
    tgt.semantic(t + 1, 0) = (tgt.semantic(t + 1, 0) + 1) % int(c.semantic_vocab);
    tgt.acoustic(t + 1, 0) = (tgt.acoustic(t + 1, 0) + 2) % int(c.acoustic_vocab);
    const auto moved = model.forward(text, ref, tgt);
    // Row r scores frame r from frames < r; rows up to t + 1 never see frame t + 1.
    for (std::size_t r = 0; r <= t + 1; ++r) {
      for (std::size_t k = 0; k < c.semantic_vocab; ++k)
        violations += base.semantic[0][r * c.semantic_vocab + k] != moved.semantic[0][r * c.semantic_vocab + k];
      for (std::size_t k = 0; k < c.acoustic_vocab; ++k)
        violations += base.acoustic[0][r * c.acoustic_vocab + k] != moved.acoustic[0][r * c.acoustic_vocab + k];
      violations += base.stop[r] != moved.stop[r];
      compared += c.semantic_vocab + c.acoustic_vocab + 1;
    }
  }
  return {violations == 0, std::to_string(violations) + " changed logits of " + std::to_string(compared) +
                               " compared over 100 trials"};
}

// ----------------------------------------------------- 5: dual-stream length

int argmax_row(const Tensor<float>& m, std::size_t row, std::size_t k) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < k; ++j)
    if (m[row * k + j] > m[row * k + best]) best = j;
  return static_cast<int>(best);
}

Outcome ar_alignment() {
  const auto c = tiny_ar_config();
  Rng rng(9);
  ParallelAR<float> model(c, rng);
  const auto text = random_text(3, c, rng);
  const auto ref = random_tokens(3, 1, c, rng);
  // Put the stop threshold at the median stop logit of sampled prefixes so
  // that generated lengths vary across seeds.
  auto& stop = model.stop_output();
  std::vector<float> raw;
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    stop.bias = Tensor<float>({1}, {-50.0f}, true);
    const auto g = model.generate(text, ref, GenerateOptions{4, 1.0, 10, 100 + seed});
    const auto l = model.forward(text, ref, g.tokens);
    for (std::size_t t = 1; t <= g.tokens.frames(); ++t) raw.push_back(l.stop[t] + 50.0f);
  }
  std::nth_element(raw.begin(), raw.begin() + raw.size() / 2, raw.end());
  const float first = model.forward(text, ref, ParallelTokens{}).stop[0] + 50.0f;
  stop.bias = Tensor<float>({1}, {-std::max(raw[raw.size() / 2], first + 0.01f)}, true);

  std::size_t violations = 0;
  std::set<std::size_t> lengths;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto g = model.generate(text, ref, GenerateOptions{4, 1.0, 10, seed});
    violations += g.tokens.semantic.frames != g.tokens.acoustic.frames;
    lengths.insert(g.tokens.semantic.frames);
  }

  // Greedy oracle: rerun the teacher-forced pass on the growing prefix.
  std::size_t greedy_mismatch = 0;
  for (int trial = 0; trial < 10; ++trial) {
    const auto t_text = random_text(2 + rng.uniform_int(3), c, rng);
    const auto t_ref = random_tokens(rng.uniform_int(4), 1, c, rng);
    const auto generated = model.generate(t_text, t_ref, GenerateOptions{1, 1.0, 10, std::uint64_t(trial)});
    ParallelTokens prefix{TokenMatrix(0, 1), TokenMatrix(0, 1)};
    while (true) {
      const auto l = model.forward(t_text, t_ref, prefix);
      const std::size_t t = prefix.frames();
      if (1.0 / (1.0 + std::exp(-double(l.stop[t]))) > 0.5 || t == 10) break;
      ParallelTokens padded{TokenMatrix(t + 1, 1), TokenMatrix(t + 1, 1)};
      std::copy(prefix.semantic.ids.begin(), prefix.semantic.ids.end(), padded.semantic.ids.begin());
      std::copy(prefix.acoustic.ids.begin(), prefix.acoustic.ids.end(), padded.acoustic.ids.begin());
      const auto next = model.forward(t_text, t_ref, padded);
      padded.semantic(t, 0) = argmax_row(next.semantic[0], t, c.semantic_vocab);
      padded.acoustic(t, 0) = argmax_row(next.acoustic[0], t, c.acoustic_vocab);
      prefix = padded;
    }
    greedy_mismatch += !(generated.tokens == prefix);
  }
  return {violations == 0 && greedy_mismatch == 0,
          std::to_string(violations) + " unequal of 200 seeds (" + std::to_string(lengths.size()) +
              " distinct lengths), " + std::to_string(greedy_mismatch) + " of 10 top-1 traces differ from greedy"};
}

// ------------------------------------------------------ 8: CFM convergence

Outcome cfm_convergence() {
  Rng rng(11);
  FlowDecoder<float> model(small_flow_config(), rng);
  const auto mel = gaussian<float>(8, 6, rng), features = gaussian<float>(8, 5, rng),
             speaker = gaussian<float>(1, 3, rng);
  ParamList<float> params;
  model.collect("flow", params);
  Adam<float> opt(params, AdamConfig{});
  Rng noise(12);
  const int steps = 10000;
  for (int step = 0; step < steps; ++step) {
    opt.zero_grad();
    cfm_train_loss(model, mel, features, speaker, noise).backward();
    opt.step(1e-5 + 0.5 * (3e-3 - 1e-5) * (1.0 + std::cos(3.141592653589793 * step / steps)));
  }
  const Matrix target = to_matrix(mel);
  const double at32 = mean_squared_error(sample_mel(model, features, speaker, 8, SolverConfig{32, 0}), target);
  bool monotone = true;
  double previous = std::numeric_limits<double>::infinity();
  std::string curve;
  for (std::size_t n : {1u, 4u, 16u, 64u}) {
    double err = 0.0;
    for (std::uint64_t seed = 0; seed < 16; ++seed)
      err += mean_squared_error(sample_mel(model, features, speaker, 8, SolverConfig{n, seed}), target);
    err /= 16.0;
    monotone = monotone && err <= previous;
    previous = err;
    curve += (curve.empty() ? "" : ", ") + std::to_string(n) + ":" + fmt(err);
  }
  return {at32 < 0.05 && monotone, "MSE at 32 steps " + fmt(at32) + "; mean MSE by steps {" + curve + "}"};
}

// ------------------------------------------------------- 9: loss identities

Outcome loss_identities() {
  double worst_uniform = 0.0;
  for (std::size_t k : {2u, 5u, 7u, 16u, 1024u}) {
    std::vector<int> targets;
    for (std::size_t i = 0; i < 4; ++i) targets.push_back(static_cast<int>((i * 3) % k));
    const double ce = cross_entropy(Tensor<double>::zeros({4, k}), targets).item();
    worst_uniform = std::max(worst_uniform, std::abs(ce - std::log(double(k))));
  }

  std::size_t ar_bad = 0, nar_bad = 0;
  const auto ac = tiny_ar_config();
  const auto nc = tiny_nar_config();
  Rng rng(6);
  ParallelAR<double> ar(ac, rng);
  CoupledNAR<double> nar(nc, rng);
  for (int trial = 0; trial < 20; ++trial) {
    const auto tgt = random_tokens(1 + rng.uniform_int(6), 1, ac, rng);
    const auto l = ar.loss(ar.forward(random_text(1 + rng.uniform_int(4), ac, rng),
                                      random_tokens(rng.uniform_int(4), 1, ac, rng), tgt),
                           tgt);
    ar_bad += l.total.item() != l.semantic.item() + l.acoustic.item() + l.stop.item();
    const auto truth = random_tokens(1 + rng.uniform_int(6), 3, nc.semantic_vocab, nc.acoustic_vocab, rng);
    const auto ref = random_tokens(1 + rng.uniform_int(4), 3, nc.semantic_vocab, nc.acoustic_vocab, rng);
    const auto n = nar.loss(truth, ref);
    nar_bad += n.total.item() != n.second.item() + n.third.item();
  }
  return {worst_uniform < 1e-6 && ar_bad == 0 && nar_bad == 0,
          "uniform CE max |CE - ln K| " + fmt(worst_uniform) + "; AR total != parts in " + std::to_string(ar_bad) +
              "/20; NAR total != parts in " + std::to_string(nar_bad) + "/20"};
}

// --------------------------------------------------------- 10: serialization

FeatureBundle random_bundle(Rng& rng) {
  const std::size_t t = 1 + rng.uniform_int(20);
  auto mat = [&](std::size_t r, std::size_t c) { return random_frames(r, c, rng, 3.0); };
  FeatureBundle b;
  b.semantic = mat(t, 1 + rng.uniform_int(9));
  b.acoustic = mat(t, 1 + rng.uniform_int(9));
  b.speaker_frames = mat(t, 1 + rng.uniform_int(9));
  b.speaker_global = mat(1, 1 + rng.uniform_int(9)).data;
  b.mel = mat(t, 1 + rng.uniform_int(9));
  const std::size_t n = rng.uniform_int(12);
  b.symbols.push_back(kBosId);
  for (std::size_t i = 0; i < n; ++i) b.symbols.push_back(static_cast<int>(rng.uniform_int(1 << 20)));
  b.symbols.push_back(kEosId);
  return b;
}

Checkpoint random_checkpoint(Rng& rng) {
  Checkpoint c;
  c.stage = static_cast<StageTag>(rng.uniform_int(4));
  c.config = {{"a", rng.normal()}, {"b", int(rng.uniform_int(1000)) - 500}, {"c", std::string(rng.uniform_int(5), 'x')}};
  c.metadata = Json::object();
  if (rng.uniform() < 0.5) c.metadata["vocabulary"] = {"a", "b"};
  c.step = rng.next_u64();
  c.rng = {rng.next_u64(), rng.next_u64(), rng.next_u64(), static_cast<std::uint32_t>(rng.uniform_int(5))};
  const std::size_t n = rng.uniform_int(6);
  for (std::size_t i = 0; i < n; ++i) {
    FeatureArray a;
    a.name = "blob." + std::to_string(i);
    const std::size_t rank = rng.uniform_int(4);
    std::size_t count = 1;
    for (std::size_t r = 0; r < rank; ++r) {
      a.dims.push_back(rng.uniform_int(5));
      count *= a.dims.back();
    }
    for (std::size_t k = 0; k < count; ++k) a.data.push_back(static_cast<float>(rng.normal() * 10.0));
    c.blobs.push_back(std::move(a));
  }
  return c;
}

Outcome serialization(const fs::path& work, const fs::path& ckpt_dir) {
  const fs::path dir = work / "serialization";
  fs::create_directories(dir);
  Rng rng(31);
  std::size_t failures = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const auto c = random_checkpoint(rng);
    const auto path = dir / "fuzz.ckpt";
    save_checkpoint(path, c);
    const auto back = load_checkpoint(path);
    failures += !(back == c) || encode_checkpoint(back) != detail::read_file(path);
    const auto bytes = detail::read_file(path);
    const std::size_t cut = rng.uniform_int(bytes.size());
    try {
      (void)decode_checkpoint({bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut)}, "cut");
      ++failures;
    } catch (const FeatureFileError&) {
    } catch (const CheckpointError&) {
    }

    const auto b = random_bundle(rng);
    save_features(dir / "fuzz.feat", b);
    const auto loaded = load_features(dir / "fuzz.feat");
    failures += !(loaded == b) || encode_feature_arrays(bundle_arrays(loaded)) != detail::read_file(dir / "fuzz.feat");
  }

  // Trained checkpoints re-encode to the same bytes and rebuild the same models.
  std::size_t trained_failures = 0;
  for (const char* name : kStageFiles) {
    const auto bytes = detail::read_file(ckpt_dir / name);
    const auto c = decode_checkpoint(bytes, name);
    trained_failures += encode_checkpoint(c) != bytes;
  }
  const auto tok = load_tokenizer_model(load_checkpoint(ckpt_dir / "tokenizer.ckpt"));
  Rng step_rng(1);
  const auto again = decode_checkpoint(encode_checkpoint(tokenizer_checkpoint(tok, 0, step_rng.state())), "again");
  const auto tok2 = load_tokenizer_model(again);
  ParamList<float> p1 = tok.parameters(), p2 = tok2.parameters();
  for (std::size_t i = 0; i < p1.size(); ++i) {
    const auto a = p1[i].second.data(), b = p2[i].second.data();
    trained_failures += !std::equal(a.begin(), a.end(), b.begin(), b.end());
  }
  return {failures == 0 && trained_failures == 0,
          std::to_string(failures) + " failures in 500 fuzz cases (checkpoint, truncation, feature file); " +
              std::to_string(trained_failures) + " failures on trained checkpoints"};
}

// ------------------------------------------------------------ CLI pipeline

struct ChainResult {
  bool ran = false;
  std::vector<std::pair<std::string, int>> exits;
  double train_seconds = 0.0;
  std::optional<EvalReport> report;
  std::string error;
  bool all_ok() const {
    return ran && std::all_of(exits.begin(), exits.end(), [](const auto& e) { return e.second == 0; });
  }
};

std::string quote(const fs::path& p) { return "'" + p.string() + "'"; }

int run_command(const std::string& label, const std::string& cmd, const fs::path& log) {
  std::cerr << "  running " << label << "\n";
  const int status = std::system((cmd + " > " + quote(log) + " 2>&1").c_str());
  if (status == -1) return -1;
  return WIFEXITED(status) ? WEXITSTATUS(status) : 128;
}

ChainResult run_chain(const fs::path& cli, const fs::path& config, const fs::path& corpus_spec, const fs::path& work) {
  ChainResult r;
  r.ran = true;
  const fs::path data = work / "data", ckpt = work / "ckpt", logs = work / "logs";
  fs::remove_all(data);
  fs::remove_all(ckpt);
  fs::create_directories(logs);
  fs::create_directories(ckpt);
  const std::string exe = quote(cli);
  auto step = [&](const std::string& label, const std::string& args) {
    const int code = run_command(label, exe + " " + args, logs / (label + ".log"));
    r.exits.emplace_back(label, code);
    return code == 0;
  };

  const auto start = Clock::now();
  bool ok = step("gen-data", "gen-data --spec " + quote(corpus_spec) + " --out " + quote(data));
  for (const char* stage : {"tokenizer", "ar", "nar", "flow"}) {
    if (!ok) break;
    ok = step(std::string("train-") + stage, std::string("train --stage ") + stage + " --config " + quote(config) +
                                                 " --data " + quote(data) + " --out " + quote(ckpt / (std::string(stage) + ".ckpt")));
  }
  r.train_seconds = seconds_since(start);
  if (!ok) return r;

  const auto dataset = load_dataset(data);
  const std::size_t ref = dataset.size() > 1 ? 1 : 0;
  ok = step("infer", "infer --text " + quote(dataset.entries[0].text) + " --ref " + quote(data / dataset.entries[ref].file) +
                         " --ckpt-dir " + quote(ckpt) + " --seed 7 --top-k 4 --out " + quote(work / "infer.feat"));
  if (ok) ok = step("eval", "eval --data " + quote(data) + " --ckpt-dir " + quote(ckpt) + " --report " + quote(work / "eval.json"));
  for (const char* name : kStageFiles) {
    if (!ok) break;
    ok = step(std::string("inspect-") + name, "inspect --ckpt " + quote(ckpt / name));
  }
  if (ok) {
    try {
      r.report = eval_report_from_json(read_json_file(work / "eval.json"));
    } catch (const std::exception& e) {
      r.error = e.what();
    }
  }
  return r;
}

std::string exit_summary(const ChainResult& r) {
  std::string s;
  for (const auto& [label, code] : r.exits) {
    if (code != 0) s += label + " exited " + std::to_string(code) + "; ";
  }
  return s;
}

Outcome overfit(const ChainResult& r) {
  if (!r.report) return {false, "pipeline did not finish: " + exit_summary(r) + r.error};
  const auto& e = *r.report;
  auto min_of = [](const std::vector<double>& v) { return v.empty() ? 0.0 : *std::min_element(v.begin(), v.end()); };
  const double sem_acc = min_of(e.ar_semantic_accuracy), ac_acc = min_of(e.ar_acoustic_accuracy);
  const bool tok_ok = e.semantic_recon_relative_mse < 0.01 && e.acoustic_recon_relative_mse < 0.01;
  const bool ar_ok = sem_acc >= 0.95 && ac_acc >= 0.95;
  const bool nar_ok = e.nar_evaluated && e.nar_stage1_exact_match >= 0.9 && e.nar_stage2_exact_match >= 0.9;
  const bool time_ok = r.train_seconds < 1800.0;
  return {tok_ok && ar_ok && nar_ok && time_ok,
          std::to_string(e.utterances) + " utterances; recon rel MSE sem " + fmt(e.semantic_recon_relative_mse) + " ac " +
              fmt(e.acoustic_recon_relative_mse) + "; AR acc sem " + fmt(sem_acc) + " ac " + fmt(ac_acc) +
              "; NAR exact match stage1 " + fmt(e.nar_stage1_exact_match) + " stage2 " +
              fmt(e.nar_stage2_exact_match) + "; gen-data + 4 stages " + fmt(r.train_seconds) + " s"};
}

Outcome decoupling(const fs::path& work) {
  const auto data = load_dataset(work / "data");
  const auto tok = load_tokenizer_model(load_checkpoint(work / "ckpt" / "tokenizer.ckpt"));
  std::map<std::size_t, std::vector<std::size_t>> by_text;
  std::vector<std::vector<float>> points;
  std::vector<int> labels;
  std::vector<EncodedSpeech> encoded;
  for (std::size_t i = 0; i < data.size(); ++i) {
    encoded.push_back(tok.tokenizer.encode_speech(data.entries[i].bundle));
    by_text[data.entries[i].text_id].push_back(i);
    points.push_back(encoded.back().condition.vector);
    labels.push_back(static_cast<int>(data.entries[i].speaker_id));
  }
  std::size_t frames = 0, agree = 0, max_speakers = 0;
  for (const auto& [text, members] : by_text) {
    std::set<std::size_t> speakers;
    for (auto i : members) speakers.insert(data.entries[i].speaker_id);
    max_speakers = std::max(max_speakers, speakers.size());
    const auto& first = encoded[members[0]].tokens.semantic;
    for (auto i : members) {
      const auto& other = encoded[i].tokens.semantic;
      if (other.frames != first.frames) {
        frames += std::max(other.frames, first.frames);
        continue;
      }
      for (std::size_t t = 0; t < first.frames; ++t) {
        bool same = true;
        for (std::size_t l = 0; l < first.layers; ++l) same = same && first(t, l) == other(t, l);
        agree += same;
        ++frames;
      }
    }
  }
  const double agreement = frames ? double(agree) / double(frames) : 0.0;
  const double silhouette = silhouette_score(points, labels);
  return {agree == frames && frames > 0 && max_speakers >= 4 && silhouette > 0.5,
          "semantic frame agreement " + fmt(agreement) + " over " + std::to_string(by_text.size()) + " texts (up to " +
              std::to_string(max_speakers) + " speakers per text); condition silhouette " + fmt(silhouette)};
}

Outcome smoke(const ChainResult& r, const fs::path& work) {
  if (!r.all_ok() || !r.report) return {false, "failed steps: " + exit_summary(r) + r.error};
  const Matrix mel = check_inference_file(work / "infer.feat", load_pipeline(work / "ckpt").config);
  return {true, std::to_string(r.exits.size()) + " commands exited 0; infer wrote " + std::to_string(mel.rows) + "x" +
                    std::to_string(mel.cols) + " finite mel frames"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria runner"};
  std::string cli, config, corpus, work = (fs::temp_directory_path() / "pgpt_acceptance").string();
  std::vector<int> only;
  app.add_option("--cli", cli, "Path to the pgpt executable")->required();
  app.add_option("--config", config, "Pipeline config JSON")->required();
  app.add_option("--corpus-spec", corpus, "Synthetic corpus spec JSON")->required();
  app.add_option("--work", work, "Scratch directory");
  app.add_option("--only", only, "Run only these criteria");
  CLI11_PARSE(app, argc, argv);

  auto selected = [&](int id) { return only.empty() || std::find(only.begin(), only.end(), id) != only.end(); };
  fs::create_directories(work);

  ChainResult chain;
  if (selected(6) || selected(7) || selected(10) || selected(11)) {
    std::cerr << "running the toy pipeline through " << cli << "\n";
    try {
      chain = run_chain(cli, config, corpus, work);
    } catch (const std::exception& e) {
      chain.error = e.what();
    }
  }

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"RVQ oracle equivalence", rvq_oracle},
      {"residual monotonicity", residual_monotonicity},
      {"gradient suite", gradient_suite},
      {"AR causality", ar_causality},
      {"AR dual-stream alignment", ar_alignment},
      {"overfit", [&] { return overfit(chain); }},
      {"decoupling probe", [&] { return decoupling(work); }},
      {"CFM convergence", cfm_convergence},
      {"loss identities", loss_identities},
      {"serialization", [&] { return serialization(work, fs::path(work) / "ckpt"); }},
      {"end-to-end smoke", [&] { return smoke(chain, work); }},
  };

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!selected(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << id << " " << criteria[i].first << ": " << o.detail << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
