// Copyright 2026 The Parallel GPT Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "pipeline_fixtures.hpp"

using namespace pgpt;
using namespace pgpt::testing;
namespace fs = std::filesystem;

namespace {

std::string error_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

bool contains(const std::string& s, const std::string& part) { return s.find(part) != std::string::npos; }

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
    a.name = "blob." + std::to_string(i) + std::string(rng.uniform_int(4), 'y');
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

}  // namespace

TEST_CASE("schedule: warmup starts at base and reaches peak") {
  TrainSchedule s;
  s.total_steps = 100;
  s.warmup_steps = 10;
  s.base_lr = 1e-5;
  s.peak_lr = 1e-3;
  s.final_lr = 1e-4;
  CHECK(s.learning_rate(0) == 1e-5);
  CHECK(s.learning_rate(10) == Catch::Approx(1e-3).epsilon(1e-12));
  CHECK(s.learning_rate(5) == Catch::Approx(1e-5 + 0.5 * (1e-3 - 1e-5)));
  CHECK(s.learning_rate(100) == Catch::Approx(1e-4));
  for (std::size_t t = 11; t <= 100; ++t) CHECK(s.learning_rate(t) <= s.learning_rate(t - 1));
  s.kind = ScheduleKind::constant;
  CHECK(s.learning_rate(50) == 1e-3);

  s.warmup_steps = 101;
  CHECK_THROWS_AS(s.validate("s"), ConfigError);
  s.warmup_steps = 0;
  s.peak_lr = 0;
  CHECK_THROWS_AS(s.validate("s"), ConfigError);
}

TEST_CASE("schedule: full profile keeps the stated values") {
  const auto p = full_profile();
  CHECK(p.ar_schedule.warmup_steps == 2000);
  CHECK(p.ar_schedule.kind == ScheduleKind::cosine);
  CHECK(p.ar_schedule.decay_steps == 40000);
  CHECK(p.ar_schedule.total_steps == 800000);
  CHECK(p.ar_schedule.learning_rate(0) == 1e-2);
  CHECK(p.ar_schedule.learning_rate(2000) == Catch::Approx(1e-5).epsilon(1e-12));
  CHECK(p.ar_schedule.learning_rate(42000) == Catch::Approx(1e-4));
  CHECK(p.tokenizer_schedule.total_steps == 450000);
  CHECK(p.tokenizer_schedule.learning_rate(1234) == 2e-4);
  CHECK(p.nar_schedule.total_steps == 200000);
  CHECK(p.nar_schedule.batch_size == 16);
  CHECK(p.nar_schedule.learning_rate(100) == 2e-5);
  const auto t = toy_profile();
  CHECK(t.tokenizer_schedule.total_steps == 5000);
  CHECK(t.ar_schedule.total_steps == 10000);
  CHECK(t.nar_schedule.total_steps == 5000);
  CHECK(t.ar_schedule.peak_lr == 3e-4);
  CHECK(t.ar_schedule.final_lr == 3e-5);
}

TEST_CASE("config: shipped JSON files equal the built-in profiles") {
  const fs::path dir = PGPT_SOURCE_DIR "/configs";
  CHECK(to_json(config_from_json(read_json_file(dir / "toy.json"))) == to_json(toy_profile()));
  CHECK(to_json(config_from_json(read_json_file(dir / "full.json"))) == to_json(full_profile()));
  CHECK(to_json(spec_from_json(read_json_file(dir / "toy_spec.json"))) == to_json(SyntheticSpec{}));
  CHECK(SyntheticSpec{}.noise_scale == 0.0);
  CHECK(SyntheticSpec{}.n_utterances == 32);
}

TEST_CASE("config: errors name the offending field") {
  const Json good = to_json(tiny_config());
  CHECK(to_json(config_from_json(good)) == good);

  auto j = good;
  j["ar"].erase("model_dim");
  CHECK(contains(error_of([&] { config_from_json(j); }), "config.ar.model_dim"));
  j = good;
  j["nar"]["extra"] = 1;
  CHECK(contains(error_of([&] { config_from_json(j); }), "unknown field config.nar.extra"));
  j = good;
  j["flow"]["hidden_dim"] = "wide";
  CHECK(contains(error_of([&] { config_from_json(j); }), "config.flow.hidden_dim"));
  j = good;
  j["schedule"]["ar"]["total_steps"] = -3;
  CHECK(contains(error_of([&] { config_from_json(j); }), "config.schedule.ar.total_steps"));
  j = good;
  j["schedule"]["nar"]["kind"] = "linear";
  CHECK(contains(error_of([&] { config_from_json(j); }), "constant or cosine"));
  j = good;
  j["ar"]["semantic_vocab"] = 9;
  CHECK(contains(error_of([&] { config_from_json(j); }), "ar.semantic_vocab != tokenizer.codebook_size"));
  j = good;
  j["flow"]["feature_dim"] = 3;
  CHECK(contains(error_of([&] { config_from_json(j); }), "flow.feature_dim"));

  auto spec = tiny_spec();
  spec.mel_dim = 5;
  CHECK(contains(error_of([&] { tiny_config().check_corpus(spec); }), "flow.mel_dim"));
}

TEST_CASE("checkpoint: random checkpoints round-trip bit-exactly (500 cases)") {
  Rng rng(31);
  int failures = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const auto c = random_checkpoint(rng);
    const auto bytes = encode_checkpoint(c);
    const auto back = decode_checkpoint(bytes, "fuzz");
    if (!(back == c) || encode_checkpoint(back) != bytes) ++failures;
    // Any truncation is rejected with a typed error.
    const std::size_t cut = rng.uniform_int(bytes.size());
    try {
      (void)decode_checkpoint({bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut)}, "cut");
      ++failures;
    } catch (const FeatureFileError&) {
    } catch (const CheckpointError&) {
    }
  }
  CHECK(failures == 0);
}

TEST_CASE("checkpoint: header errors are typed") {
  Rng rng(32);
  auto bytes = encode_checkpoint(random_checkpoint(rng));
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bad, "c"), MagicError);
  bad = bytes;
  bad[8] = 7;
  CHECK_THROWS_AS(decode_checkpoint(bad, "c"), VersionError);
  bad = bytes;
  bad[12] = 9;
  CHECK_THROWS_AS(decode_checkpoint(bad, "c"), CheckpointError);
  bad = bytes;
  bad.push_back(0);
  CHECK_THROWS_AS(decode_checkpoint(bad, "c"), CheckpointError);
}

TEST_CASE("checkpoint: trained stages reload to bitwise-identical outputs") {
  const auto cfg = tiny_config();
  const auto data = make_dataset(tiny_spec());
  const auto s = train_all(cfg, data);
  const auto dir = temp_dir("ckpt_roundtrip");
  for (const auto* c : {&s.tokenizer, &s.ar, &s.nar, &s.flow}) {
    const auto path = dir / (std::string(stage_name(c->stage)) + ".ckpt");
    save_checkpoint(path, *c);
    const auto back = load_checkpoint(path);
    CHECK(back == *c);
    CHECK(encode_checkpoint(back) == detail::read_file(path));
    CHECK(to_json(checkpoint_config(back)) == to_json(cfg));
  }

  const auto tok_a = load_tokenizer_model(s.tokenizer);
  const auto tok_b = load_tokenizer_model(decode_checkpoint(encode_checkpoint(s.tokenizer), "t"));
  const auto& b0 = data.entries[0].bundle;
  CHECK(tok_a.tokenizer.encode_speech(b0).tokens == tok_b.tokenizer.encode_speech(b0).tokens);
  CHECK(tok_a.tokenizer.encode_speech(b0).condition == tok_b.tokenizer.encode_speech(b0).condition);
  CHECK(encode_checkpoint(tokenizer_checkpoint(tok_b, s.tokenizer.step, s.tokenizer.rng, s.tokenizer.metadata)) ==
        encode_checkpoint(s.tokenizer));

  const auto enc = encode_dataset(tok_a.tokenizer, data);
  const auto ar_a = load_ar(s.ar), ar_b = load_ar(decode_checkpoint(encode_checkpoint(s.ar), "a"));
  const auto ref = reference_tokens(enc, 0, cfg.options.ref_max_frames);
  const auto tgt = ar_a.input_layers(enc.utterances[0].tokens);
  const auto la = ar_a.forward(b0.symbols, ar_a.input_layers(ref), tgt);
  const auto lb = ar_b.forward(b0.symbols, ar_b.input_layers(ref), tgt);
  CHECK(la.semantic[0].values() == lb.semantic[0].values());
  CHECK(la.acoustic[0].values() == lb.acoustic[0].values());
  CHECK(la.stop.values() == lb.stop.values());

  const auto nar_a = load_nar(s.nar), nar_b = load_nar(decode_checkpoint(encode_checkpoint(s.nar), "n"));
  CHECK(nar_a.stage2().logits(leading_layers(enc.utterances[0].tokens, 2), ref).values() ==
        nar_b.stage2().logits(leading_layers(enc.utterances[0].tokens, 2), ref).values());

  const auto flow_a = load_flow(s.flow), flow_b = load_flow(decode_checkpoint(encode_checkpoint(s.flow), "f"));
  const auto feats = to_tensor<float>(tok_a.tokenizer.decode_features(enc.utterances[0].tokens));
  const auto cond = condition_tensor(enc.utterances[0].condition);
  CHECK(sample_mel(flow_a, feats, cond, feats.rows(), {4, 3}) == sample_mel(flow_b, feats, cond, feats.rows(), {4, 3}));
}

TEST_CASE("train: later stages leave the tokenizer checkpoint untouched") {
  const auto cfg = tiny_config();
  const auto data = make_dataset(tiny_spec());
  const auto dir = temp_dir("freeze");
  save_checkpoint(dir / "tokenizer.ckpt", train_tokenizer(cfg, data).checkpoint);
  const auto before = detail::read_file(dir / "tokenizer.ckpt");
  const auto tok = load_checkpoint(dir / "tokenizer.ckpt");
  (void)train_ar(cfg, data, tok);
  (void)train_nar(cfg, data, tok);
  (void)train_flow(cfg, data, tok);
  CHECK(detail::read_file(dir / "tokenizer.ckpt") == before);
  CHECK(encode_checkpoint(tok) == before);
}

TEST_CASE("train: equal seeds give identical losses and checkpoints") {
  const auto cfg = tiny_config();
  const auto data = make_dataset(tiny_spec());
  const auto t1 = train_tokenizer(cfg, data), t2 = train_tokenizer(cfg, data);
  CHECK(t1.report.final_loss == t2.report.final_loss);
  CHECK(encode_checkpoint(t1.checkpoint) == encode_checkpoint(t2.checkpoint));
  const auto a1 = train_ar(cfg, data, t1.checkpoint), a2 = train_ar(cfg, data, t1.checkpoint);
  CHECK(a1.report.final_loss == a2.report.final_loss);
  CHECK(encode_checkpoint(a1.checkpoint) == encode_checkpoint(a2.checkpoint));
  auto other = cfg;
  other.ar_schedule.seed = 99;
  CHECK(train_ar(other, data, t1.checkpoint).report.final_loss != a1.report.final_loss);
}

TEST_CASE("train: losses decrease and reports are complete") {
  auto cfg = tiny_config();
  cfg.ar_schedule.total_steps = 200;
  cfg.options.log_every = 20;
  const auto data = make_dataset(tiny_spec());
  const auto tok = train_tokenizer(cfg, data);
  const auto ar = train_ar(cfg, data, tok.checkpoint);
  REQUIRE(ar.report.curve.size() == 10);
  CHECK(ar.report.curve.back().loss < 0.5 * ar.report.curve.front().loss);
  CHECK(ar.report.metrics.contains("semantic_accuracy"));
  const auto j = to_json(ar.report);
  CHECK(j.at("steps") == 200);
  CHECK(j.at("curve").size() == 10);
}

TEST_CASE("train: prerequisites and non-finite losses are reported") {
  auto cfg = tiny_config();
  const auto data = make_dataset(tiny_spec());
  const auto tok = train_tokenizer(cfg, data).checkpoint;
  const auto ar = train_ar(cfg, data, tok).checkpoint;
  CHECK_THROWS_AS(train_ar(cfg, data, ar), CheckpointError);

  auto other = cfg;
  other.flow.hidden_dim = 32;
  CHECK(contains(error_of([&] { train_flow(other, data, tok); }), "flow.hidden_dim"));

  auto wild = cfg;
  wild.ar_schedule.base_lr = wild.ar_schedule.peak_lr = wild.ar_schedule.final_lr = 1e30;
  wild.ar_schedule.total_steps = 50;
  CHECK(contains(error_of([&] { train_ar(wild, data, tok); }), "non-finite loss"));
  CHECK_THROWS_AS(train_ar(wild, data, tok), NonFiniteLossError);
}

TEST_CASE("infer: outputs are valid, deterministic and seed dependent") {
  const auto cfg = tiny_config();
  const auto data = make_dataset(tiny_spec());
  const auto s = train_all(cfg, data);
  const auto p = build_pipeline(s.tokenizer, s.ar, s.nar, s.flow);
  InferOptions o;
  o.seed = 4;
  o.top_k = 3;
  o.solver_steps = 4;
  const auto& text = data.entries[1].text;
  const auto r1 = infer_text(p, text, data.entries[0].bundle, o);
  const auto r2 = infer_text(p, text, data.entries[0].bundle, o);
  r1.tokens.validate();
  CHECK(r1.tokens.semantic.layers == 3);
  CHECK(r1.tokens.semantic.frames == r1.tokens.acoustic.frames);
  CHECK(r1.mel.rows == r1.tokens.frames());
  CHECK(r1.mel.cols == cfg.flow.mel_dim);
  for (int id : r1.tokens.semantic.ids) CHECK((id >= 0 && id < 8));
  for (int id : r1.tokens.acoustic.ids) CHECK((id >= 0 && id < 8));
  CHECK(r1.mel == r2.mel);
  CHECK(r1.tokens == r2.tokens);
  CHECK(r1.truncated == !r1.terminated);

  const auto dir = temp_dir("infer");
  write_inference(dir / "out.feat", r1);
  CHECK(check_inference_file(dir / "out.feat", p.config) == r1.mel);
  CHECK_THROWS_AS(infer_text(p, "text with symbols outside the alphabet!", data.entries[0].bundle, o), UnknownSymbolError);
}

TEST_CASE("infer: incompatible checkpoints name the mismatched fields") {
  const auto cfg = tiny_config();
  const auto data = make_dataset(tiny_spec());
  const auto s = train_all(cfg, data);
  auto other = cfg;
  other.flow.hidden_layers = 2;
  other.tokenizer.commitment = 0.5;
  const auto foreign_tok = train_tokenizer(other, data).checkpoint;
  const auto foreign_flow = train_flow(other, data, foreign_tok).checkpoint;
  const auto msg = error_of([&] { build_pipeline(s.tokenizer, s.ar, s.nar, foreign_flow); });
  CHECK(contains(msg, "flow:flow.hidden_layers"));
  CHECK(contains(msg, "flow:tokenizer.commitment"));
  CHECK_THROWS_AS(build_pipeline(s.tokenizer, s.ar, s.nar, foreign_flow), CompatibilityError);
  CHECK_THROWS_AS(build_pipeline(s.ar, s.ar, s.nar, s.flow), CheckpointError);
}

TEST_CASE("ablations: merged-vocabulary and only-AR configurations train and infer") {
  const auto data = make_dataset(tiny_spec());
  for (int variant = 0; variant < 2; ++variant) {
    auto cfg = tiny_config();
    if (variant == 0) cfg.ar.parallel = false;
    else cfg.ar.only_ar = true;
    const auto s = train_all(cfg, data);
    CHECK(s.nar.metadata.at("skipped") == (variant == 1));
    CHECK(s.nar.blobs.empty() == (variant == 1));
    const auto p = build_pipeline(s.tokenizer, s.ar, s.nar, s.flow);
    CHECK(p.nar.has_value() == (variant == 0));
    InferOptions o;
    o.top_k = 2;
    o.solver_steps = 2;
    const auto r = infer(p, data.entries[0].bundle.symbols, data.entries[1].bundle, o);
    r.tokens.validate();
    CHECK(r.tokens.semantic.layers == 3);
    const auto report = evaluate(p, data, {2, 0});
    CHECK(report.ar_semantic_accuracy.size() == (variant == 1 ? 3u : 1u));
    CHECK(report.nar_evaluated == (variant == 0));
  }
}

TEST_CASE("eval: report bounds and JSON round trip") {
  const auto cfg = tiny_config();
  const auto data = make_dataset(tiny_spec());
  const auto s = train_all(cfg, data);
  const auto p = build_pipeline(s.tokenizer, s.ar, s.nar, s.flow);
  const auto r = evaluate(p, data, {2, 1});
  CHECK(r.utterances == 4);
  CHECK(r.codebooks.size() == 6);
  for (const auto& c : r.codebooks) {
    CHECK(c.utilization >= 0.0);
    CHECK(c.utilization <= 1.0);
    CHECK(c.perplexity >= 1.0);
  }
  for (double a : r.ar_semantic_accuracy) CHECK((a >= 0.0 && a <= 1.0));
  CHECK(r.inference_compared + r.inference_length_mismatch == 2);
  CHECK(eval_report_from_json(to_json(r)) == r);
  CHECK(eval_report_from_json(Json::parse(to_json(r).dump())) == r);
  CHECK(!format_report(r).empty());
}

TEST_CASE("dataset directory round trip and reference choice") {
  const auto spec = tiny_spec();
  const auto corpus = generate_synthetic_corpus(spec);
  const auto dir = temp_dir("dataset");
  write_dataset(dir, corpus);
  const auto d = load_dataset(dir);
  REQUIRE(d.size() == corpus.utterances.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    CHECK(d.entries[i].bundle == corpus.utterances[i].bundle);
    CHECK(d.entries[i].text == corpus.utterances[i].text);
    const auto r = reference_index(d, i);
    CHECK(r != i);
    CHECK(d.entries[r].speaker_id == d.entries[i].speaker_id);
  }
  CHECK(to_json(d.spec) == to_json(spec));
  CHECK_THROWS_AS(load_dataset(dir / "missing"), DatasetError);
}
