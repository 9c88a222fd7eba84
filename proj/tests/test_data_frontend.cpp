// Copyright 2026 The Parallel GPT Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "pgpt/data/features.hpp"
#include "pgpt/data/probe.hpp"
#include "pgpt/data/synthetic.hpp"
#include "pgpt/data/vocabulary.hpp"

using namespace pgpt;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) {
  auto dir = fs::temp_directory_path() / "pgpt_test_data_frontend";
  fs::create_directories(dir);
  return dir / name;
}

FeatureBundle random_bundle(Rng& rng) {
  const std::size_t t = 1 + rng.uniform_int(20);
  auto mat = [&](std::size_t r, std::size_t c) {
    Matrix m(r, c);
    for (auto& v : m.data) v = static_cast<float>(rng.normal() * 3.0);
    return m;
  };
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

std::vector<char> corrupt(std::vector<char> bytes, std::size_t offset, char value) {
  bytes[offset] = value;
  return bytes;
}

}  // namespace

TEST_CASE("text_to_symbols reserves PAD/BOS/EOS") {
  const Vocabulary v({"a"});
  CHECK(text_to_symbols("", v) == std::vector<int>{kBosId, kEosId});
  CHECK(text_to_symbols("aa", v) == std::vector<int>{1, 3, 3, 2});
  try {
    (void)text_to_symbols("abz", v);
    FAIL("expected UnknownSymbolError");
  } catch (const UnknownSymbolError& e) {
    CHECK(e.symbol() == "b");
    CHECK(std::string(e.what()).find("'b'") != std::string::npos);
  }
}

TEST_CASE("symbols round-trip through text for in-vocabulary input") {
  const auto v = Vocabulary::synthetic(32);
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<int> ids{kBosId};
    for (std::size_t i = 0; i < rng.uniform_int(15); ++i) {
      ids.push_back(kFirstSymbolId + static_cast<int>(rng.uniform_int(v.size() - kFirstSymbolId)));
    }
    ids.push_back(kEosId);
    CHECK(text_to_symbols(symbols_to_text(ids, v), v) == ids);
  }
  const Vocabulary multi({"ab", "a", "b"});
  CHECK(multi.encode("aba") == std::vector<int>{1, 3, 4, 2});
}

TEST_CASE("synthetic corpus: a single repeated symbol gives identical semantic frames") {
  SyntheticSpec spec;
  spec.vocab_size = 4;
  spec.n_utterances = 3;
  spec.noise_scale = 0.0;
  const auto corpus = generate_synthetic_corpus(spec);
  for (const auto& u : corpus.utterances) {
    for (std::size_t t = 1; t < u.bundle.frames(); ++t) {
      CHECK(std::equal(u.bundle.semantic.row(t).begin(), u.bundle.semantic.row(t).end(),
                       u.bundle.semantic.row(0).begin()));
    }
  }
}

TEST_CASE("synthetic corpus: speaker_global is a function of the speaker only") {
  SyntheticSpec spec;
  spec.noise_scale = 0.2;
  const auto corpus = generate_synthetic_corpus(spec);
  const auto& a = corpus.utterances[0];
  const auto& b = corpus.utterances[spec.n_speakers];  // same speaker, next text
  REQUIRE(a.speaker_id == b.speaker_id);
  REQUIRE(a.text_id != b.text_id);
  CHECK(a.bundle.speaker_global == b.bundle.speaker_global);
  CHECK(a.bundle.speaker_global != corpus.utterances[1].bundle.speaker_global);
  for (const auto& u : corpus.utterances) {
    CHECK_NOTHROW(validate(u.bundle));
    CHECK(u.bundle.frames() <= 128);
    CHECK(text_to_symbols(u.text, corpus.vocabulary) == u.bundle.symbols);
  }
}

TEST_CASE("synthetic corpus is byte-identical for equal seeds") {
  SyntheticSpec spec;
  spec.noise_scale = 0.1;
  const auto a = generate_synthetic_corpus(spec);
  const auto b = generate_synthetic_corpus(spec);
  spec.seed = 2;
  const auto c = generate_synthetic_corpus(spec);
  REQUIRE(a.utterances.size() == b.utterances.size());
  for (std::size_t i = 0; i < a.utterances.size(); ++i) {
    CHECK(encode_feature_arrays(bundle_arrays(a.utterances[i].bundle)) ==
          encode_feature_arrays(bundle_arrays(b.utterances[i].bundle)));
  }
  CHECK_FALSE(a.utterances[0].bundle == c.utterances[0].bundle);
}

TEST_CASE("synthetic spec validation") {
  SyntheticSpec spec;
  spec.noise_scale = -1.0;
  CHECK_THROWS_AS(generate_synthetic_corpus(spec), std::invalid_argument);
  spec = {};
  spec.n_speakers = 0;
  CHECK_THROWS_AS(generate_synthetic_corpus(spec), std::invalid_argument);
}

TEST_CASE("feature files round-trip bit-exactly (property)") {
  Rng rng(11);
  const auto path = temp_path("fuzz.feat");
  for (int trial = 0; trial < 200; ++trial) {
    const auto b = random_bundle(rng);
    save_features(path, b);
    const auto back = load_features(path);
    CHECK(back == b);
    CHECK(encode_feature_arrays(bundle_arrays(back)) == detail::read_file(path));
  }
}

TEST_CASE("feature file decode errors are distinct") {
  Rng rng(12);
  const auto b = random_bundle(rng);
  const auto bytes = encode_feature_arrays(bundle_arrays(b));

  CHECK_THROWS_AS(decode_feature_arrays(corrupt(bytes, 0, 'X'), "f"), MagicError);
  CHECK_THROWS_AS(decode_feature_arrays(corrupt(bytes, 8, 2), "f"), VersionError);
  CHECK_THROWS_AS(decode_feature_arrays({bytes.begin(), bytes.end() - 3}, "f"), TruncatedError);
  CHECK_THROWS_AS(decode_feature_arrays({bytes.begin(), bytes.begin() + 4}, "f"), MagicError);

  auto arrays = bundle_arrays(b);
  arrays[4] = matrix_array("mel", Matrix(b.frames() + 1, 2));
  try {
    (void)bundle_from_arrays(arrays);
    FAIL("expected InvariantError");
  } catch (const InvariantError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("semantic") != std::string::npos);
    CHECK(msg.find("mel") != std::string::npos);
  }
  arrays = bundle_arrays(b);
  arrays.erase(arrays.begin() + 1);
  CHECK_THROWS_AS(bundle_from_arrays(arrays), InvariantError);
  CHECK_THROWS_AS(load_features(temp_path("does_not_exist.feat")), FeatureFileError);
}

TEST_CASE("feature file layout matches the documented header") {
  FeatureBundle b;
  b.semantic = Matrix(1, 1, 1.0f);
  b.acoustic = Matrix(1, 1, 2.0f);
  b.speaker_frames = Matrix(1, 1, 3.0f);
  b.speaker_global = {4.0f};
  b.mel = Matrix(1, 1, 5.0f);
  b.symbols = {1, 2};
  const auto bytes = encode_feature_arrays(bundle_arrays(b));
  CHECK(std::string(bytes.begin(), bytes.begin() + 8) == "PGPTFEAT");
  CHECK(bytes[8] == 1);   // version, little-endian
  CHECK(bytes[12] == 6);  // array count
  CHECK(bytes[16] == 8);  // u16 name length of "semantic"
  CHECK(std::string(bytes.begin() + 18, bytes.begin() + 26) == "semantic");
  CHECK(bytes[26] == 0);  // dtype f32
  CHECK(bytes[27] == 2);  // rank
}

TEST_CASE("frontend factors are decoupled under a linear probe") {
  SyntheticSpec spec;
  spec.noise_scale = 0.5;
  const auto corpus = generate_synthetic_corpus(spec);
  std::vector<const Matrix*> sem;
  Matrix global(0, spec.speaker_global_dim);
  std::vector<int> symbol_labels, speaker_labels;
  for (std::size_t i = 0; i < corpus.utterances.size(); ++i) {
    const auto& u = corpus.utterances[i];
    sem.push_back(&u.bundle.semantic);
    for (std::size_t t = 0; t < u.bundle.frames(); ++t) {
      symbol_labels.push_back(corpus.latents.frame_symbols[i][t]);
      speaker_labels.push_back(static_cast<int>(u.speaker_id));
      global.data.insert(global.data.end(), u.bundle.speaker_global.begin(), u.bundle.speaker_global.end());
      ++global.rows;
    }
  }
  const Matrix semantic = stack_rows(sem);

  const auto sem_symbol = linear_probe(semantic, symbol_labels, spec.vocab_size);
  const auto sem_speaker = linear_probe(semantic, speaker_labels, spec.n_speakers);
  const auto glob_speaker = linear_probe(global, speaker_labels, spec.n_speakers);
  const auto glob_symbol = linear_probe(global, symbol_labels, spec.vocab_size);
  INFO("semantic->symbol " << sem_symbol.test_accuracy << " semantic->speaker " << sem_speaker.test_accuracy
                           << " (chance " << sem_speaker.chance << ") global->speaker " << glob_speaker.test_accuracy
                           << " global->symbol " << glob_symbol.test_accuracy << " (chance " << glob_symbol.chance
                           << ")");
  CHECK(sem_symbol.test_accuracy >= 0.9);
  CHECK(sem_speaker.test_accuracy <= sem_speaker.chance + 0.1);
  CHECK(glob_speaker.test_accuracy >= 0.9);
  CHECK(glob_symbol.test_accuracy <= glob_symbol.chance + 0.1);
}
