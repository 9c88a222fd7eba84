// Copyright 2026 The Parallel GPT Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pgpt/data/features.hpp"
#include "pgpt/data/synthetic.hpp"
#include "pgpt/data/vocabulary.hpp"
#include "pgpt/pipeline/config.hpp"

namespace pgpt {

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DatasetEntry {
  std::string file;
  std::string text;
  std::size_t speaker_id = 0;
  std::size_t text_id = 0;
  FeatureBundle bundle;
};

/// A corpus directory: utt_NNNN.feat files plus manifest.json.
struct Dataset {
  SyntheticSpec spec;
  Vocabulary vocabulary;
  std::vector<DatasetEntry> entries;

  std::size_t size() const { return entries.size(); }
};

inline Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw std::runtime_error(path.string() + ": malformed JSON: " + e.what());
  }
}

inline void write_json_file(const std::filesystem::path& path, const Json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << "\n";
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

inline void write_dataset(const std::filesystem::path& dir, const SyntheticCorpus& corpus) {
  std::filesystem::create_directories(dir);
  Json utts = Json::array();
  for (std::size_t i = 0; i < corpus.utterances.size(); ++i) {
    const auto& u = corpus.utterances[i];
    char name[32];
    std::snprintf(name, sizeof(name), "utt_%04zu.feat", i);
    save_features(dir / name, u.bundle);
    utts.push_back({{"file", name}, {"text", u.text}, {"speaker_id", u.speaker_id}, {"text_id", u.text_id},
                    {"frames", u.bundle.frames()}});
  }
  Json manifest = {{"format", "pgpt-corpus"}, {"version", 1}, {"spec", to_json(corpus.spec)},
                   {"vocabulary", corpus.vocabulary.tokens()}, {"utterances", utts}};
  write_json_file(dir / "manifest.json", manifest);
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  if (!std::filesystem::exists(manifest_path)) throw DatasetError("no manifest.json in data directory " + dir.string());
  const Json m = read_json_file(manifest_path);
  Dataset d;
  try {
    d.spec = spec_from_json(m.at("spec"));
    d.vocabulary = Vocabulary(m.at("vocabulary").get<std::vector<std::string>>());
    for (const auto& u : m.at("utterances")) {
      DatasetEntry e;
      e.file = u.at("file").get<std::string>();
      e.text = u.at("text").get<std::string>();
      e.speaker_id = u.at("speaker_id").get<std::size_t>();
      e.text_id = u.at("text_id").get<std::size_t>();
      e.bundle = load_features(dir / e.file);
      if (e.bundle.frames() != u.at("frames").get<std::size_t>()) {
        throw DatasetError(e.file + ": frame count disagrees with manifest");
      }
      d.entries.push_back(std::move(e));
    }
  } catch (const Json::exception& e) {
    throw DatasetError(manifest_path.string() + ": " + e.what());
  }
  if (d.entries.empty()) throw DatasetError("data directory " + dir.string() + " holds no utterances");
  if (d.vocabulary.size() != d.spec.vocab_size) throw DatasetError("manifest vocabulary size disagrees with spec");
  return d;
}

/// Reference utterance for entry i: the next entry (cyclically) by the same
/// speaker, or i itself when the speaker has a single utterance.
inline std::size_t reference_index(const Dataset& d, std::size_t i) {
  const std::size_t n = d.entries.size();
  for (std::size_t k = 1; k < n; ++k) {
    const std::size_t j = (i + k) % n;
    if (d.entries[j].speaker_id == d.entries[i].speaker_id) return j;
  }
  return i;
}

}  // namespace pgpt
