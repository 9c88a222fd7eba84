// Copyright 2026 The Parallel GPT Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pgpt {

inline constexpr int kPadId = 0;
inline constexpr int kBosId = 1;
inline constexpr int kEosId = 2;
inline constexpr int kFirstSymbolId = 3;

class UnknownSymbolError : public std::invalid_argument {
 public:
  UnknownSymbolError(const std::string& symbol, std::size_t offset)
      : std::invalid_argument("unknown symbol '" + symbol + "' at offset " + std::to_string(offset)),
        symbol_(symbol) {}
  const std::string& symbol() const { return symbol_; }

 private:
  std::string symbol_;
};

/// Integer text vocabulary. Ids 0..2 are PAD, BOS, EOS; token i maps to id i + 3.
/// Encoding is greedy longest-match over the token strings.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      if (tokens_[i].empty()) throw std::invalid_argument("vocabulary token " + std::to_string(i) + " is empty");
      if (!ids_.emplace(tokens_[i], static_cast<int>(i) + kFirstSymbolId).second) {
        throw std::invalid_argument("duplicate vocabulary token '" + tokens_[i] + "'");
      }
      longest_ = std::max(longest_, tokens_[i].size());
    }
  }

  /// Single-character vocabulary used by the synthetic corpus.
  static Vocabulary synthetic(std::size_t vocab_size) {
    static const std::string alphabet =
        "abcdefghijklmnopqrstuvwxyz .,ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789;:!?'-\"()[]{}<>/\\|@#$%^&*_+=~`";
    if (vocab_size < kFirstSymbolId + 1 || vocab_size - kFirstSymbolId > alphabet.size()) {
      throw std::invalid_argument("synthetic vocabulary size must be in [4, " +
                                  std::to_string(alphabet.size() + kFirstSymbolId) + "]");
    }
    std::vector<std::string> tokens;
    for (std::size_t i = 0; i + kFirstSymbolId < vocab_size; ++i) tokens.emplace_back(1, alphabet[i]);
    return Vocabulary(std::move(tokens));
  }

  /// Total id range including the reserved ids.
  std::size_t size() const { return tokens_.size() + kFirstSymbolId; }
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::vector<int> encode(const std::string& text) const {
    std::vector<int> ids{kBosId};
    std::size_t pos = 0;
    while (pos < text.size()) {
      int match = -1;
      std::size_t match_len = 0;
      for (std::size_t len = std::min(longest_, text.size() - pos); len > 0; --len) {
        auto it = ids_.find(text.substr(pos, len));
        if (it != ids_.end()) {
          match = it->second;
          match_len = len;
          break;
        }
      }
      if (match < 0) throw UnknownSymbolError(text.substr(pos, 1), pos);
      ids.push_back(match);
      pos += match_len;
    }
    ids.push_back(kEosId);
    return ids;
  }

  std::string decode(std::span<const int> ids) const {
    std::string out;
    for (int id : ids) {
      if (id < kFirstSymbolId) continue;
      const auto index = static_cast<std::size_t>(id - kFirstSymbolId);
      if (index >= tokens_.size()) throw std::out_of_range("symbol id " + std::to_string(id) + " outside vocabulary");
      out += tokens_[index];
    }
    return out;
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, int> ids_;
  std::size_t longest_ = 0;
};

inline std::vector<int> text_to_symbols(const std::string& text, const Vocabulary& vocabulary) {
  return vocabulary.encode(text);
}

inline std::string symbols_to_text(std::span<const int> symbols, const Vocabulary& vocabulary) {
  return vocabulary.decode(symbols);
}

}  // namespace pgpt
