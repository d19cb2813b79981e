#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "kaer/table.hpp"

namespace kaer {

using TokenId = std::int32_t;

namespace special {
inline constexpr TokenId kCls = 0;
inline constexpr TokenId kSep = 1;
inline constexpr TokenId kCol = 2;
inline constexpr TokenId kVal = 3;
inline constexpr TokenId kUnk = 4;
inline constexpr TokenId kPad = 5;
inline constexpr TokenId kCount = 6;
}  // namespace special

/// Splits text into lowercase word tokens. Leading and trailing punctuation
/// of each whitespace-separated chunk becomes one token per character, and
/// interior slashes are split out so "/" never fuses with a word.
std::vector<std::string> tokenize(std::string_view text);

/// Joins tokens with single spaces; the inverse of tokenize up to spacing.
std::string detokenize(std::span<const std::string> tokens);

/// Labels every knowledge source can emit (rule typer, Ditto baseline) plus
/// the slash joiner. build_vocab always includes their tokens.
const std::vector<std::string>& builtin_knowledge_labels();

class Tokenizer {
 public:
  /// Specials occupy ids 0..5; `tokens` follow in id order.
  explicit Tokenizer(std::vector<std::string> tokens = {});

  TokenId id(std::string_view token) const;
  const std::string& text(TokenId id) const;
  std::size_t size() const { return texts_.size(); }
  bool contains(std::string_view token) const { return ids_.contains(std::string(token)); }

  std::vector<TokenId> encode(std::string_view text) const;
  std::vector<TokenId> encode_tokens(std::span<const std::string> tokens) const;
  std::string decode(std::span<const TokenId> ids) const;

  /// `token<TAB>id` lines, specials included, ordered by id.
  std::string to_tsv() const;
  static Tokenizer from_tsv(std::string_view text);

  bool operator==(const Tokenizer& other) const { return texts_ == other.texts_; }

 private:
  std::vector<std::string> texts_;
  std::unordered_map<std::string, TokenId> ids_;
};

/// Vocabulary over column names and cell values of `corpus`, keeping tokens
/// seen at least `min_count` times, ordered by frequency (descending) then
/// lexicographically. Tokens of builtin and `extra_labels` are always kept.
Tokenizer build_vocab(std::span<const Table> corpus, std::size_t min_count,
                      std::span<const std::string> extra_labels = {});

}  // namespace kaer
