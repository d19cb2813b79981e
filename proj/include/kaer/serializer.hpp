#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "kaer/knowledge.hpp"
#include "kaer/table.hpp"
#include "kaer/tokenizer.hpp"

namespace kaer {

enum class PromptMode { Space, Slash, ConstrainedTuning };

PromptMode parse_prompt_mode(std::string_view text);
std::string_view prompt_mode_name(PromptMode mode);
inline bool is_template(PromptMode mode) { return mode != PromptMode::ConstrainedTuning; }

/// Half-open token range.
struct TokenSpan {
  std::size_t start = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - start; }
  bool contains(std::size_t i) const { return i >= start && i < end; }
  bool operator==(const TokenSpan&) const = default;
};

enum class SiteKind { Column, Entity };

/// Knowledge to attach to `head` under constrained tuning.
struct InjectionSite {
  TokenSpan head;
  std::vector<TokenId> knowledge;
  SiteKind kind = SiteKind::Entity;

  bool operator==(const InjectionSite&) const = default;
};

/// What each serialized token is. Only value-section tokens are truncatable.
enum class TokenRole : std::uint8_t { Marker, Name, NameKnowledge, Value, ValueKnowledge };

inline bool is_knowledge(TokenRole r) {
  return r == TokenRole::NameKnowledge || r == TokenRole::ValueKnowledge;
}

/// serialize(e): [COL] name [VAL] value ... for every column.
struct TokenSeq {
  std::vector<TokenId> tokens;
  std::vector<TokenRole> roles;
  std::vector<InjectionSite> sites;

  std::size_t knowledge_size() const;
  bool operator==(const TokenSeq&) const = default;
};

/// s(e1, e2) = [CLS] serialize(e1) [SEP] serialize(e2) [SEP].
struct InputSequence {
  PromptMode mode = PromptMode::Space;
  TokenSeq left;
  TokenSeq right;
  std::vector<TokenId> combined;
  std::vector<std::int32_t> segments;
  std::optional<int> label;

  /// Sites re-based onto `combined` positions, left side first.
  std::vector<InjectionSite> combined_sites() const;
  bool operator==(const InputSequence&) const = default;
};

/// Serializes one record of `table`. Template modes splice type labels after
/// their head (with "/" in Slash mode); ConstrainedTuning leaves the trunk
/// unaugmented and records injection sites instead.
TokenSeq serialize_entry(const Record& record, std::string_view table, const AnnotationStore& store,
                         PromptMode mode, const Tokenizer& tokenizer);

/// Serializes a pair and truncates to `max_len`: value tokens are removed
/// from the tail of the longer side (knowledge counted) until it fits.
InputSequence serialize_pair(const Record& left, std::string_view left_table, const Record& right,
                             std::string_view right_table, const AnnotationStore& store,
                             PromptMode mode, const Tokenizer& tokenizer, std::size_t max_len,
                             std::optional<int> label = std::nullopt);

/// Removes the value token at `pos`, re-basing and dropping sites as needed.
void erase_token(TokenSeq& seq, std::size_t pos);

}  // namespace kaer
