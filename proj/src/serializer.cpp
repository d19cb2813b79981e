#include "kaer/serializer.hpp"

#include <algorithm>

#include "kaer/errors.hpp"

namespace kaer {

PromptMode parse_prompt_mode(std::string_view text) {
  std::string lower(text);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](char ch) { return static_cast<char>(std::tolower(static_cast<unsigned char>(ch))); });
  if (lower == "space") return PromptMode::Space;
  if (lower == "slash") return PromptMode::Slash;
  if (lower == "constrained" || lower == "constrainedtuning" || lower == "constrained_tuning" ||
      lower == "pct") {
    return PromptMode::ConstrainedTuning;
  }
  throw DomainError("unknown prompt mode '" + std::string(text) + "'");
}

std::string_view prompt_mode_name(PromptMode mode) {
  switch (mode) {
    case PromptMode::Space:
      return "space";
    case PromptMode::Slash:
      return "slash";
    case PromptMode::ConstrainedTuning:
      return "constrained";
  }
  return "space";
}

std::size_t TokenSeq::knowledge_size() const {
  std::size_t n = 0;
  for (const auto& s : sites) n += s.knowledge.size();
  return n;
}

std::vector<InjectionSite> InputSequence::combined_sites() const {
  std::vector<InjectionSite> out;
  out.reserve(left.sites.size() + right.sites.size());
  auto shifted = [&](const std::vector<InjectionSite>& sites, std::size_t offset) {
    for (auto site : sites) {
      site.head.start += offset;
      site.head.end += offset;
      out.push_back(std::move(site));
    }
  };
  shifted(left.sites, 1);
  shifted(right.sites, left.tokens.size() + 2);
  return out;
}

namespace {

void push(TokenSeq& seq, TokenId id, TokenRole role) {
  seq.tokens.push_back(id);
  seq.roles.push_back(role);
}

void inject_inline(TokenSeq& seq, PromptMode mode, const std::vector<TokenId>& label, TokenRole role,
                   TokenId slash) {
  if (mode == PromptMode::Slash) push(seq, slash, role);
  for (TokenId id : label) push(seq, id, role);
}

}  // namespace

TokenSeq serialize_entry(const Record& record, std::string_view table, const AnnotationStore& store,
                         PromptMode mode, const Tokenizer& tokenizer) {
  TokenSeq seq;
  const TokenId slash = tokenizer.id("/");
  for (const auto& cell : record.columns) {
    push(seq, special::kCol, TokenRole::Marker);
    const std::size_t name_start = seq.tokens.size();
    for (TokenId id : tokenizer.encode(cell.col)) push(seq, id, TokenRole::Name);
    const std::size_t name_end = seq.tokens.size();

    if (const auto* ct = store.column_type(table, cell.col)) {
      auto label = tokenizer.encode(ct->predicted_type);
      if (is_template(mode)) {
        inject_inline(seq, mode, label, TokenRole::NameKnowledge, slash);
      } else if (name_end > name_start) {
        seq.sites.push_back({{name_start, name_end}, std::move(label), SiteKind::Column});
      }
    }

    push(seq, special::kVal, TokenRole::Marker);
    const auto words = tokenize(cell.val);
    const auto mentions = store.mentions(table, record.entry_id, cell.col);
    for (const auto* m : mentions) {
      if (m->end > words.size()) {
        throw AnnotationMismatchError("mention [" + std::to_string(m->start) + ", " +
                                      std::to_string(m->end) + ") exceeds the " +
                                      std::to_string(words.size()) + " tokens of " +
                                      std::string(table) + "/" + record.entry_id + "/" + cell.col);
      }
      const auto span = std::span<const std::string>(words).subspan(m->start, m->end - m->start);
      if (detokenize(tokenize(m->surface)) != detokenize(span)) {
        throw AnnotationMismatchError("mention surface '" + m->surface + "' does not match '" +
                                      detokenize(span) + "' in " + std::string(table) + "/" +
                                      record.entry_id + "/" + cell.col);
      }
    }

    const std::size_t value_start = seq.tokens.size();
    auto next = mentions.begin();
    for (std::size_t w = 0; w < words.size(); ++w) {
      push(seq, tokenizer.id(words[w]), TokenRole::Value);
      if (next != mentions.end() && (*next)->end == w + 1) {
        auto label = tokenizer.encode((*next)->entity_type);
        if (is_template(mode)) {
          inject_inline(seq, mode, label, TokenRole::ValueKnowledge, slash);
        } else {
          seq.sites.push_back({{value_start + (*next)->start, value_start + (*next)->end},
                               std::move(label),
                               SiteKind::Entity});
        }
        ++next;
      }
    }
  }
  return seq;
}

void erase_token(TokenSeq& seq, std::size_t pos) {
  seq.tokens.erase(seq.tokens.begin() + static_cast<std::ptrdiff_t>(pos));
  seq.roles.erase(seq.roles.begin() + static_cast<std::ptrdiff_t>(pos));
  std::vector<InjectionSite> kept;
  kept.reserve(seq.sites.size());
  for (auto& site : seq.sites) {
    if (site.head.contains(pos)) continue;
    if (site.head.start > pos) {
      --site.head.start;
      --site.head.end;
    }
    kept.push_back(std::move(site));
  }
  seq.sites = std::move(kept);
}

InputSequence serialize_pair(const Record& left, std::string_view left_table, const Record& right,
                             std::string_view right_table, const AnnotationStore& store,
                             PromptMode mode, const Tokenizer& tokenizer, std::size_t max_len,
                             std::optional<int> label) {
  if (max_len < 8) throw DomainError("max_len must be at least 8");
  InputSequence seq;
  seq.mode = mode;
  seq.label = label;
  seq.left = serialize_entry(left, left_table, store, mode, tokenizer);
  seq.right = serialize_entry(right, right_table, store, mode, tokenizer);

  auto effective = [&](const TokenSeq& s) {
    return s.tokens.size() + (is_template(mode) ? 0 : s.knowledge_size());
  };
  auto last_value = [](const TokenSeq& s) -> std::optional<std::size_t> {
    for (std::size_t i = s.roles.size(); i > 0; --i) {
      const TokenRole r = s.roles[i - 1];
      if (r == TokenRole::Value || r == TokenRole::ValueKnowledge) return i - 1;
    }
    return std::nullopt;
  };

  while (3 + effective(seq.left) + effective(seq.right) > max_len) {
    TokenSeq* longer = effective(seq.left) >= effective(seq.right) ? &seq.left : &seq.right;
    TokenSeq* other = longer == &seq.left ? &seq.right : &seq.left;
    if (auto pos = last_value(*longer)) {
      erase_token(*longer, *pos);
    } else if (auto pos2 = last_value(*other)) {
      erase_token(*other, *pos2);
    } else {
      throw SequenceOverflowError("pair needs " +
                                  std::to_string(3 + effective(seq.left) + effective(seq.right)) +
                                  " tokens without any values; max_len is " + std::to_string(max_len));
    }
  }

  seq.combined.reserve(3 + seq.left.tokens.size() + seq.right.tokens.size());
  seq.combined.push_back(special::kCls);
  seq.combined.insert(seq.combined.end(), seq.left.tokens.begin(), seq.left.tokens.end());
  seq.combined.push_back(special::kSep);
  seq.segments.assign(seq.combined.size(), 0);
  seq.combined.insert(seq.combined.end(), seq.right.tokens.begin(), seq.right.tokens.end());
  seq.combined.push_back(special::kSep);
  seq.segments.resize(seq.combined.size(), 1);
  return seq;
}

}  // namespace kaer
