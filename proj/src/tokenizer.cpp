#include "kaer/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <map>

#include "kaer/errors.hpp"

namespace kaer {
namespace {

constexpr std::string_view kSpecialTexts[] = {"[CLS]", "[SEP]", "[COL]", "[VAL]", "[UNK]", "[PAD]"};

bool is_space(char ch) { return std::isspace(static_cast<unsigned char>(ch)) != 0; }
bool is_punct(char ch) { return std::ispunct(static_cast<unsigned char>(ch)) != 0; }

void split_chunk(std::string_view chunk, std::vector<std::string>& out) {
  std::size_t begin = 0;
  std::size_t end = chunk.size();
  while (begin < end && is_punct(chunk[begin])) out.emplace_back(1, chunk[begin++]);
  std::size_t trail = end;
  while (trail > begin && is_punct(chunk[trail - 1])) --trail;

  std::size_t start = begin;
  for (std::size_t i = begin; i < trail; ++i) {
    if (chunk[i] == '/') {
      if (i > start) out.emplace_back(chunk.substr(start, i - start));
      out.emplace_back("/");
      start = i + 1;
    }
  }
  if (trail > start) out.emplace_back(chunk.substr(start, trail - start));
  for (std::size_t i = trail; i < end; ++i) out.emplace_back(1, chunk[i]);
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::string lowered(text);
  std::transform(lowered.begin(), lowered.end(), lowered.begin(), [](char ch) {
    return static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  });
  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < lowered.size()) {
    while (i < lowered.size() && is_space(lowered[i])) ++i;
    std::size_t j = i;
    while (j < lowered.size() && !is_space(lowered[j])) ++j;
    if (j > i) split_chunk(std::string_view(lowered).substr(i, j - i), tokens);
    i = j;
  }
  return tokens;
}

std::string detokenize(std::span<const std::string> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

const std::vector<std::string>& builtin_knowledge_labels() {
  static const std::vector<std::string> labels = {
      "/",      "year",   "price",    "date",  "quantity", "name",     "text",
      "PERSON", "ORG",    "LOC",      "PRODUCT", "DATE",   "QUANTITY", "TIME",
      "NORP",   "GPE"};
  return labels;
}

Tokenizer::Tokenizer(std::vector<std::string> tokens) {
  texts_.reserve(tokens.size() + special::kCount);
  for (auto s : kSpecialTexts) texts_.emplace_back(s);
  for (auto& t : tokens) texts_.push_back(std::move(t));
  for (std::size_t i = 0; i < texts_.size(); ++i) {
    if (!ids_.emplace(texts_[i], static_cast<TokenId>(i)).second) {
      throw FormatError("vocabulary: duplicate token '" + texts_[i] + "'");
    }
  }
}

TokenId Tokenizer::id(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? special::kUnk : it->second;
}

const std::string& Tokenizer::text(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= texts_.size()) {
    throw DomainError("token id " + std::to_string(id) + " out of vocabulary range");
  }
  return texts_[static_cast<std::size_t>(id)];
}

std::vector<TokenId> Tokenizer::encode(std::string_view text) const {
  const auto tokens = tokenize(text);
  return encode_tokens(tokens);
}

std::vector<TokenId> Tokenizer::encode_tokens(std::span<const std::string> tokens) const {
  std::vector<TokenId> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

std::string Tokenizer::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i > 0) out.push_back(' ');
    out += text(ids[i]);
  }
  return out;
}

std::string Tokenizer::to_tsv() const {
  std::string out;
  for (std::size_t i = 0; i < texts_.size(); ++i) {
    out += texts_[i];
    out.push_back('\t');
    out += std::to_string(i);
    out.push_back('\n');
  }
  return out;
}

Tokenizer Tokenizer::from_tsv(std::string_view text) {
  std::vector<std::string> tokens;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view line = text.substr(pos, eol - pos);
    pos = eol + 1;
    const std::size_t tab = line.find('\t');
    if (tab == std::string_view::npos) {
      throw FormatError("vocabulary line " + std::to_string(line_no + 1) + ": missing tab");
    }
    const std::string expected = std::to_string(line_no);
    if (line.substr(tab + 1) != expected) {
      throw FormatError("vocabulary line " + std::to_string(line_no + 1) + ": ids must be dense");
    }
    std::string token(line.substr(0, tab));
    if (line_no < special::kCount) {
      if (token != kSpecialTexts[line_no]) {
        throw FormatError("vocabulary: special token " + expected + " must be " +
                          std::string(kSpecialTexts[line_no]));
      }
    } else {
      tokens.push_back(std::move(token));
    }
    ++line_no;
  }
  if (line_no < special::kCount) throw FormatError("vocabulary: missing special tokens");
  return Tokenizer(std::move(tokens));
}

Tokenizer build_vocab(std::span<const Table> corpus, std::size_t min_count,
                      std::span<const std::string> extra_labels) {
  std::map<std::string, std::size_t> counts;
  for (const auto& table : corpus) {
    for (const auto& rec : table.rows()) {
      for (const auto& cell : rec.columns) {
        for (auto& t : tokenize(cell.col)) ++counts[std::move(t)];
        for (auto& t : tokenize(cell.val)) ++counts[std::move(t)];
      }
    }
  }
  std::map<std::string, std::size_t> kept;
  for (const auto& [token, n] : counts) {
    if (n >= min_count) kept.emplace(token, n);
  }
  auto keep_label = [&](const std::string& label) {
    for (auto& t : tokenize(label)) {
      auto it = counts.find(t);
      kept.emplace(t, it == counts.end() ? 0 : it->second);
    }
  };
  for (const auto& label : builtin_knowledge_labels()) keep_label(label);
  for (const auto& label : extra_labels) keep_label(label);

  std::vector<std::pair<std::string, std::size_t>> ordered(kept.begin(), kept.end());
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens;
  tokens.reserve(ordered.size());
  for (auto& [token, n] : ordered) tokens.push_back(std::move(token));
  return Tokenizer(std::move(tokens));
}

}  // namespace kaer
