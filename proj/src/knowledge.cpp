#include "kaer/knowledge.hpp"

#include <algorithm>
#include <cctype>
#include <regex>
#include <set>

#include "json.hpp"

#include "kaer/errors.hpp"
#include "kaer/tokenizer.hpp"

namespace kaer {

using nlohmann::json;

// ---- Gazetteer --------------------------------------------------------------

void Gazetteer::add(std::string_view surface, std::string entity_type) {
  auto tokens = tokenize(surface);
  if (tokens.empty()) throw FormatError("gazetteer: empty surface form");
  if (entity_type.empty()) throw FormatError("gazetteer: empty type for '" + std::string(surface) + "'");
  max_len_ = std::max(max_len_, tokens.size());
  entries_[std::move(tokens)] = std::move(entity_type);
}

std::optional<std::pair<std::size_t, std::string>> Gazetteer::longest_match(
    const std::vector<std::string>& tokens, std::size_t pos) const {
  const std::size_t limit = std::min(max_len_, tokens.size() - std::min(pos, tokens.size()));
  std::vector<std::string> probe;
  for (std::size_t len = limit; len > 0; --len) {
    probe.assign(tokens.begin() + static_cast<std::ptrdiff_t>(pos),
                 tokens.begin() + static_cast<std::ptrdiff_t>(pos + len));
    if (auto it = entries_.find(probe); it != entries_.end()) return std::make_pair(len, it->second);
  }
  return std::nullopt;
}

std::vector<std::string> Gazetteer::types() const {
  std::set<std::string> out;
  for (const auto& [surface, type] : entries_) out.insert(type);
  return {out.begin(), out.end()};
}

Gazetteer Gazetteer::from_tsv(std::string_view text) {
  Gazetteer g;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view line = text.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    const std::size_t tab = line.find('\t');
    if (tab == std::string_view::npos) {
      throw FormatError("gazetteer line " + std::to_string(line_no) + ": expected surface<TAB>type");
    }
    g.add(line.substr(0, tab), std::string(line.substr(tab + 1)));
  }
  return g;
}

Gazetteer Gazetteer::load(const std::filesystem::path& path) { return from_tsv(read_file(path)); }

// ---- AnnotationStore ----------------------------------------------------------

void AnnotationStore::set_column_type(ColumnTypeAnnotation annotation) {
  if (!(annotation.confidence >= 0.0 && annotation.confidence <= 1.0)) {
    throw DomainError("column type confidence must lie in [0, 1]");
  }
  auto key = std::make_pair(annotation.table, annotation.column);
  column_types_[std::move(key)] = std::move(annotation);
}

void AnnotationStore::add_mention(EntityMention mention) {
  if (mention.end <= mention.start) {
    throw FormatError("mention span [" + std::to_string(mention.start) + ", " +
                      std::to_string(mention.end) + ") is empty");
  }
  CellKey key{mention.table, mention.row, mention.column};
  if (auto it = mentions_.find(key); it != mentions_.end()) {
    const auto& cell = it->second;
    auto next = cell.lower_bound(mention.start);
    const bool hits_next = next != cell.end() && next->second.start < mention.end;
    const bool hits_prev = next != cell.begin() && std::prev(next)->second.end > mention.start;
    if (hits_next || hits_prev) {
      throw OverlapError("overlapping mention spans in " + mention.table + "/" + mention.row + "/" +
                         mention.column);
    }
  }
  mentions_[std::move(key)].emplace(mention.start, std::move(mention));
}

void AnnotationStore::replace_mention(EntityMention mention) {
  if (mention.end <= mention.start) throw FormatError("mention span is empty");
  auto& cell = mentions_[CellKey{mention.table, mention.row, mention.column}];
  for (auto it = cell.begin(); it != cell.end();) {
    const bool overlaps = it->second.start < mention.end && mention.start < it->second.end;
    it = overlaps ? cell.erase(it) : std::next(it);
  }
  cell.emplace(mention.start, std::move(mention));
}

const ColumnTypeAnnotation* AnnotationStore::column_type(std::string_view table,
                                                         std::string_view column) const {
  auto it = column_types_.find({std::string(table), std::string(column)});
  return it == column_types_.end() ? nullptr : &it->second;
}

std::vector<const EntityMention*> AnnotationStore::mentions(std::string_view table,
                                                            std::string_view row,
                                                            std::string_view column) const {
  std::vector<const EntityMention*> out;
  auto it = mentions_.find(CellKey{std::string(table), std::string(row), std::string(column)});
  if (it == mentions_.end()) return out;
  for (const auto& [start, m] : it->second) out.push_back(&m);
  return out;
}

std::vector<ColumnTypeAnnotation> AnnotationStore::column_types() const {
  std::vector<ColumnTypeAnnotation> out;
  for (const auto& [key, a] : column_types_) out.push_back(a);
  return out;
}

std::vector<EntityMention> AnnotationStore::all_mentions() const {
  std::vector<EntityMention> out;
  for (const auto& [key, cell] : mentions_) {
    for (const auto& [start, m] : cell) out.push_back(m);
  }
  return out;
}

void AnnotationStore::merge(const AnnotationStore& other) {
  for (const auto& [key, a] : other.column_types_) column_types_[key] = a;
  for (const auto& m : other.all_mentions()) add_mention(m);
}

std::vector<std::string> AnnotationStore::labels() const {
  std::set<std::string> out;
  for (const auto& [key, a] : column_types_) out.insert(a.predicted_type);
  for (const auto& [key, cell] : mentions_) {
    for (const auto& [start, m] : cell) out.insert(m.entity_type);
  }
  return {out.begin(), out.end()};
}

// ---- rule typer ---------------------------------------------------------------

namespace {

struct TypeRule {
  std::string label;
  std::regex pattern;
};

const std::vector<TypeRule>& rule_table() {
  using std::regex;
  static const std::vector<TypeRule> rules = {
      {"year", regex(R"(^(18|19|20)\d{2}$)")},
      {"date", regex(R"(^(\d{1,2}[/.-]\d{1,2}[/.-](\d{4}|\d{2})|\d{4}[/.-]\d{1,2}[/.-]\d{1,2})$)")},
      {"price", regex(R"(^(\$|€|£|¥|us\$|usd|eur|gbp)\s?\d{1,3}((,\d{3})+|\d*)(\.\d+)?$)",
                      regex::icase)},
      {"quantity",
       regex(R"(^\d+(\.\d+)?\s?(kg|g|mg|lb|lbs|oz|ml|l|gb|mb|tb|kb|mm|cm|m|km|in|inch|inches|ft|)"
             R"(min|mins|minutes|sec|secs|seconds|h|hrs|hours|pcs|pack|mah|w|v|mp|ghz|hz)$)",
             regex::icase)},
      {"name", regex(R"(^[A-Z][A-Za-z'.\-]*(\s+[A-Z][A-Za-z'.\-]*)+$)")},
  };
  return rules;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

}  // namespace

std::optional<std::string> classify_value(std::string_view value) {
  const std::string v(trim(value));
  if (v.empty()) return std::nullopt;
  for (const auto& rule : rule_table()) {
    if (std::regex_match(v, rule.pattern)) return rule.label;
  }
  return std::nullopt;
}

std::vector<ColumnTypeAnnotation> infer_column_types(const Table& table) {
  std::vector<ColumnTypeAnnotation> out;
  const auto& schema = table.schema();
  for (std::size_t c = 0; c < schema.size(); ++c) {
    std::map<std::string, std::size_t> votes;
    std::size_t non_empty = 0;
    for (const auto& rec : table.rows()) {
      const auto& val = rec.columns[c].val;
      if (trim(val).empty()) continue;
      ++non_empty;
      if (auto label = classify_value(val)) ++votes[*label];
      else ++votes["text"];
    }
    // Rule order breaks ties so the result does not depend on row order.
    std::string winner = "text";
    std::size_t best = 0;
    for (const auto& rule : rule_table()) {
      auto it = votes.find(rule.label);
      if (it != votes.end() && it->second > best) {
        best = it->second;
        winner = rule.label;
      }
    }
    ColumnTypeAnnotation a{table.name(), schema[c], "text", 0.0};
    if (non_empty > 0 && 2 * best > non_empty) {
      a.predicted_type = winner;
      a.confidence = static_cast<double>(best) / static_cast<double>(non_empty);
    } else if (non_empty > 0) {
      a.confidence = static_cast<double>(votes["text"]) / static_cast<double>(non_empty);
    }
    out.push_back(std::move(a));
  }
  return out;
}

// ---- linking ------------------------------------------------------------------

std::vector<EntityMention> link_entities(const Table& table, const Gazetteer& gazetteer) {
  std::vector<EntityMention> out;
  if (gazetteer.empty()) return out;
  for (const auto& rec : table.rows()) {
    for (const auto& cell : rec.columns) {
      const auto tokens = tokenize(cell.val);
      std::size_t pos = 0;
      while (pos < tokens.size()) {
        if (auto hit = gazetteer.longest_match(tokens, pos)) {
          const auto [len, type] = *hit;
          std::span<const std::string> span(tokens.data() + pos, len);
          out.push_back({table.name(), rec.entry_id, cell.col, pos, pos + len, detokenize(span), type});
          pos += len;
        } else {
          ++pos;
        }
      }
    }
  }
  return out;
}

DittoMode parse_ditto_mode(std::string_view text) {
  std::string lower(text);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](char ch) { return static_cast<char>(std::tolower(static_cast<unsigned char>(ch))); });
  if (lower == "general") return DittoMode::General;
  if (lower == "product") return DittoMode::Product;
  throw DomainError("unknown ditto mode '" + std::string(text) + "'");
}

const std::vector<std::string>& ditto_general_types() {
  static const std::vector<std::string> types = {"PERSON", "ORG",      "LOC", "PRODUCT",
                                                 "DATE",   "QUANTITY", "TIME"};
  return types;
}

const std::vector<std::string>& ditto_product_source_types() {
  static const std::vector<std::string> types = {"NORP", "GPE", "LOC", "PERSON", "PRODUCT"};
  return types;
}

std::vector<EntityMention> ditto_inject(const std::vector<EntityMention>& mentions, DittoMode mode) {
  auto contains = [](const std::vector<std::string>& list, const std::string& t) {
    return std::find(list.begin(), list.end(), t) != list.end();
  };
  std::vector<EntityMention> out;
  for (const auto& m : mentions) {
    switch (mode) {
      case DittoMode::General:
        if (contains(ditto_general_types(), m.entity_type)) out.push_back(m);
        break;
      case DittoMode::Product:
        if (contains(ditto_product_source_types(), m.entity_type)) {
          out.push_back(m);
          out.back().entity_type = "PRODUCT";
        }
        break;
      default:
        throw DomainError("unknown ditto mode");
    }
  }
  return out;
}

// ---- JSONL --------------------------------------------------------------------

namespace {

std::string id_field(const json& obj, const char* key) {
  const auto& v = obj.at(key);
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  throw FormatError(std::string("field '") + key + "' must be a string or integer");
}

}  // namespace

AnnotationStore annotations_from_jsonl(std::string_view text) {
  AnnotationStore store;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view line = text.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (trim(line).empty()) continue;
    const std::string where = "annotations line " + std::to_string(line_no);
    try {
      const json obj = json::parse(line);
      const auto kind = obj.at("kind").get<std::string>();
      if (kind == "column_type") {
        ColumnTypeAnnotation a{obj.at("table").get<std::string>(), obj.at("column").get<std::string>(),
                               obj.at("type").get<std::string>(), obj.value("confidence", 1.0)};
        if (a.predicted_type.empty()) throw FormatError("empty type");
        if (!(a.confidence >= 0.0 && a.confidence <= 1.0)) throw FormatError("confidence outside [0, 1]");
        store.set_column_type(std::move(a));
      } else if (kind == "mention") {
        const auto start = obj.at("start").get<long long>();
        const auto end = obj.at("end").get<long long>();
        if (start < 0 || end <= start) {
          throw FormatError("span [" + std::to_string(start) + ", " + std::to_string(end) + ") is invalid");
        }
        EntityMention m{obj.at("table").get<std::string>(),
                        id_field(obj, "row"),
                        obj.at("column").get<std::string>(),
                        static_cast<std::size_t>(start),
                        static_cast<std::size_t>(end),
                        obj.at("surface").get<std::string>(),
                        obj.at("type").get<std::string>()};
        if (m.entity_type.empty()) throw FormatError("empty type");
        store.add_mention(std::move(m));
      } else {
        throw FormatError("unknown kind '" + kind + "'");
      }
    } catch (const OverlapError& e) {
      throw OverlapError(where + ": " + e.what());
    } catch (const json::exception& e) {
      throw FormatError(where + ": " + e.what());
    } catch (const DataError& e) {
      throw FormatError(where + ": " + e.what());
    }
  }
  return store;
}

AnnotationStore ingest_annotations(const std::filesystem::path& path) {
  return annotations_from_jsonl(read_file(path));
}

std::string export_annotations(const AnnotationStore& store) {
  std::string out;
  for (const auto& a : store.column_types()) {
    json obj = {{"kind", "column_type"}, {"table", a.table},          {"column", a.column},
                {"type", a.predicted_type}, {"confidence", a.confidence}};
    out += obj.dump();
    out.push_back('\n');
  }
  for (const auto& m : store.all_mentions()) {
    json obj = {{"kind", "mention"}, {"table", m.table}, {"row", m.row},
                {"column", m.column}, {"start", m.start}, {"end", m.end},
                {"surface", m.surface}, {"type", m.entity_type}};
    out += obj.dump();
    out.push_back('\n');
  }
  return out;
}

}  // namespace kaer
