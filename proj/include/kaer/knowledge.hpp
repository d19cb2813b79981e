#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "kaer/table.hpp"

namespace kaer {

struct ColumnTypeAnnotation {
  std::string table;
  std::string column;
  std::string predicted_type;
  double confidence = 1.0;

  bool operator==(const ColumnTypeAnnotation&) const = default;
};

/// A typed mention inside one cell. `start`/`end` index the cell's tokens
/// (as produced by tokenize), half open.
struct EntityMention {
  std::string table;
  EntryId row;
  std::string column;
  std::size_t start = 0;
  std::size_t end = 0;
  std::string surface;
  std::string entity_type;

  bool operator==(const EntityMention&) const = default;
};

/// Dictionary of lowercase surface forms to entity types; lookup is
/// case-insensitive and greedy longest-match over token sequences.
class Gazetteer {
 public:
  Gazetteer() = default;

  void add(std::string_view surface, std::string entity_type);
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  /// Longest entry starting at tokens[pos]: (length, type), or nullopt.
  std::optional<std::pair<std::size_t, std::string>> longest_match(
      const std::vector<std::string>& tokens, std::size_t pos) const;

  std::vector<std::string> types() const;

  /// TSV `surface<TAB>type`; surfaces are lowercase-normalized on load.
  static Gazetteer from_tsv(std::string_view text);
  static Gazetteer load(const std::filesystem::path& path);

 private:
  std::map<std::vector<std::string>, std::string> entries_;
  std::size_t max_len_ = 0;
};

using CellKey = std::tuple<std::string, EntryId, std::string>;

/// Column-level and entity-level knowledge for one or more tables.
/// At most one column type per (table, column); mentions within one cell
/// never overlap.
class AnnotationStore {
 public:
  /// Inserts or replaces the annotation for (table, column).
  void set_column_type(ColumnTypeAnnotation annotation);
  /// Throws OverlapError when the span intersects an existing mention of the cell.
  void add_mention(EntityMention mention);
  /// Adds the mention after removing any mention of the same cell it overlaps.
  void replace_mention(EntityMention mention);

  const ColumnTypeAnnotation* column_type(std::string_view table, std::string_view column) const;
  /// Mentions of one cell, ordered by start.
  std::vector<const EntityMention*> mentions(std::string_view table, std::string_view row,
                                             std::string_view column) const;

  std::vector<ColumnTypeAnnotation> column_types() const;
  std::vector<EntityMention> all_mentions() const;

  /// Adds everything from `other`; column types from `other` win.
  void merge(const AnnotationStore& other);
  void clear_mentions() { mentions_.clear(); }
  bool empty() const { return column_types_.empty() && mentions_.empty(); }

  /// Every label used by either annotation level.
  std::vector<std::string> labels() const;

  bool operator==(const AnnotationStore&) const = default;

 private:
  std::map<std::pair<std::string, std::string>, ColumnTypeAnnotation> column_types_;
  std::map<CellKey, std::map<std::size_t, EntityMention>> mentions_;
};

// ---- column types -----------------------------------------------------------

/// The rule typer's label for an individual value, or nullopt when no rule fires.
std::optional<std::string> classify_value(std::string_view value);

/// One annotation per column: majority vote of the rule table over the
/// non-empty cells; the winner needs more than half of them, otherwise "text".
std::vector<ColumnTypeAnnotation> infer_column_types(const Table& table);

// ---- entity linking ---------------------------------------------------------

std::vector<EntityMention> link_entities(const Table& table, const Gazetteer& gazetteer);

enum class DittoMode { General, Product };

DittoMode parse_ditto_mode(std::string_view text);
const std::vector<std::string>& ditto_general_types();
const std::vector<std::string>& ditto_product_source_types();

/// Ditto's baseline injection: General keeps the seven general types as they
/// are; Product relabels five types as PRODUCT and drops the rest.
std::vector<EntityMention> ditto_inject(const std::vector<EntityMention>& mentions, DittoMode mode);

// ---- interchange ------------------------------------------------------------

AnnotationStore annotations_from_jsonl(std::string_view text);
AnnotationStore ingest_annotations(const std::filesystem::path& path);
/// Column types first (sorted by key), then mentions (sorted by cell, start).
std::string export_annotations(const AnnotationStore& store);

}  // namespace kaer
