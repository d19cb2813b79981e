#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace kaer {

using EntryId = std::string;

struct Cell {
  std::string col;
  std::string val;

  bool operator==(const Cell&) const = default;
};

/// One data entry: an ordered list of (column, value) pairs. An empty value
/// is a missing value.
struct Record {
  EntryId entry_id;
  std::vector<Cell> columns;

  const std::string* value_of(std::string_view col) const;
  bool operator==(const Record&) const = default;
};

/// A named collection of records sharing one schema. Construction validates
/// the schema/record agreement and id uniqueness; the table is immutable after.
class Table {
 public:
  Table() = default;
  Table(std::string name, std::vector<std::string> schema, std::vector<Record> rows);

  const std::string& name() const { return name_; }
  const std::vector<std::string>& schema() const { return schema_; }
  const std::vector<Record>& rows() const { return rows_; }
  std::size_t size() const { return rows_.size(); }

  const Record* find(std::string_view id) const;
  const Record& at(std::string_view id) const;

  bool operator==(const Table& other) const {
    return name_ == other.name_ && schema_ == other.schema_ && rows_ == other.rows_;
  }

 private:
  std::string name_;
  std::vector<std::string> schema_;
  std::vector<Record> rows_;
  std::unordered_map<std::string, std::size_t> index_;
};

enum class Split { Train, Valid, Test };

std::string_view split_name(Split split);
Split parse_split(std::string_view text);

struct LabeledPair {
  EntryId left_id;
  EntryId right_id;
  int label = 0;

  bool operator==(const LabeledPair&) const = default;
};

struct LabeledPairSet {
  std::vector<LabeledPair> pairs;
  Split split = Split::Train;

  std::size_t positives() const;
};

// ---- CSV ------------------------------------------------------------------

/// Parses one CSV document (comma separator, double-quote quoting). Embedded
/// newlines inside quoted fields are rejected.
std::vector<std::vector<std::string>> parse_csv(std::string_view text);
std::string format_csv_row(const std::vector<std::string>& fields);

/// Loads a Magellan-style table: header with an `id` column plus attributes.
/// Cell text is kept verbatim. The table name defaults to the file stem.
Table load_table(const std::filesystem::path& path, std::optional<std::string> name = std::nullopt);
Table table_from_csv(std::string_view text, std::string name);
std::string table_to_csv(const Table& table);
void write_table(const Table& table, const std::filesystem::path& path);

LabeledPairSet load_pairs(const std::filesystem::path& path, const Table& left, const Table& right,
                          Split split = Split::Train);
LabeledPairSet pairs_from_csv(std::string_view text, const Table& left, const Table& right,
                              Split split = Split::Train);
std::string pairs_to_csv(const LabeledPairSet& pairs);
void write_pairs(const LabeledPairSet& pairs, const std::filesystem::path& path);

// ---- corruption -----------------------------------------------------------

/// Builds the "dirty" variant of a table: ceil(fraction * rows * cols) cells,
/// chosen by a seeded shuffle of all (row, col) positions, are emptied and
/// their original text is appended (space separated) to another uniformly
/// chosen column of the same row. Sources are read from the original table.
Table make_dirty(const Table& table, double fraction, std::uint64_t seed);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

}  // namespace kaer
