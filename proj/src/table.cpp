#include "kaer/table.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "kaer/errors.hpp"
#include "kaer/rng.hpp"

namespace kaer {

const std::string* Record::value_of(std::string_view col) const {
  for (const auto& cell : columns) {
    if (cell.col == col) return &cell.val;
  }
  return nullptr;
}

Table::Table(std::string name, std::vector<std::string> schema, std::vector<Record> rows)
    : name_(std::move(name)), schema_(std::move(schema)), rows_(std::move(rows)) {
  for (const auto& col : schema_) {
    if (col.empty()) throw FormatError("table '" + name_ + "': empty column name in schema");
  }
  index_.reserve(rows_.size());
  for (std::size_t r = 0; r < rows_.size(); ++r) {
    const Record& rec = rows_[r];
    if (rec.columns.size() != schema_.size()) {
      throw FormatError("table '" + name_ + "': record '" + rec.entry_id + "' has " +
                        std::to_string(rec.columns.size()) + " columns, schema has " +
                        std::to_string(schema_.size()));
    }
    for (std::size_t c = 0; c < schema_.size(); ++c) {
      if (rec.columns[c].col != schema_[c]) {
        throw FormatError("table '" + name_ + "': record '" + rec.entry_id +
                          "' column order differs from schema at '" + schema_[c] + "'");
      }
    }
    if (!index_.emplace(rec.entry_id, r).second) {
      throw DuplicateIdError("table '" + name_ + "': duplicate id '" + rec.entry_id + "'");
    }
  }
}

const Record* Table::find(std::string_view id) const {
  auto it = index_.find(std::string(id));
  return it == index_.end() ? nullptr : &rows_[it->second];
}

const Record& Table::at(std::string_view id) const {
  if (const Record* rec = find(id)) return *rec;
  throw DanglingReferenceError("table '" + name_ + "' has no id '" + std::string(id) + "'");
}

std::string_view split_name(Split split) {
  switch (split) {
    case Split::Train:
      return "train";
    case Split::Valid:
      return "valid";
    case Split::Test:
      return "test";
  }
  return "train";
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::Train;
  if (text == "valid") return Split::Valid;
  if (text == "test") return Split::Test;
  throw DomainError("unknown split '" + std::string(text) + "'");
}

std::size_t LabeledPairSet::positives() const {
  return static_cast<std::size_t>(
      std::count_if(pairs.begin(), pairs.end(), [](const LabeledPair& p) { return p.label == 1; }));
}

// ---- CSV ------------------------------------------------------------------

std::vector<std::vector<std::string>> parse_csv(std::string_view text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool in_quotes = false;
  bool field_started = false;
  std::size_t line = 1;

  auto end_row = [&] {
    row.push_back(std::move(field));
    field.clear();
    rows.push_back(std::move(row));
    row.clear();
    field_started = false;
  };

  for (std::size_t i = 0; i < text.size(); ++i) {
    const char ch = text[i];
    if (in_quotes) {
      if (ch == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else if (ch == '\n' || ch == '\r') {
        throw FormatError("line " + std::to_string(line) + ": newline inside quoted field");
      } else {
        field.push_back(ch);
      }
      continue;
    }
    switch (ch) {
      case '"':
        if (!field.empty()) {
          throw FormatError("line " + std::to_string(line) + ": stray quote inside field");
        }
        in_quotes = true;
        field_started = true;
        break;
      case ',':
        row.push_back(std::move(field));
        field.clear();
        field_started = true;
        break;
      case '\r':
        if (i + 1 < text.size() && text[i + 1] == '\n') break;
        [[fallthrough]];
      case '\n':
        end_row();
        ++line;
        break;
      default:
        field.push_back(ch);
        field_started = true;
    }
  }
  if (in_quotes) throw FormatError("line " + std::to_string(line) + ": unterminated quote");
  if (field_started || !field.empty() || !row.empty()) end_row();
  return rows;
}

std::string format_csv_row(const std::vector<std::string>& fields) {
  std::string out;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i > 0) out.push_back(',');
    const std::string& f = fields[i];
    if (f.find_first_of(",\"\r\n") == std::string::npos) {
      out += f;
      continue;
    }
    if (f.find_first_of("\r\n") != std::string::npos) {
      throw FormatError("cannot write field with embedded newline");
    }
    out.push_back('"');
    for (char ch : f) {
      if (ch == '"') out.push_back('"');
      out.push_back(ch);
    }
    out.push_back('"');
  }
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::filesystem::path& path, std::string_view contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
}

Table table_from_csv(std::string_view text, std::string name) {
  auto rows = parse_csv(text);
  if (rows.empty() || (rows.size() == 1 && rows[0].size() == 1 && rows[0][0].empty())) {
    throw FormatError("table '" + name + "': missing header");
  }
  const auto& header = rows.front();
  auto id_it = std::find(header.begin(), header.end(), "id");
  if (id_it == header.end()) {
    throw FormatError("table '" + name + "': header has no 'id' column");
  }
  const auto id_col = static_cast<std::size_t>(id_it - header.begin());

  std::vector<std::string> schema;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (c != id_col) schema.push_back(header[c]);
  }

  std::vector<Record> records;
  records.reserve(rows.size() - 1);
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& fields = rows[r];
    if (fields.size() != header.size()) {
      throw FormatError("table '" + name + "': line " + std::to_string(r + 1) + " has " +
                        std::to_string(fields.size()) + " fields, expected " +
                        std::to_string(header.size()));
    }
    Record rec;
    rec.entry_id = fields[id_col];
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (c != id_col) rec.columns.push_back({header[c], fields[c]});
    }
    records.push_back(std::move(rec));
  }
  return Table(std::move(name), std::move(schema), std::move(records));
}

Table load_table(const std::filesystem::path& path, std::optional<std::string> name) {
  return table_from_csv(read_file(path), name.value_or(path.stem().string()));
}

std::string table_to_csv(const Table& table) {
  std::vector<std::string> header{"id"};
  header.insert(header.end(), table.schema().begin(), table.schema().end());
  std::string out = format_csv_row(header) + "\n";
  for (const auto& rec : table.rows()) {
    std::vector<std::string> fields{rec.entry_id};
    for (const auto& cell : rec.columns) fields.push_back(cell.val);
    out += format_csv_row(fields);
    out.push_back('\n');
  }
  return out;
}

void write_table(const Table& table, const std::filesystem::path& path) {
  write_file(path, table_to_csv(table));
}

LabeledPairSet pairs_from_csv(std::string_view text, const Table& left, const Table& right,
                              Split split) {
  auto rows = parse_csv(text);
  if (rows.empty()) throw FormatError("pair file: missing header");
  const auto& header = rows.front();
  auto column = [&](std::string_view name) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) {
      throw FormatError("pair file: header lacks '" + std::string(name) + "'");
    }
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t lcol = column("ltable_id");
  const std::size_t rcol = column("rtable_id");
  const std::size_t ycol = column("label");

  LabeledPairSet set;
  set.split = split;
  std::unordered_map<std::string, std::size_t> seen;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& fields = rows[r];
    const std::string where = "pair file line " + std::to_string(r + 1);
    if (fields.size() != header.size()) throw FormatError(where + ": ragged row");
    LabeledPair pair{fields[lcol], fields[rcol], 0};
    if (fields[ycol] == "1") {
      pair.label = 1;
    } else if (fields[ycol] != "0") {
      throw FormatError(where + ": label '" + fields[ycol] + "' is not 0 or 1");
    }
    if (!left.find(pair.left_id)) {
      throw DanglingReferenceError(where + ": ltable_id '" + pair.left_id + "' not in table '" +
                                   left.name() + "'");
    }
    if (!right.find(pair.right_id)) {
      throw DanglingReferenceError(where + ": rtable_id '" + pair.right_id + "' not in table '" +
                                   right.name() + "'");
    }
    std::string key = pair.left_id;
    key.push_back('\x1f');
    key += pair.right_id;
    if (!seen.emplace(std::move(key), r).second) {
      throw DuplicateIdError(where + ": duplicate pair (" + pair.left_id + ", " + pair.right_id +
                             ")");
    }
    set.pairs.push_back(std::move(pair));
  }
  return set;
}

LabeledPairSet load_pairs(const std::filesystem::path& path, const Table& left, const Table& right,
                          Split split) {
  return pairs_from_csv(read_file(path), left, right, split);
}

std::string pairs_to_csv(const LabeledPairSet& pairs) {
  std::string out = "ltable_id,rtable_id,label\n";
  for (const auto& p : pairs.pairs) {
    out += format_csv_row({p.left_id, p.right_id, p.label == 1 ? "1" : "0"});
    out.push_back('\n');
  }
  return out;
}

void write_pairs(const LabeledPairSet& pairs, const std::filesystem::path& path) {
  write_file(path, pairs_to_csv(pairs));
}

// ---- corruption -----------------------------------------------------------

Table make_dirty(const Table& table, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) {
    throw DomainError("make_dirty: fraction must lie in [0, 1]");
  }
  const std::size_t n_cols = table.schema().size();
  if (n_cols < 2) throw DomainError("make_dirty: table needs at least two columns");
  const std::size_t n_rows = table.size();
  const std::size_t n_cells = n_rows * n_cols;
  const auto n_moves = static_cast<std::size_t>(
      std::ceil(fraction * static_cast<double>(n_cells) - 1e-9));

  std::vector<std::size_t> cells(n_cells);
  std::iota(cells.begin(), cells.end(), std::size_t{0});
  Rng rng(seed);
  shuffle(std::span<std::size_t>(cells), rng);

  // base[i] is what remains of the original value; appended[i] collects moved text.
  std::vector<bool> moved(n_cells, false);
  std::vector<std::vector<std::string>> appended(n_cells);
  for (std::size_t k = 0; k < std::min(n_moves, n_cells); ++k) {
    const std::size_t cell = cells[k];
    const std::size_t row = cell / n_cols;
    const std::size_t col = cell % n_cols;
    std::size_t target = uniform_index(rng, n_cols - 1);
    if (target >= col) ++target;
    moved[cell] = true;
    const std::string& text = table.rows()[row].columns[col].val;
    if (!text.empty()) appended[row * n_cols + target].push_back(text);
  }

  std::vector<Record> rows = table.rows();
  for (std::size_t r = 0; r < n_rows; ++r) {
    for (std::size_t c = 0; c < n_cols; ++c) {
      const std::size_t cell = r * n_cols + c;
      if (!moved[cell] && appended[cell].empty()) continue;
      std::string value = moved[cell] ? std::string() : rows[r].columns[c].val;
      for (const auto& piece : appended[cell]) {
        if (!value.empty()) value.push_back(' ');
        value += piece;
      }
      rows[r].columns[c].val = std::move(value);
    }
  }
  return Table(table.name(), table.schema(), std::move(rows));
}

}  // namespace kaer
