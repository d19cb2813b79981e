#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <sstream>

#include "doctest.h"

#include "kaer/errors.hpp"
#include "kaer/synthetic.hpp"
#include "kaer/table.hpp"

using namespace kaer;

namespace {

std::map<std::string, int> token_multiset(const Record& r) {
  std::map<std::string, int> out;
  for (const auto& c : r.columns) {
    std::istringstream in(c.val);
    std::string w;
    while (in >> w) ++out[w];
  }
  return out;
}

Table sample_table(std::size_t rows, std::size_t cols) {
  std::vector<std::string> schema;
  for (std::size_t c = 0; c < cols; ++c) schema.push_back("c" + std::to_string(c));
  std::vector<Record> records;
  for (std::size_t r = 0; r < rows; ++r) {
    Record rec{std::to_string(r), {}};
    for (std::size_t c = 0; c < cols; ++c) {
      rec.columns.push_back({schema[c], (r + c) % 5 == 0 ? "" : "v" + std::to_string(r) + "_" + std::to_string(c) + " w"});
    }
    records.push_back(std::move(rec));
  }
  return Table("t", schema, std::move(records));
}

}  // namespace

TEST_CASE("load a table from csv text") {
  const Table t = table_from_csv("id,title,price\n0,iphone 6s,99\n1,\"galaxy, s7\",\n", "tableA");
  CHECK(t.schema() == std::vector<std::string>{"title", "price"});
  REQUIRE(t.size() == 2);
  CHECK(t.at("0").columns == std::vector<Cell>{{"title", "iphone 6s"}, {"price", "99"}});
  CHECK(t.at("1").columns[0].val == "galaxy, s7");
  CHECK(t.at("1").columns[1].val.empty());
}

TEST_CASE("values are kept verbatim") {
  const Table t = table_from_csv("id,price,code\n7,007.50,  x \n", "t");
  CHECK(*t.at("7").value_of("price") == "007.50");
  CHECK(*t.at("7").value_of("code") == "  x ");
}

TEST_CASE("the id column may appear anywhere in the header") {
  const Table t = table_from_csv("title,id\nfoo,3\n", "t");
  CHECK(t.schema() == std::vector<std::string>{"title"});
  CHECK(t.at("3").columns[0].val == "foo");
}

TEST_CASE("table format errors") {
  CHECK_THROWS_AS(table_from_csv("", "t"), FormatError);
  CHECK_THROWS_AS(table_from_csv("title,price\nfoo,1\n", "t"), FormatError);
  CHECK_THROWS_AS(table_from_csv("id,a\n0,x\n0,y\n", "t"), DuplicateIdError);
  try {
    table_from_csv("id,a,b\n0,x,y\n1,x\n", "t");
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_csv("a,\"b\nc\"\n"), FormatError);
  CHECK_THROWS_AS(parse_csv("a,b\"c\n"), FormatError);
}

TEST_CASE("table construction validates records") {
  CHECK_THROWS_AS(Table("t", {"a", ""}, {}), FormatError);
  CHECK_THROWS_AS(Table("t", {"a"}, {Record{"0", {{"b", "x"}}}}), FormatError);
  CHECK_THROWS_AS(Table("t", {"a", "b"}, {Record{"0", {{"a", "x"}}}}), FormatError);
}

TEST_CASE("csv round trip is byte identical") {
  const std::string text = "id,title,price\n0,iphone 6s,99\n1,\"quoted, comma\",\n2,\"say \"\"hi\"\"\",3\n";
  const Table t = table_from_csv(text, "t");
  CHECK(table_to_csv(t) == text);
  CHECK(table_from_csv(table_to_csv(t), "t") == t);
}

TEST_CASE("file round trip and default table name") {
  const auto dir = std::filesystem::temp_directory_path() / "kaer_table_test";
  std::filesystem::remove_all(dir);
  const Table t = sample_table(5, 3);
  write_table(t, dir / "tableA.csv");
  const Table back = load_table(dir / "tableA.csv");
  CHECK(back.name() == "tableA");
  CHECK(back.rows() == t.rows());
  CHECK(read_file(dir / "tableA.csv") == table_to_csv(t));
  CHECK_THROWS_AS(load_table(dir / "missing.csv"), DataError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("iTunes-Amazon shaped table") {
  std::ostringstream csv;
  csv << "id";
  for (int c = 0; c < 8; ++c) csv << ",a" << c;
  csv << "\n";
  for (int r = 0; r < 539; ++r) {
    csv << r;
    for (int c = 0; c < 8; ++c) csv << ",v" << r;
    csv << "\n";
  }
  const Table t = table_from_csv(csv.str(), "itunes");
  CHECK(t.size() == 539);
  CHECK(t.schema().size() == 8);
}

TEST_CASE("pairs load and validate") {
  const Table left = sample_table(10, 2);
  const Table right = sample_table(10, 2);
  const auto set = pairs_from_csv("ltable_id,rtable_id,label\n3,7,1\n2,2,0\n", left, right, Split::Test);
  REQUIRE(set.pairs.size() == 2);
  CHECK(set.pairs[0] == LabeledPair{"3", "7", 1});
  CHECK(set.split == Split::Test);
  CHECK(set.positives() == 1);
  CHECK(pairs_to_csv(set) == "ltable_id,rtable_id,label\n3,7,1\n2,2,0\n");

  try {
    pairs_from_csv("ltable_id,rtable_id,label\n3,42,1\n", left, right);
    FAIL("expected DanglingReferenceError");
  } catch (const DanglingReferenceError& e) {
    CHECK(std::string(e.what()).find("42") != std::string::npos);
  }
  CHECK_THROWS_AS(pairs_from_csv("ltable_id,rtable_id,label\n3,7,2\n", left, right), FormatError);
  CHECK_THROWS_AS(pairs_from_csv("ltable_id,rtable_id,label\n3,7,1\n3,7,0\n", left, right), DuplicateIdError);
  CHECK_THROWS_AS(pairs_from_csv("left,right,label\n3,7,1\n", left, right), FormatError);
}

TEST_CASE("positives count of a Magellan-sized pair file") {
  const Table left = sample_table(539, 2);
  const Table right = sample_table(539, 2);
  std::string csv = "ltable_id,rtable_id,label\n";
  for (int i = 0; i < 539; ++i) csv += std::to_string(i) + "," + std::to_string(i) + "," + (i < 132 ? "1" : "0") + "\n";
  CHECK(pairs_from_csv(csv, left, right).positives() == 132);
}

TEST_CASE("split names") {
  CHECK(split_name(Split::Valid) == "valid");
  CHECK(parse_split("test") == Split::Test);
  CHECK_THROWS_AS(parse_split("dev"), DomainError);
}

TEST_CASE("make_dirty with fraction zero is the identity") {
  const Table t = sample_table(8, 4);
  CHECK(make_dirty(t, 0.0, 3) == t);
}

TEST_CASE("make_dirty moves and appends") {
  const Table t("t", {"title", "price"}, {Record{"0", {{"title", "iphone"}, {"price", "99"}}}});
  // With two columns the target is forced; fraction 0.5 selects exactly one cell.
  const Table d = make_dirty(t, 0.5, 0);
  const auto& cols = d.rows()[0].columns;
  const bool title_moved = cols[0].val.empty();
  if (title_moved) {
    CHECK(cols[1].val == "99 iphone");
  } else {
    CHECK(cols[0].val == "iphone 99");
    CHECK(cols[1].val.empty());
  }
}

TEST_CASE("make_dirty invariants") {
  const Table t = sample_table(23, 5);
  for (double f : {0.1, 0.33, 0.5, 1.0}) {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
      CAPTURE(f);
      const Table d = make_dirty(t, f, seed);
      CHECK(d == make_dirty(t, f, seed));
      std::size_t moved = 0;
      for (std::size_t r = 0; r < t.size(); ++r) {
        CHECK(token_multiset(t.rows()[r]) == token_multiset(d.rows()[r]));
        for (std::size_t c = 0; c < t.schema().size(); ++c) {
          const auto& before = t.rows()[r].columns[c].val;
          const auto& after = d.rows()[r].columns[c].val;
          // A moved cell loses its original text as a prefix.
          if (!before.empty() && after.rfind(before, 0) != 0) ++moved;
        }
      }
      const auto expected = static_cast<std::size_t>(std::ceil(f * 23 * 5 - 1e-9));
      // Selected cells that were already empty move nothing, so count selections of non-empty cells.
      CHECK(moved <= expected);
      CHECK(d.schema() == t.schema());
    }
  }
}

TEST_CASE("make_dirty selection count on a dense table") {
  std::vector<Record> rows;
  for (int r = 0; r < 7; ++r) {
    rows.push_back(Record{std::to_string(r), {{"a", "x" + std::to_string(r)}, {"b", "y" + std::to_string(r)}, {"c", "z"}}});
  }
  const Table t("t", {"a", "b", "c"}, rows);
  for (double f : {0.0, 0.05, 0.2, 0.5, 0.9, 1.0}) {
    const Table d = make_dirty(t, f, 9);
    std::size_t moved = 0;
    for (std::size_t r = 0; r < t.size(); ++r) {
      for (std::size_t c = 0; c < 3; ++c) {
        if (d.rows()[r].columns[c].val.rfind(t.rows()[r].columns[c].val, 0) != 0) ++moved;
      }
    }
    CAPTURE(f);
    CHECK(moved == static_cast<std::size_t>(std::ceil(f * 21 - 1e-9)));
  }
}

TEST_CASE("make_dirty domain errors") {
  const Table t = sample_table(3, 2);
  CHECK_THROWS_AS(make_dirty(t, -0.1, 0), DomainError);
  CHECK_THROWS_AS(make_dirty(t, 1.5, 0), DomainError);
  CHECK_THROWS_AS(make_dirty(sample_table(3, 1), 0.5, 0), DomainError);
}

TEST_CASE("synthetic dataset balance and determinism") {
  SyntheticSpec spec;
  spec.entities = 50;
  spec.train_pairs = 40;
  spec.test_pairs = 10;
  const auto a = generate_synthetic(spec, 4);
  const auto b = generate_synthetic(spec, 4);
  CHECK(a.left == b.left);
  CHECK(a.right == b.right);
  CHECK(a.gold == b.gold);
  REQUIRE(a.splits.size() == 3);
  CHECK(a.splits[0].pairs.size() == 40);
  CHECK(a.splits[0].positives() == 20);
  CHECK(a.splits[2].positives() == 5);
  CHECK(a.splits[1].pairs.empty());
  for (const auto& set : a.splits) {
    for (const auto& p : set.pairs) {
      CHECK(a.left.find(p.left_id) != nullptr);
      CHECK(a.right.find(p.right_id) != nullptr);
    }
  }
}

TEST_CASE("synthetic dataset without perturbation has identical matched values") {
  SyntheticSpec spec;
  spec.entities = 30;
  spec.typo_rate = spec.abbreviation_rate = spec.reorder_rate = 0;
  spec.train_pairs = 20;
  spec.test_pairs = 10;
  const auto d = generate_synthetic(spec, 1);
  for (const auto& set : d.splits) {
    for (const auto& p : set.pairs) {
      if (p.label == 1) CHECK(d.left.at(p.left_id).columns == d.right.at(p.right_id).columns);
    }
  }
}

TEST_CASE("twins differ from their entity only in the gold type") {
  SyntheticSpec spec;
  spec.entities = 20;
  spec.train_pairs = 10;
  spec.test_pairs = 4;
  const auto d = generate_synthetic(spec, 2);
  for (int i = 0; i < 20; ++i) {
    const Record& copy = d.right.at(std::to_string(i));
    const Record& twin = d.right.at(std::to_string(20 + i));
    CHECK(copy.columns == twin.columns);
    const auto a = d.gold.mentions("tableB", copy.entry_id, "title");
    const auto b = d.gold.mentions("tableB", twin.entry_id, "title");
    REQUIRE(a.size() == 1);
    REQUIRE(b.size() == 1);
    CHECK(a[0]->entity_type != b[0]->entity_type);
  }
}

TEST_CASE("synthetic spec errors") {
  SyntheticSpec spec;
  spec.entities = 0;
  CHECK_THROWS_AS(generate_synthetic(spec, 0), DomainError);
  spec.entities = 10;
  spec.train_pairs = 100;
  CHECK_THROWS_AS(generate_synthetic(spec, 0), DomainError);
  spec.train_pairs = 10;
  spec.typo_rate = 2;
  CHECK_THROWS_AS(generate_synthetic(spec, 0), DomainError);
}
