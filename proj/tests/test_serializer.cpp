#include "doctest.h"

#include "kaer/errors.hpp"
#include "kaer/serializer.hpp"
#include "kaer/synthetic.hpp"

using namespace kaer;

namespace {

const Tokenizer& vocab() {
  static const Tokenizer tok(std::vector<std::string>{"name", "thriller", "song", "title", "iphone", "99", "a", "x", "y",
                                                      "/", "product", "mobile", "phone", "org", "apple", "b", "c"});
  return tok;
}

std::string text(const std::vector<TokenId>& ids) { return vocab().decode(ids); }

Record rec(std::string id, std::vector<Cell> cells) { return Record{std::move(id), std::move(cells)}; }

std::vector<TokenId> strip_knowledge(const TokenSeq& s) {
  std::vector<TokenId> out;
  for (std::size_t i = 0; i < s.tokens.size(); ++i) {
    if (!is_knowledge(s.roles[i])) out.push_back(s.tokens[i]);
  }
  return out;
}

}  // namespace

TEST_CASE("column type with slash and space templates") {
  AnnotationStore store;
  store.set_column_type({"A", "name", "song", 1.0});
  const Record r = rec("0", {{"name", "thriller"}});
  CHECK(text(serialize_entry(r, "A", store, PromptMode::Slash, vocab()).tokens) == "[COL] name / song [VAL] thriller");
  CHECK(text(serialize_entry(r, "A", store, PromptMode::Space, vocab()).tokens) == "[COL] name song [VAL] thriller");
}

TEST_CASE("constrained tuning records sites on the unaugmented trunk") {
  AnnotationStore store;
  store.add_mention({"A", "0", "title", 0, 1, "iphone", "PRODUCT"});
  const Record r = rec("0", {{"title", "iphone 99"}});
  const TokenSeq s = serialize_entry(r, "A", store, PromptMode::ConstrainedTuning, vocab());
  CHECK(text(s.tokens) == "[COL] title [VAL] iphone 99");
  REQUIRE(s.sites.size() == 1);
  CHECK(s.sites[0].head == TokenSpan{3, 4});
  CHECK(s.sites[0].knowledge == std::vector<TokenId>{vocab().id("product")});
  CHECK(s.sites[0].kind == SiteKind::Entity);
}

TEST_CASE("mentions are labelled right after their span") {
  AnnotationStore store;
  store.add_mention({"A", "0", "title", 0, 2, "apple iphone", "ORG"});
  store.add_mention({"A", "0", "title", 2, 3, "99", "PRODUCT"});
  const Record r = rec("0", {{"title", "apple iphone 99"}});
  CHECK(text(serialize_entry(r, "A", store, PromptMode::Slash, vocab()).tokens) ==
        "[COL] title [VAL] apple iphone / org 99 / product");
  CHECK(text(serialize_entry(r, "A", store, PromptMode::Space, vocab()).tokens) ==
        "[COL] title [VAL] apple iphone org 99 product");
}

TEST_CASE("empty store gives the plain serialization in every mode") {
  const AnnotationStore store;
  const Record r = rec("0", {{"title", "iphone 99"}, {"name", ""}});
  for (PromptMode m : {PromptMode::Space, PromptMode::Slash, PromptMode::ConstrainedTuning}) {
    const TokenSeq s = serialize_entry(r, "A", store, m, vocab());
    CHECK(text(s.tokens) == "[COL] title [VAL] iphone 99 [COL] name [VAL]");
    CHECK(s.sites.empty());
  }
}

TEST_CASE("mention mismatches are reported") {
  AnnotationStore store;
  store.add_mention({"A", "0", "title", 1, 3, "99 x", "PRODUCT"});
  const Record r = rec("0", {{"title", "iphone 99"}});
  CHECK_THROWS_AS(serialize_entry(r, "A", store, PromptMode::Slash, vocab()), AnnotationMismatchError);
  AnnotationStore wrong;
  wrong.add_mention({"A", "0", "title", 0, 1, "android", "PRODUCT"});
  CHECK_THROWS_AS(serialize_entry(r, "A", wrong, PromptMode::Space, vocab()), AnnotationMismatchError);
}

TEST_CASE("pair skeleton and segments") {
  const AnnotationStore store;
  const auto p = serialize_pair(rec("0", {{"a", "x"}}), "A", rec("1", {{"a", "y"}}), "B", store, PromptMode::Space,
                                vocab(), 64, 1);
  CHECK(text(p.combined) == "[CLS] [COL] a [VAL] x [SEP] [COL] a [VAL] y [SEP]");
  CHECK(p.segments == std::vector<std::int32_t>{0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1});
  CHECK(p.label == 1);
}

TEST_CASE("truncation removes value tokens from the longer side") {
  const AnnotationStore store;
  const Record left = rec("0", {{"a", "x x x x x x x x x x"}});
  const Record right = rec("1", {{"a", "y y"}});
  const auto full = serialize_pair(left, "A", right, "B", store, PromptMode::Space, vocab(), 512);
  const std::size_t n = full.combined.size();
  CHECK(n == 3 + 13 + 5);
  CHECK(serialize_pair(left, "A", right, "B", store, PromptMode::Space, vocab(), n).combined == full.combined);
  const auto cut = serialize_pair(left, "A", right, "B", store, PromptMode::Space, vocab(), n - 3);
  CHECK(text(cut.combined) == "[CLS] [COL] a [VAL] x x x x x x x [SEP] [COL] a [VAL] y y [SEP]");
  CHECK(cut.combined.size() == n - 3);
}

TEST_CASE("truncation keeps the skeleton and fails when nothing is left to cut") {
  const AnnotationStore store;
  const Record left = rec("0", {{"a", "x x x"}, {"b", "x"}});
  const Record right = rec("1", {{"a", "y y y y"}});
  const auto p = serialize_pair(left, "A", right, "B", store, PromptMode::Space, vocab(), 12);
  CHECK(p.combined.size() <= 12);
  CHECK(p.combined.front() == special::kCls);
  CHECK(std::count(p.combined.begin(), p.combined.end(), special::kSep) == 2);
  CHECK(std::count(p.combined.begin(), p.combined.end(), special::kCol) == 3);
  CHECK_THROWS_AS(serialize_pair(left, "A", right, "B", store, PromptMode::Space, vocab(), 10), SequenceOverflowError);
  CHECK_THROWS_AS(serialize_pair(left, "A", right, "B", store, PromptMode::Space, vocab(), 7), DomainError);
}

TEST_CASE("truncation drops sites whose head is removed") {
  AnnotationStore store;
  store.add_mention({"A", "0", "a", 3, 4, "x", "ORG"});
  const Record left = rec("0", {{"a", "x x x x"}});
  const Record right = rec("1", {{"a", "y"}});
  const auto p = serialize_pair(left, "A", right, "B", store, PromptMode::ConstrainedTuning, vocab(), 12);
  CHECK(p.left.sites.empty());
  CHECK(3 + p.left.tokens.size() + p.right.tokens.size() <= 12);
}

TEST_CASE("injection is additive and slash adds one token per label") {
  SyntheticSpec spec;
  spec.entities = 40;
  spec.train_pairs = 20;
  spec.test_pairs = 10;
  const auto d = generate_synthetic(spec, 3);
  const std::vector<Table> corpus{d.left, d.right};
  const Tokenizer tok = build_vocab(corpus, 1, d.gold.labels());
  const AnnotationStore empty;
  for (const auto& r : d.right.rows()) {
    const auto plain = serialize_entry(r, "tableB", empty, PromptMode::Space, tok);
    const auto space = serialize_entry(r, "tableB", d.gold, PromptMode::Space, tok);
    const auto slash = serialize_entry(r, "tableB", d.gold, PromptMode::Slash, tok);
    const auto pct = serialize_entry(r, "tableB", d.gold, PromptMode::ConstrainedTuning, tok);
    CHECK(strip_knowledge(space) == plain.tokens);
    CHECK(strip_knowledge(slash) == plain.tokens);
    CHECK(pct.tokens == plain.tokens);
    // 4 column types + title mention + brand mention.
    CHECK(slash.tokens.size() == space.tokens.size() + 6);
    CHECK(pct.tokens.size() <= space.tokens.size());
    std::vector<TokenId> slash_without_joiners;
    for (std::size_t i = 0; i < slash.tokens.size(); ++i) {
      if (!(is_knowledge(slash.roles[i]) && slash.tokens[i] == tok.id("/"))) slash_without_joiners.push_back(slash.tokens[i]);
    }
    CHECK(slash_without_joiners == space.tokens);
    CHECK(serialize_entry(r, "tableB", d.gold, PromptMode::Slash, tok) == slash);
  }
}

TEST_CASE("combined sites are rebased past [CLS] and the first [SEP]") {
  AnnotationStore store;
  store.set_column_type({"A", "a", "song", 1.0});
  store.set_column_type({"B", "a", "song", 1.0});
  const auto p = serialize_pair(rec("0", {{"a", "x"}}), "A", rec("1", {{"a", "y"}}), "B", store,
                                PromptMode::ConstrainedTuning, vocab(), 64);
  const auto sites = p.combined_sites();
  REQUIRE(sites.size() == 2);
  CHECK(p.combined[sites[0].head.start] == vocab().id("a"));
  CHECK(sites[0].head == TokenSpan{2, 3});
  CHECK(sites[1].head == TokenSpan{7, 8});
  CHECK(p.combined[sites[1].head.start] == vocab().id("a"));
}

TEST_CASE("prompt mode names") {
  CHECK(parse_prompt_mode("Slash") == PromptMode::Slash);
  CHECK(parse_prompt_mode("constrained") == PromptMode::ConstrainedTuning);
  CHECK(prompt_mode_name(PromptMode::Space) == "space");
  CHECK_THROWS_AS(parse_prompt_mode("comma"), DomainError);
}
