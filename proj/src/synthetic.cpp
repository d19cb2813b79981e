#include "kaer/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <set>
#include <string_view>

#include "kaer/errors.hpp"
#include "kaer/rng.hpp"
#include "kaer/tokenizer.hpp"

namespace kaer {
namespace {

struct Head {
  std::string_view word;
  std::array<std::string_view, 2> types;
};

constexpr std::array<Head, 16> kHeads = {{
    {"jaguar", {"CAR", "ANIMAL"}},     {"python", {"SOFTWARE", "ANIMAL"}},
    {"apple", {"ORG", "FOOD"}},        {"mercury", {"PLANET", "ELEMENT"}},
    {"java", {"SOFTWARE", "PLACE"}},   {"amazon", {"ORG", "PLACE"}},
    {"saturn", {"PLANET", "CAR"}},     {"puma", {"ORG", "ANIMAL"}},
    {"orange", {"FOOD", "ORG"}},       {"phoenix", {"PLACE", "ANIMAL"}},
    {"mustang", {"CAR", "ANIMAL"}},    {"ruby", {"SOFTWARE", "MINERAL"}},
    {"titan", {"PLANET", "ORG"}},      {"falcon", {"ANIMAL", "SOFTWARE"}},
    {"lotus", {"CAR", "PLANT"}},       {"cobra", {"ANIMAL", "SOFTWARE"}},
}};

constexpr std::array<std::string_view, 12> kModifiers = {
    "pro", "classic", "deluxe", "mini", "max", "ultra", "sport", "lite", "plus", "prime", "edge", "neo"};

constexpr std::array<std::string_view, 10> kBrands = {
    "acme corporation",     "globex international", "initech incorporated", "umbrella company",
    "stark industries",     "wayne enterprises",    "hooli international",  "vandelay industries",
    "soylent corporation",  "tyrell company"};

constexpr std::array<std::pair<std::string_view, std::string_view>, 9> kAbbreviations = {{
    {"corporation", "corp"}, {"international", "intl"}, {"company", "co"},
    {"industries", "ind"},   {"enterprises", "ent"},    {"incorporated", "inc"},
    {"deluxe", "dlx"},       {"classic", "clsc"},       {"ultra", "ult"},
}};

constexpr std::string_view kCodeLetters = "abcdefghjkmnprstvwxz";

struct Entity {
  std::size_t head = 0;
  std::size_t type = 0;  // index into the head's two types
  std::string modifier;
  std::string code;
  std::string brand;
  std::string year;
  std::string price;
};

bool draw(Rng& rng, double rate) { return rate > 0.0 && uniform_unit(rng) < rate; }

std::string abbreviate(std::string_view word, Rng& rng, double rate) {
  for (const auto& [full, shortened] : kAbbreviations) {
    if (word == full && draw(rng, rate)) return std::string(shortened);
  }
  return std::string(word);
}

std::string typo(std::string word, Rng& rng, double rate) {
  if (word.size() >= 2 && draw(rng, rate)) {
    const std::size_t i = uniform_index(rng, word.size() - 1);
    std::swap(word[i], word[i + 1]);
  }
  return word;
}

std::string join(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

struct RenderedRow {
  Record record;
  std::size_t head = 0;
  std::string type;
};

RenderedRow render(const Entity& e, std::string id, bool perturb, const SyntheticSpec& spec, Rng& rng,
                   std::string_view type) {
  std::string modifier = e.modifier;
  std::string code = e.code;
  std::vector<std::string> brand_words;
  for (auto& w : tokenize(e.brand)) brand_words.push_back(std::move(w));
  if (perturb) {
    modifier = typo(abbreviate(modifier, rng, spec.abbreviation_rate), rng, spec.typo_rate);
    code = typo(code, rng, spec.typo_rate);
    for (auto& w : brand_words) w = abbreviate(w, rng, spec.abbreviation_rate);
  }
  std::vector<std::string> title{std::string(kHeads[e.head].word), modifier, code};
  if (perturb && draw(rng, spec.reorder_rate)) std::swap(title[1], title[2]);

  RenderedRow row;
  row.record.entry_id = std::move(id);
  row.record.columns = {{"title", join(title)}, {"brand", join(brand_words)}, {"year", e.year}, {"price", e.price}};
  row.head = e.head;
  row.type = std::string(type);
  return row;
}

void annotate(const RenderedRow& row, const std::string& table, AnnotationStore& gold) {
  const auto& title = row.record.columns[0].val;
  const auto& brand = row.record.columns[1].val;
  const auto title_tokens = tokenize(title);
  gold.add_mention({table, row.record.entry_id, "title", 0, 1, title_tokens[0], row.type});
  const auto brand_tokens = tokenize(brand);
  if (!brand_tokens.empty()) {
    gold.add_mention({table, row.record.entry_id, "brand", 0, brand_tokens.size(), detokenize(brand_tokens), "ORG"});
  }
}

}  // namespace

SyntheticDataset generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  if (spec.entities == 0) throw DomainError("synthetic spec: at least one entity is required");
  for (double rate : {spec.match_rate, spec.hard_negative_rate, spec.typo_rate, spec.abbreviation_rate,
                      spec.reorder_rate}) {
    if (!(rate >= 0.0 && rate <= 1.0)) throw DomainError("synthetic spec: rates must lie in [0, 1]");
  }
  Rng rng(seed);
  const std::size_t n = spec.entities;

  std::vector<Entity> entities;
  entities.reserve(n);
  std::set<std::string> titles;
  while (entities.size() < n) {
    Entity e;
    e.head = uniform_index(rng, kHeads.size());
    e.type = uniform_index(rng, 2);
    e.modifier = std::string(kModifiers[uniform_index(rng, kModifiers.size())]);
    e.code = std::string(1, kCodeLetters[uniform_index(rng, kCodeLetters.size())]) +
             std::to_string(10 + uniform_index(rng, 990));
    e.brand = std::string(kBrands[uniform_index(rng, kBrands.size())]);
    e.year = std::to_string(1990 + uniform_index(rng, 33));
    e.price = "$" + std::to_string(5 + uniform_index(rng, 995)) + "." +
              std::to_string(10 + uniform_index(rng, 90));
    const std::string key = std::string(kHeads[e.head].word) + " " + e.modifier + " " + e.code;
    if (titles.insert(key).second) entities.push_back(std::move(e));
  }

  SyntheticDataset out;
  const std::vector<std::string> schema{"title", "brand", "year", "price"};
  std::vector<Record> left_rows;
  std::vector<Record> right_rows;
  for (std::size_t i = 0; i < n; ++i) {
    const Entity& e = entities[i];
    const auto& types = kHeads[e.head].types;
    auto a = render(e, std::to_string(i), false, spec, rng, types[e.type]);
    auto b = render(e, std::to_string(i), true, spec, rng, types[e.type]);
    RenderedRow twin = b;
    twin.record.entry_id = std::to_string(n + i);
    twin.type = std::string(types[1 - e.type]);
    annotate(a, "tableA", out.gold);
    annotate(b, "tableB", out.gold);
    annotate(twin, "tableB", out.gold);
    left_rows.push_back(std::move(a.record));
    right_rows.push_back(std::move(b.record));
    right_rows.push_back(std::move(twin.record));
  }
  std::stable_sort(right_rows.begin(), right_rows.end(),
                   [](const Record& x, const Record& y) { return std::stoul(x.entry_id) < std::stoul(y.entry_id); });
  out.left = Table("tableA", schema, std::move(left_rows));
  out.right = Table("tableB", schema, std::move(right_rows));

  const std::array<std::pair<std::string, std::string>, 4> column_types = {{
      {"title", "product"}, {"brand", "manufacturer"}, {"year", "year"}, {"price", "price"}}};
  for (const auto* table : {"tableA", "tableB"}) {
    for (const auto& [col, type] : column_types) out.gold.set_column_type({table, col, type, 1.0});
  }

  // An entity's positive and twin pairs land in the same split; no entity
  // appears as a positive in two splits.
  std::vector<std::size_t> pool(n);
  for (std::size_t i = 0; i < n; ++i) pool[i] = i;
  shuffle(std::span<std::size_t>(pool), rng);
  std::size_t next = 0;
  std::set<std::pair<std::size_t, std::size_t>> easy_used;

  const std::array<std::pair<Split, std::size_t>, 3> plan = {
      {{Split::Train, spec.train_pairs}, {Split::Valid, spec.valid_pairs}, {Split::Test, spec.test_pairs}}};
  for (const auto& [split, count] : plan) {
    LabeledPairSet set;
    set.split = split;
    const auto positives = static_cast<std::size_t>(std::llround(spec.match_rate * static_cast<double>(count)));
    const std::size_t negatives = count - positives;
    const auto hard = static_cast<std::size_t>(std::llround(spec.hard_negative_rate * static_cast<double>(negatives)));
    if (next + positives > n || hard > positives) {
      throw DomainError("synthetic spec: " + std::to_string(n) + " entities cannot supply " +
                        std::to_string(positives) + " positive and " + std::to_string(hard) +
                        " twin pairs for split " + std::string(split_name(split)));
    }
    std::vector<std::size_t> drawn(pool.begin() + static_cast<std::ptrdiff_t>(next),
                                   pool.begin() + static_cast<std::ptrdiff_t>(next + positives));
    next += positives;
    for (std::size_t i : drawn) set.pairs.push_back({std::to_string(i), std::to_string(i), 1});
    for (std::size_t k = 0; k < hard; ++k) {
      set.pairs.push_back({std::to_string(drawn[k]), std::to_string(n + drawn[k]), 0});
    }
    const std::size_t easy = negatives - hard;
    if (easy > 0 && n < 2) throw DomainError("synthetic spec: easy negatives need two entities");
    if (easy_used.size() + easy > n * (n - 1)) throw DomainError("synthetic spec: too many easy negatives");
    for (std::size_t k = 0; k < easy;) {
      const std::size_t i = uniform_index(rng, n);
      const std::size_t j = uniform_index(rng, n);
      if (i == j || !easy_used.emplace(i, j).second) continue;
      set.pairs.push_back({std::to_string(i), std::to_string(j), 0});
      ++k;
    }
    shuffle(std::span<LabeledPair>(set.pairs), rng);
    out.splits.push_back(std::move(set));
  }

  for (const auto& brand : kBrands) out.gazetteer.add(brand, "ORG");
  for (const auto& head : kHeads) out.gazetteer.add(head.word, std::string(head.types[0]));
  for (const auto& brand : kBrands) out.gazetteer_tsv += std::string(brand) + "\tORG\n";
  for (const auto& head : kHeads) out.gazetteer_tsv += std::string(head.word) + "\t" + std::string(head.types[0]) + "\n";
  return out;
}

}  // namespace kaer
