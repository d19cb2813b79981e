#include "kaer/batch_io.hpp"

#include <cstdio>

#include "json.hpp"

#include "kaer/errors.hpp"
#include "kaer/table.hpp"

namespace kaer {

using nlohmann::json;

std::string encode_batch_line(const InputSequence& seq, const InjectedSequence* injected) {
  json sites = json::array();
  for (const auto& site : seq.combined_sites()) {
    sites.push_back({{"head", {site.head.start, site.head.end}},
                     {"know", site.knowledge},
                     {"kind", site.kind == SiteKind::Column ? "column" : "entity"}});
  }
  json line = {{"tokens", seq.combined}, {"segments", seq.segments}, {"sites", std::move(sites)}};
  if (seq.label) line["label"] = *seq.label;
  if (injected) {
    line["soft_pos"] = injected->soft_positions;
    line["visible_rows"] = visible_rows_hex(injected->visible);
  }
  return line.dump();
}

InjectedSequence decode_batch_line(std::string_view text) {
  json line;
  try {
    line = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("batch line: ") + e.what());
  }
  try {
    InputSequence seq;
    seq.combined = line.at("tokens").get<std::vector<TokenId>>();
    seq.segments = line.at("segments").get<std::vector<std::int32_t>>();
    if (seq.segments.size() != seq.combined.size()) throw FormatError("batch line: segments/tokens length mismatch");
    if (line.contains("label")) {
      const int y = line.at("label").get<int>();
      if (y != 0 && y != 1) throw FormatError("batch line: label must be 0 or 1");
      seq.label = y;
    }
    if (!line.contains("soft_pos")) return as_plain(seq);

    std::vector<InjectionSite> sites;
    for (const auto& s : line.at("sites")) {
      const auto head = s.at("head").get<std::vector<std::size_t>>();
      if (head.size() != 2) throw FormatError("batch line: head must be [start, end]");
      sites.push_back({{head[0], head[1]},
                       s.at("know").get<std::vector<TokenId>>(),
                       s.at("kind").get<std::string>() == "column" ? SiteKind::Column : SiteKind::Entity});
    }
    const InjectionTree tree = build_injection_tree(seq.combined, std::move(sites));
    FlatSequence flat = flatten_with_soft_positions(tree);
    InjectedSequence out;
    out.soft_positions = line.at("soft_pos").get<std::vector<std::int32_t>>();
    out.visible = visible_from_hex(line.at("visible_rows").get<std::vector<std::string>>());
    if (out.soft_positions.size() != flat.tokens.size() ||
        static_cast<std::size_t>(out.visible.rows()) != flat.tokens.size()) {
      throw FormatError("batch line: soft_pos/visible_rows do not match the injection tree");
    }
    for (std::size_t i = 0; i < flat.tokens.size(); ++i) {
      const std::size_t anchor = flat.trunk_mask[i] ? flat.origin[i] : tree.branches[flat.origin[i]].head.start;
      out.segments.push_back(seq.segments[anchor]);
    }
    out.tokens = std::move(flat.tokens);
    out.trunk_mask = std::move(flat.trunk_mask);
    out.label = seq.label;
    return out;
  } catch (const json::exception& e) {
    throw FormatError(std::string("batch line: ") + e.what());
  }
}

std::vector<InjectedSequence> read_batch_file(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  std::vector<InjectedSequence> out;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    const std::string_view line(text.data() + pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(decode_batch_line(line));
    } catch (const DataError& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace kaer
