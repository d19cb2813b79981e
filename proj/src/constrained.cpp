#include "kaer/constrained.hpp"

#include <algorithm>

#include "kaer/errors.hpp"

namespace kaer {

InjectionTree build_injection_tree(std::vector<TokenId> trunk, std::vector<InjectionSite> sites) {
  InjectionTree tree;
  tree.trunk = std::move(trunk);
  std::vector<TokenSpan> heads;
  for (auto& site : sites) {
    if (site.head.start >= site.head.end || site.head.end > tree.trunk.size()) {
      throw DomainError("injection head [" + std::to_string(site.head.start) + ", " +
                        std::to_string(site.head.end) + ") is outside a trunk of " +
                        std::to_string(tree.trunk.size()) + " tokens");
    }
    heads.push_back(site.head);
    tree.branches.push_back({site.head, std::move(site.knowledge)});
  }
  std::sort(heads.begin(), heads.end(),
            [](const TokenSpan& a, const TokenSpan& b) { return a.start < b.start; });
  for (std::size_t i = 1; i < heads.size(); ++i) {
    if (heads[i].start < heads[i - 1].end) throw OverlapError("injection heads overlap");
  }
  return tree;
}

InjectionTree build_injection_tree(const TokenSeq& seq) {
  return build_injection_tree(seq.tokens, seq.sites);
}

FlatSequence flatten_with_soft_positions(const InjectionTree& tree) {
  const std::size_t trunk_len = tree.trunk.size();
  std::vector<std::vector<std::size_t>> attached(trunk_len);
  std::size_t knowledge = 0;
  for (std::size_t b = 0; b < tree.branches.size(); ++b) {
    attached[tree.branches[b].head.end - 1].push_back(b);
    knowledge += tree.branches[b].knowledge.size();
  }

  FlatSequence flat;
  const std::size_t total = trunk_len + knowledge;
  flat.tokens.reserve(total);
  flat.soft_positions.reserve(total);
  flat.trunk_mask.reserve(total);
  flat.origin.reserve(total);
  for (std::size_t t = 0; t < trunk_len; ++t) {
    flat.tokens.push_back(tree.trunk[t]);
    flat.soft_positions.push_back(static_cast<std::int32_t>(t));
    flat.trunk_mask.push_back(1);
    flat.origin.push_back(t);
    for (std::size_t b : attached[t]) {
      const auto& know = tree.branches[b].knowledge;
      for (std::size_t k = 0; k < know.size(); ++k) {
        flat.tokens.push_back(know[k]);
        flat.soft_positions.push_back(static_cast<std::int32_t>(t + k + 1));
        flat.trunk_mask.push_back(0);
        flat.origin.push_back(b);
      }
    }
  }
  return flat;
}

VisibleMatrix build_visible_matrix(const InjectionTree& tree, std::size_t flat_len) {
  const FlatSequence flat = flatten_with_soft_positions(tree);
  if (flat.tokens.size() != flat_len) {
    throw DomainError("flat length " + std::to_string(flat_len) + " does not match the tree (" +
                      std::to_string(flat.tokens.size()) + ")");
  }
  const auto n = static_cast<Eigen::Index>(flat_len);
  VisibleMatrix visible = VisibleMatrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    visible(i, i) = 1;
    if (flat.trunk_mask[ui]) {
      for (Eigen::Index j = 0; j < n; ++j) {
        if (flat.trunk_mask[static_cast<std::size_t>(j)]) visible(i, j) = 1;
      }
      continue;
    }
    const Branch& branch = tree.branches[flat.origin[ui]];
    for (Eigen::Index j = 0; j < n; ++j) {
      const auto uj = static_cast<std::size_t>(j);
      const bool same_branch = !flat.trunk_mask[uj] && flat.origin[uj] == flat.origin[ui];
      const bool in_head = flat.trunk_mask[uj] && branch.head.contains(flat.origin[uj]);
      if (same_branch || in_head) {
        visible(i, j) = 1;
        visible(j, i) = 1;
      }
    }
  }
  return visible;
}

InjectedSequence assemble(const InputSequence& seq, std::size_t max_len) {
  if (seq.mode != PromptMode::ConstrainedTuning) {
    throw DomainError("assemble requires a constrained-tuning sequence, got " +
                      std::string(prompt_mode_name(seq.mode)));
  }
  const InjectionTree tree = build_injection_tree(seq.combined, seq.combined_sites());
  FlatSequence flat = flatten_with_soft_positions(tree);
  if (flat.tokens.size() > max_len) {
    throw SequenceOverflowError("injected sequence has " + std::to_string(flat.tokens.size()) +
                                " tokens; max_len is " + std::to_string(max_len));
  }
  InjectedSequence out;
  out.visible = build_visible_matrix(tree, flat.tokens.size());
  out.segments.reserve(flat.tokens.size());
  for (std::size_t i = 0; i < flat.tokens.size(); ++i) {
    const std::size_t anchor = flat.trunk_mask[i] ? flat.origin[i] : tree.branches[flat.origin[i]].head.start;
    out.segments.push_back(seq.segments[anchor]);
  }
  out.tokens = std::move(flat.tokens);
  out.soft_positions = std::move(flat.soft_positions);
  out.trunk_mask = std::move(flat.trunk_mask);
  out.label = seq.label;
  return out;
}

InjectedSequence as_plain(const InputSequence& seq) {
  InjectedSequence out;
  const std::size_t n = seq.combined.size();
  out.tokens = seq.combined;
  out.segments = seq.segments;
  out.soft_positions.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.soft_positions[i] = static_cast<std::int32_t>(i);
  out.trunk_mask.assign(n, 1);
  out.visible = VisibleMatrix::Ones(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  out.label = seq.label;
  return out;
}

std::vector<std::string> visible_rows_hex(const VisibleMatrix& visible) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::vector<std::string> rows;
  const Eigen::Index n = visible.cols();
  rows.reserve(static_cast<std::size_t>(visible.rows()));
  for (Eigen::Index i = 0; i < visible.rows(); ++i) {
    std::string row;
    for (Eigen::Index c = 0; c < n; c += 4) {
      int nibble = 0;
      for (Eigen::Index b = 0; b < 4; ++b) {
        nibble <<= 1;
        if (c + b < n && visible(i, c + b)) nibble |= 1;
      }
      row.push_back(kDigits[nibble]);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

VisibleMatrix visible_from_hex(const std::vector<std::string>& rows) {
  const auto n = static_cast<Eigen::Index>(rows.size());
  VisibleMatrix visible = VisibleMatrix::Zero(n, n);
  const std::size_t width = (rows.size() + 3) / 4;
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::string& row = rows[static_cast<std::size_t>(i)];
    if (row.size() != width) throw FormatError("visible row " + std::to_string(i) + " has wrong width");
    for (std::size_t c = 0; c < width; ++c) {
      const char ch = row[c];
      int nibble = 0;
      if (ch >= '0' && ch <= '9') nibble = ch - '0';
      else if (ch >= 'a' && ch <= 'f') nibble = ch - 'a' + 10;
      else throw FormatError("visible row " + std::to_string(i) + ": bad hex digit");
      for (int b = 0; b < 4; ++b) {
        const auto j = static_cast<Eigen::Index>(4 * c + static_cast<std::size_t>(b));
        const bool bit = (nibble >> (3 - b)) & 1;
        if (j < n) visible(i, j) = bit ? 1 : 0;
        else if (bit) throw FormatError("visible row " + std::to_string(i) + ": bits past the end");
      }
    }
  }
  return visible;
}

}  // namespace kaer
