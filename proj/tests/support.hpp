#pragma once

#include <cstdint>
#include <vector>

#include "kaer/constrained.hpp"
#include "kaer/encoder.hpp"
#include "kaer/rng.hpp"

namespace kaer::testing {

/// Random depth-one injection tree over a trunk of `trunk_len` ids in [6, vocab).
inline InjectionTree random_tree(Rng& rng, std::size_t trunk_len, std::size_t max_branches, std::int32_t vocab) {
  InjectionTree tree;
  for (std::size_t i = 0; i < trunk_len; ++i) {
    tree.trunk.push_back(static_cast<TokenId>(6 + uniform_index(rng, static_cast<std::uint64_t>(vocab - 6))));
  }
  const std::size_t branches = uniform_index(rng, max_branches + 1);
  std::vector<std::uint8_t> used(trunk_len, 0);
  for (std::size_t b = 0; b < branches; ++b) {
    const std::size_t start = uniform_index(rng, trunk_len);
    const std::size_t len = 1 + uniform_index(rng, std::min<std::size_t>(3, trunk_len - start));
    bool free = true;
    for (std::size_t i = start; i < start + len; ++i) free = free && !used[i];
    if (!free) continue;
    for (std::size_t i = start; i < start + len; ++i) used[i] = 1;
    Branch br;
    br.head = {start, start + len};
    const std::size_t k = 1 + uniform_index(rng, 3);
    for (std::size_t j = 0; j < k; ++j) {
      br.knowledge.push_back(static_cast<TokenId>(6 + uniform_index(rng, static_cast<std::uint64_t>(vocab - 6))));
    }
    tree.branches.push_back(std::move(br));
  }
  return tree;
}

/// A constrained-tuning style example built from a random tree.
inline InjectedSequence random_example(Rng& rng, std::size_t trunk_len, std::int32_t vocab, int label) {
  const InjectionTree tree = random_tree(rng, trunk_len, 3, vocab);
  const FlatSequence flat = flatten_with_soft_positions(tree);
  InjectedSequence seq;
  seq.tokens = flat.tokens;
  seq.soft_positions = flat.soft_positions;
  seq.visible = build_visible_matrix(tree, flat.tokens.size());
  seq.trunk_mask = flat.trunk_mask;
  const std::size_t cut = trunk_len / 2;
  for (std::size_t i = 0; i < flat.tokens.size(); ++i) {
    seq.segments.push_back(flat.soft_positions[i] < static_cast<std::int32_t>(cut) ? 0 : 1);
  }
  seq.tokens[0] = 0;  // [CLS]
  seq.label = label;
  return seq;
}

}  // namespace kaer::testing
