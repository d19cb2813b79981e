#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "kaer/serializer.hpp"

namespace kaer {

/// Binary visibility between flattened tokens; 1 means the pair may attend.
using VisibleMatrix = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

struct Branch {
  TokenSpan head;
  std::vector<TokenId> knowledge;

  bool operator==(const Branch&) const = default;
};

/// Depth-one tree: the unaugmented sequence is the trunk, each piece of
/// injected knowledge a branch hanging off a span of trunk tokens.
struct InjectionTree {
  std::vector<TokenId> trunk;
  std::vector<Branch> branches;

  bool operator==(const InjectionTree&) const = default;
};

struct FlatSequence {
  std::vector<TokenId> tokens;
  std::vector<std::int32_t> soft_positions;
  std::vector<std::uint8_t> trunk_mask;
  /// Trunk index for trunk tokens, branch index for branch tokens.
  std::vector<std::size_t> origin;
};

struct InjectedSequence {
  std::vector<TokenId> tokens;
  std::vector<std::int32_t> soft_positions;
  VisibleMatrix visible;
  std::vector<std::int32_t> segments;
  std::vector<std::uint8_t> trunk_mask;
  std::optional<int> label;
};

/// Throws OverlapError for overlapping heads and DomainError for heads
/// outside the trunk.
InjectionTree build_injection_tree(std::vector<TokenId> trunk, std::vector<InjectionSite> sites);
InjectionTree build_injection_tree(const TokenSeq& seq);

/// Trunk order with each branch inserted after the last token of its head.
/// Trunk tokens keep their trunk index as soft position; the k-th token of a
/// branch (k >= 1) gets the head's last index plus k.
FlatSequence flatten_with_soft_positions(const InjectionTree& tree);

/// V[i][j] = 1 iff both tokens are trunk tokens, belong to the same branch,
/// or one is a branch token and the other lies in that branch's head.
VisibleMatrix build_visible_matrix(const InjectionTree& tree, std::size_t flat_len);

/// Runs tree building, flattening and visibility over the combined pair.
/// Branch tokens take the segment of their head. Requires ConstrainedTuning.
InjectedSequence assemble(const InputSequence& seq, std::size_t max_len);

/// Template-mode (or knowledge-free) sequence with hard positions and a
/// full visible matrix.
InjectedSequence as_plain(const InputSequence& seq);

/// Row bitsets as hex: character c holds columns 4c..4c+3, most significant
/// bit first.
std::vector<std::string> visible_rows_hex(const VisibleMatrix& visible);
VisibleMatrix visible_from_hex(const std::vector<std::string>& rows);

}  // namespace kaer
