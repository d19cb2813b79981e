#pragma once

#include <cstdint>
#include <vector>

#include "kaer/knowledge.hpp"
#include "kaer/table.hpp"

namespace kaer {

/// Controls the synthetic product-like population. Every entity has an
/// ambiguous head word ("jaguar", "python", ...) whose entity type is latent;
/// table B holds a perturbed copy of each entity plus a "twin" whose text is
/// identical to that copy but whose head word has the other type.
struct SyntheticSpec {
  std::size_t entities = 300;
  double match_rate = 0.5;
  /// Share of negative pairs drawn as (entity, twin) instead of (entity, other).
  /// Twins come from the same split's positives, so it cannot exceed match_rate.
  double hard_negative_rate = 1.0;
  double typo_rate = 0.1;
  double abbreviation_rate = 0.2;
  double reorder_rate = 0.1;
  std::size_t train_pairs = 400;
  std::size_t valid_pairs = 0;
  std::size_t test_pairs = 100;
};

struct SyntheticDataset {
  Table left;
  Table right;
  std::vector<LabeledPairSet> splits;  // train, valid, test (possibly empty)
  AnnotationStore gold;
  Gazetteer gazetteer;
  /// The gazetteer as TSV, one surface per line.
  std::string gazetteer_tsv;
};

/// Deterministic for a fixed (spec, seed). Throws DomainError for zero
/// entities, rates outside [0, 1], or pair counts the population cannot
/// supply without repeating a pair.
SyntheticDataset generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

}  // namespace kaer
