#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kaer/config.hpp"
#include "kaer/constrained.hpp"
#include "kaer/encoder.hpp"
#include "kaer/knowledge.hpp"
#include "kaer/metrics.hpp"
#include "kaer/serializer.hpp"
#include "kaer/table.hpp"

namespace kaer {

// ---- in-memory building blocks ----------------------------------------------------

/// Knowledge sources for one run.
struct KnowledgeOptions {
  bool rule_typer = false;
  const Gazetteer* gazetteer = nullptr;
  const AnnotationStore* external = nullptr;
  std::optional<DittoMode> ditto;
};

/// Combines the enabled sources. External column types override inferred
/// ones; external mentions replace overlapping gazetteer mentions. The Ditto
/// filter, when set, is applied to every mention last.
AnnotationStore collect_annotations(const Table& left, const Table& right, const KnowledgeOptions& options);

/// Serializes (and for constrained tuning, assembles) every pair. Output order
/// follows `pairs`; `threads` only changes how the work is split.
std::vector<InjectedSequence> encode_pairs(const Table& left, const Table& right, const LabeledPairSet& pairs,
                                           const AnnotationStore& store, PromptMode mode,
                                           const Tokenizer& tokenizer, std::size_t max_len, int threads = 1);

/// Batch-file lines for the same pairs (see batch_io.hpp).
std::vector<std::string> encode_pair_lines(const Table& left, const Table& right, const LabeledPairSet& pairs,
                                           const AnnotationStore& store, PromptMode mode,
                                           const Tokenizer& tokenizer, std::size_t max_len, int threads = 1);

struct TrainOptions {
  std::int64_t batch_size = 16;
  std::int64_t epochs = 10;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  int threads = 1;
  bool float32 = false;
};

struct StepLog {
  std::int64_t step = 0;
  std::int64_t epoch = 0;
  double loss = 0;
};

struct TrainResult {
  EncoderParams<double> params;
  std::vector<StepLog> log;
};

/// Adam over seeded shuffles of `examples`; ceil(n / batch_size) steps per
/// epoch. On NumericalError the partial result is passed to `on_abort`
/// before the error propagates.
TrainResult train_model(std::span<const InjectedSequence> examples, const EncoderConfig& config,
                        const TrainOptions& options,
                        const std::function<void(const TrainResult&)>& on_abort = {});

Matrix<double> predict_probs(const EncoderParams<double>& params, std::span<const InjectedSequence> examples,
                             std::int64_t batch_size, int threads = 1);

Metrics evaluate_model(const EncoderParams<double>& params, std::span<const InjectedSequence> examples,
                       std::int64_t batch_size, int threads = 1);

// ---- file-based runs ---------------------------------------------------------------

/// Loads both tables and runs the knowledge sources enabled in `cfg`.
AnnotationStore run_annotate(const RunConfig& cfg);

struct PrepareResult {
  std::filesystem::path manifest;
  std::string vocab_hash;
  std::vector<Split> splits;
};

/// Writes vocab.tsv, annotations.jsonl, <split>.jsonl and manifest.json
/// under cfg.out_dir.
PrepareResult run_prepare(const RunConfig& cfg);

struct TrainRunResult {
  std::filesystem::path checkpoint;
  std::filesystem::path loss_log;
  std::int64_t steps = 0;
  double final_loss = 0;
};

/// Trains on the prepared train split; writes checkpoint.bin and loss_log.tsv.
TrainRunResult run_train(const RunConfig& cfg);

/// Scores a prepared split with the run's checkpoint and writes
/// metrics_<split>.json. Throws IncompatibleArtifactsError when the split was
/// prepared with a different vocabulary than the checkpoint.
Metrics run_evaluate(const RunConfig& cfg, Split split);

nlohmann::json metrics_json(const Metrics& m);

struct CompareResult {
  Metrics a;
  Metrics b;
  TTestResult ttest;
};

/// Prepares, trains and evaluates both configurations, then runs the paired
/// t-test on their per-example correctness.
CompareResult run_compare(const RunConfig& a, const RunConfig& b, Split split);

nlohmann::json compare_json(const CompareResult& r);

}  // namespace kaer
