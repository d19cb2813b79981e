#include "kaer/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <thread>

#include "kaer/batch_io.hpp"
#include "kaer/checkpoint.hpp"
#include "kaer/errors.hpp"
#include "kaer/rng.hpp"

namespace kaer {

using nlohmann::json;

namespace {

template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  const std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(static_cast<std::size_t>(threads), n));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = n * w / workers; i < n * (w + 1) / workers; ++i) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t x = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void require_file(const std::filesystem::path& path, const std::string& what) {
  if (path.empty()) throw DataError(what + " is not configured");
  if (!std::filesystem::exists(path)) throw DataError("missing dataset path: " + path.string());
}

json read_manifest(const RunConfig& cfg) {
  const auto path = cfg.out_dir / "manifest.json";
  if (!std::filesystem::exists(path)) {
    throw DataError("no manifest at " + path.string() + "; run prepare first");
  }
  try {
    return json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw FormatError("manifest: " + std::string(e.what()));
  }
}

}  // namespace

// ---- in-memory ---------------------------------------------------------------------

AnnotationStore collect_annotations(const Table& left, const Table& right, const KnowledgeOptions& options) {
  AnnotationStore store;
  for (const Table* t : {&left, &right}) {
    if (options.rule_typer) {
      for (auto& a : infer_column_types(*t)) store.set_column_type(std::move(a));
    }
    if (options.gazetteer) {
      for (auto& m : link_entities(*t, *options.gazetteer)) store.add_mention(std::move(m));
    }
  }
  if (options.external) {
    for (const auto& a : options.external->column_types()) store.set_column_type(a);
    for (const auto& m : options.external->all_mentions()) store.replace_mention(m);
  }
  if (options.ditto) {
    auto kept = ditto_inject(store.all_mentions(), *options.ditto);
    store.clear_mentions();
    for (auto& m : kept) store.add_mention(std::move(m));
  }
  return store;
}

namespace {

template <typename Fn>
void for_each_pair(const Table& left, const Table& right, const LabeledPairSet& pairs, const AnnotationStore& store,
                   PromptMode mode, const Tokenizer& tokenizer, std::size_t max_len, int threads, Fn&& fn) {
  parallel_for(pairs.pairs.size(), threads, [&](std::size_t i) {
    const auto& p = pairs.pairs[i];
    InputSequence seq = serialize_pair(left.at(p.left_id), left.name(), right.at(p.right_id), right.name(), store,
                                       mode, tokenizer, max_len, p.label);
    fn(i, seq);
  });
}

}  // namespace

std::vector<InjectedSequence> encode_pairs(const Table& left, const Table& right, const LabeledPairSet& pairs,
                                           const AnnotationStore& store, PromptMode mode,
                                           const Tokenizer& tokenizer, std::size_t max_len, int threads) {
  std::vector<InjectedSequence> out(pairs.pairs.size());
  for_each_pair(left, right, pairs, store, mode, tokenizer, max_len, threads, [&](std::size_t i, const InputSequence& seq) {
    out[i] = is_template(mode) ? as_plain(seq) : assemble(seq, max_len);
  });
  return out;
}

std::vector<std::string> encode_pair_lines(const Table& left, const Table& right, const LabeledPairSet& pairs,
                                           const AnnotationStore& store, PromptMode mode,
                                           const Tokenizer& tokenizer, std::size_t max_len, int threads) {
  std::vector<std::string> out(pairs.pairs.size());
  for_each_pair(left, right, pairs, store, mode, tokenizer, max_len, threads, [&](std::size_t i, const InputSequence& seq) {
    if (is_template(mode)) {
      out[i] = encode_batch_line(seq, nullptr);
    } else {
      const InjectedSequence injected = assemble(seq, max_len);
      out[i] = encode_batch_line(seq, &injected);
    }
  });
  return out;
}

namespace {

template <typename Scalar>
TrainResult train_typed(std::span<const InjectedSequence> examples, const EncoderConfig& config,
                        const TrainOptions& options, const std::function<void(const TrainResult&)>& on_abort) {
  if (options.batch_size <= 0) throw DomainError("batch_size must be positive");
  EncoderParams<Scalar> params = EncoderParams<double>::initialize(config).template cast<Scalar>();
  AdamState<Scalar> state = AdamState<Scalar>::initialize(config);
  TrainResult result;
  const std::size_t n = examples.size();
  std::vector<std::size_t> order(n);
  std::int64_t step = 0;
  for (std::int64_t epoch = 0; epoch < options.epochs && n > 0; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(mix(options.seed, static_cast<std::uint64_t>(epoch)));
    shuffle(std::span<std::size_t>(order), rng);
    for (std::size_t begin = 0; begin < n; begin += static_cast<std::size_t>(options.batch_size)) {
      const std::size_t end = std::min(n, begin + static_cast<std::size_t>(options.batch_size));
      std::vector<InjectedSequence> chunk;
      chunk.reserve(end - begin);
      for (std::size_t i = begin; i < end; ++i) chunk.push_back(examples[order[i]]);
      const Batch batch = make_batch(chunk);
      ForwardOptions fo;
      fo.train = true;
      fo.dropout_seed = mix(options.seed ^ 0xd20f, static_cast<std::uint64_t>(step));
      fo.threads = options.threads;
      try {
        const Scalar l = train_step(batch, params, state, options.lr, fo);
        result.log.push_back({step, epoch, static_cast<double>(l)});
      } catch (const NumericalError&) {
        if (on_abort) {
          result.params = params.template cast<double>();
          on_abort(result);
        }
        throw;
      }
      ++step;
    }
  }
  result.params = params.template cast<double>();
  return result;
}

}  // namespace

TrainResult train_model(std::span<const InjectedSequence> examples, const EncoderConfig& config,
                        const TrainOptions& options, const std::function<void(const TrainResult&)>& on_abort) {
  return options.float32 ? train_typed<float>(examples, config, options, on_abort)
                         : train_typed<double>(examples, config, options, on_abort);
}

Matrix<double> predict_probs(const EncoderParams<double>& params, std::span<const InjectedSequence> examples,
                             std::int64_t batch_size, int threads) {
  if (batch_size <= 0) throw DomainError("batch_size must be positive");
  Matrix<double> probs(static_cast<Eigen::Index>(examples.size()), 2);
  ForwardOptions fo;
  fo.threads = threads;
  for (std::size_t begin = 0; begin < examples.size(); begin += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(examples.size(), begin + static_cast<std::size_t>(batch_size));
    const Batch batch = make_batch(examples.subspan(begin, end - begin));
    probs.middleRows(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(end - begin)) =
        forward(batch, params, fo);
  }
  return probs;
}

Metrics evaluate_model(const EncoderParams<double>& params, std::span<const InjectedSequence> examples,
                       std::int64_t batch_size, int threads) {
  const Matrix<double> probs = predict_probs(params, examples, batch_size, threads);
  std::vector<int> labels;
  labels.reserve(examples.size());
  for (const auto& e : examples) labels.push_back(e.label.value_or(0));
  const auto predictions = predict(probs);
  return compute_metrics(predictions, labels);
}

// ---- file-based ------------------------------------------------------------------------

namespace {

AnnotationStore knowledge_for(const RunConfig& cfg, const Table& left, const Table& right, Gazetteer& gazetteer,
                              json& sources) {
  KnowledgeOptions knowledge;
  knowledge.rule_typer = cfg.rule_typer;
  AnnotationStore external;
  sources = {{"rule_typer", cfg.rule_typer}, {"ditto_mode", cfg.ditto_mode}};
  if (!cfg.gazetteer.empty()) {
    require_file(cfg.gazetteer, "gazetteer");
    const std::string text = read_file(cfg.gazetteer);
    gazetteer = Gazetteer::from_tsv(text);
    knowledge.gazetteer = &gazetteer;
    sources["gazetteer"] = {{"path", cfg.gazetteer.string()}, {"hash", fnv1a_hex(text)}};
  }
  if (!cfg.annotations.empty()) {
    require_file(cfg.annotations, "annotations");
    const std::string text = read_file(cfg.annotations);
    external = annotations_from_jsonl(text);
    knowledge.external = &external;
    sources["annotations"] = {{"path", cfg.annotations.string()}, {"hash", fnv1a_hex(text)}};
  }
  if (cfg.ditto_mode != "off") knowledge.ditto = parse_ditto_mode(cfg.ditto_mode);
  return collect_annotations(left, right, knowledge);
}

}  // namespace

AnnotationStore run_annotate(const RunConfig& cfg) {
  require_file(cfg.table_a, "table_a");
  require_file(cfg.table_b, "table_b");
  Gazetteer gazetteer;
  json sources;
  return knowledge_for(cfg, load_table(cfg.table_a), load_table(cfg.table_b), gazetteer, sources);
}

PrepareResult run_prepare(const RunConfig& cfg) {
  require_file(cfg.table_a, "table_a");
  require_file(cfg.table_b, "table_b");
  const Table left = load_table(cfg.table_a);
  const Table right = load_table(cfg.table_b);

  std::vector<LabeledPairSet> splits;
  for (Split s : {Split::Train, Split::Valid, Split::Test}) {
    const auto path = cfg.split_path(s);
    if (path.empty()) continue;
    const bool explicit_path = !(s == Split::Train ? cfg.train : s == Split::Valid ? cfg.valid : cfg.test).empty();
    if (!std::filesystem::exists(path)) {
      if (explicit_path) throw DataError("missing dataset path: " + path.string());
      continue;
    }
    splits.push_back(load_pairs(path, left, right, s));
  }
  if (splits.empty()) throw DataError("no data split found (train/valid/test)");

  json sources;
  Gazetteer gazetteer;
  const AnnotationStore store = knowledge_for(cfg, left, right, gazetteer, sources);

  const std::vector<Table> corpus{left, right};
  std::vector<std::string> labels = store.labels();
  for (auto& t : gazetteer.types()) labels.push_back(std::move(t));
  const Tokenizer tokenizer = build_vocab(corpus, static_cast<std::size_t>(cfg.min_count), labels);
  const std::string vocab_text = tokenizer.to_tsv();
  const std::string vocab_hash = fnv1a_hex(vocab_text);
  const std::string annotations_text = export_annotations(store);

  std::filesystem::create_directories(cfg.out_dir);
  write_file(cfg.out_dir / "vocab.tsv", vocab_text);
  write_file(cfg.out_dir / "annotations.jsonl", annotations_text);

  PrepareResult result;
  result.vocab_hash = vocab_hash;
  json split_info = json::object();
  for (const auto& set : splits) {
    const auto lines = encode_pair_lines(left, right, set, store, cfg.prompt_mode, tokenizer,
                                         static_cast<std::size_t>(cfg.max_len), cfg.threads);
    std::string text;
    for (const auto& l : lines) {
      text += l;
      text.push_back('\n');
    }
    const std::string file = std::string(split_name(set.split)) + ".jsonl";
    write_file(cfg.out_dir / file, text);
    split_info[std::string(split_name(set.split))] = {
        {"file", file}, {"hash", fnv1a_hex(text)}, {"pairs", set.pairs.size()}, {"positives", set.positives()}};
    result.splits.push_back(set.split);
  }

  json manifest = {{"version", 1},
                   {"vocab_hash", vocab_hash},
                   {"vocab_size", tokenizer.size()},
                   {"prompt_mode", std::string(prompt_mode_name(cfg.prompt_mode))},
                   {"max_len", cfg.max_len},
                   {"tables", {{"a", cfg.table_a.string()}, {"b", cfg.table_b.string()}}},
                   {"annotation_sources", std::move(sources)},
                   {"annotations_hash", fnv1a_hex(annotations_text)},
                   {"splits", std::move(split_info)}};
  result.manifest = cfg.out_dir / "manifest.json";
  write_file(result.manifest, manifest.dump(2) + "\n");
  return result;
}

TrainRunResult run_train(const RunConfig& cfg) {
  const json manifest = read_manifest(cfg);
  const Tokenizer tokenizer = Tokenizer::from_tsv(read_file(cfg.out_dir / "vocab.tsv"));
  if (fnv1a_hex(tokenizer.to_tsv()) != manifest.at("vocab_hash").get<std::string>()) {
    throw IncompatibleArtifactsError("vocab.tsv does not match the manifest's vocabulary hash");
  }
  if (!manifest.at("splits").contains("train")) throw DataError("prepared data has no train split");
  const auto examples = read_batch_file(cfg.out_dir / "train.jsonl");
  EncoderConfig ec = cfg.encoder_config(static_cast<std::int64_t>(tokenizer.size()));
  ec.max_position = std::max<std::int64_t>(ec.max_position, manifest.at("max_len").get<std::int64_t>());

  TrainOptions options;
  options.batch_size = cfg.batch_size;
  options.epochs = cfg.epochs;
  options.lr = cfg.lr;
  options.seed = cfg.seed;
  options.threads = cfg.threads;
  options.float32 = cfg.float32;

  TrainRunResult out;
  out.checkpoint = cfg.out_dir / "checkpoint.bin";
  out.loss_log = cfg.out_dir / "loss_log.tsv";
  CheckpointMeta meta;
  meta.vocab_hash = manifest.at("vocab_hash").get<std::string>();
  meta.prompt_mode = manifest.at("prompt_mode").get<std::string>();

  auto write_outputs = [&](const TrainResult& r) {
    std::string log = "step\tepoch\tloss\n";
    for (const auto& s : r.log) log += std::to_string(s.step) + "\t" + std::to_string(s.epoch) + "\t" + format_double(s.loss) + "\n";
    write_file(out.loss_log, log);
    meta.steps = static_cast<std::int64_t>(r.log.size());
    save_checkpoint(out.checkpoint, r.params, meta);
  };
  const TrainResult result = train_model(examples, ec, options, write_outputs);
  write_outputs(result);
  out.steps = static_cast<std::int64_t>(result.log.size());
  out.final_loss = result.log.empty() ? 0.0 : result.log.back().loss;
  return out;
}

json metrics_json(const Metrics& m) {
  return {{"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}, {"n", m.n()}};
}

Metrics run_evaluate(const RunConfig& cfg, Split split) {
  const json manifest = read_manifest(cfg);
  const auto ck_path = cfg.out_dir / "checkpoint.bin";
  if (!std::filesystem::exists(ck_path)) throw DataError("no checkpoint at " + ck_path.string() + "; run train first");
  const Checkpoint ck = load_checkpoint(ck_path);
  const auto hash = manifest.at("vocab_hash").get<std::string>();
  if (ck.meta.vocab_hash != hash) {
    throw IncompatibleArtifactsError("checkpoint vocabulary " + ck.meta.vocab_hash +
                                     " does not match prepared data " + hash);
  }
  const std::string name(split_name(split));
  if (!manifest.at("splits").contains(name)) throw DataError("prepared data has no " + name + " split");
  const auto examples = read_batch_file(cfg.out_dir / (name + ".jsonl"));
  const Metrics m = evaluate_model(ck.params, examples, cfg.batch_size, cfg.threads);
  json full = metrics_json(m);
  full["split"] = name;
  full["tp"] = m.tp;
  full["fp"] = m.fp;
  full["fn"] = m.fn;
  full["tn"] = m.tn;
  full["per_example_correct"] = m.per_example_correct;
  write_file(cfg.out_dir / ("metrics_" + name + ".json"), full.dump() + "\n");
  return m;
}

CompareResult run_compare(const RunConfig& a, const RunConfig& b, Split split) {
  CompareResult r;
  run_prepare(a);
  run_train(a);
  r.a = run_evaluate(a, split);
  run_prepare(b);
  run_train(b);
  r.b = run_evaluate(b, split);
  r.ttest = paired_ttest(r.a.per_example_correct, r.b.per_example_correct);
  return r;
}

json compare_json(const CompareResult& r) {
  return {{"f1_a", r.a.f1},
          {"f1_b", r.b.f1},
          {"t", r.ttest.t},
          {"df", r.ttest.df},
          {"p", r.ttest.p},
          {"sig_05", r.ttest.p < 0.05},
          {"sig_01", r.ttest.p < 0.01}};
}

}  // namespace kaer
