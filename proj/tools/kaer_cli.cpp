#include <cstdlib>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "kaer/errors.hpp"
#include "kaer/pipeline.hpp"
#include "kaer/synthetic.hpp"

namespace {

using nlohmann::json;

constexpr const char* kConfigKeys[] = {
    "data_dir", "table_a",  "table_b",  "train",              "valid",   "test",       "out_dir",
    "prompt_mode", "rule_typer", "gazetteer", "annotations", "ditto_mode", "profile", "d_model",
    "n_heads",  "n_layers", "d_ff",     "dropout",            "segment_embeddings", "float32",
    "batch_size", "epochs", "lr",       "max_len",            "seed",    "threads",    "min_count"};

constexpr const char* kBoolKeys[] = {"rule_typer", "segment_embeddings", "float32"};

bool is_bool_key(const std::string& key) {
  for (const char* k : kBoolKeys) {
    if (key == k) return true;
  }
  return false;
}

/// Flag values for one subcommand, kept as strings so RunConfig::apply does the typing.
struct ConfigFlags {
  std::string config_file;
  std::map<std::string, std::string> values;
  std::string mode;

  void attach(CLI::App& app) {
    app.add_option("--config", config_file, "flat JSON config file");
    for (const char* key : kConfigKeys) {
      auto* opt = app.add_option(std::string("--") + key, values[key]);
      if (is_bool_key(key)) opt->expected(0, 1)->default_str("true");
    }
    app.add_option("--mode", mode, "alias of --prompt_mode");
  }

  json flags(const CLI::App& app) const {
    json out = json::object();
    for (const auto& [key, value] : values) {
      if (app.count("--" + key) == 0) continue;
      out[key] = value.empty() && is_bool_key(key) ? std::string("true") : value;
    }
    if (app.count("--mode") > 0) out["prompt_mode"] = mode;
    return out;
  }

  kaer::RunConfig resolve(const CLI::App& app, const std::string& file_override = {}) const {
    const std::string& file = file_override.empty() ? config_file : file_override;
    const json file_values = file.empty() ? json() : kaer::RunConfig::read_file(file);
    const char* env = std::getenv("KAER_SEED");
    return kaer::RunConfig::resolve(file_values, flags(app),
                                    env ? std::optional<std::string>(env) : std::nullopt);
  }
};

int run(int argc, char** argv) {
  CLI::App app{"Entity resolution with knowledge injection"};
  app.require_subcommand(1);

  ConfigFlags prepare_flags, train_flags, eval_flags, compare_flags, annotate_flags;

  auto* prepare = app.add_subcommand("prepare", "serialize splits into batch files");
  prepare_flags.attach(*prepare);

  auto* train = app.add_subcommand("train", "train on the prepared train split");
  train_flags.attach(*train);

  auto* eval = app.add_subcommand("eval", "score a prepared split");
  eval_flags.attach(*eval);
  std::string eval_split = "test";
  eval->add_option("--split", eval_split);

  auto* compare = app.add_subcommand("compare", "run two configs and a paired t-test");
  compare_flags.attach(*compare);
  std::string cfg_a, cfg_b, compare_split = "test";
  compare->add_option("--a", cfg_a, "config file of run A")->required();
  compare->add_option("--b", cfg_b, "config file of run B")->required();
  compare->add_option("--split", compare_split);

  auto* annotate = app.add_subcommand("annotate", "run the knowledge providers and emit JSONL");
  annotate_flags.attach(*annotate);
  std::string annotate_out;
  annotate->add_option("--output", annotate_out, "write here instead of standard output");

  auto* synth = app.add_subcommand("synth", "generate the synthetic ambiguous-entity dataset");
  kaer::SyntheticSpec spec;
  std::string synth_out = "synthetic";
  std::uint64_t synth_seed = 0;
  synth->add_option("--out_dir", synth_out);
  synth->add_option("--seed", synth_seed);
  synth->add_option("--entities", spec.entities);
  synth->add_option("--match_rate", spec.match_rate);
  synth->add_option("--hard_negative_rate", spec.hard_negative_rate);
  synth->add_option("--typo_rate", spec.typo_rate);
  synth->add_option("--abbreviation_rate", spec.abbreviation_rate);
  synth->add_option("--reorder_rate", spec.reorder_rate);
  synth->add_option("--train_pairs", spec.train_pairs);
  synth->add_option("--valid_pairs", spec.valid_pairs);
  synth->add_option("--test_pairs", spec.test_pairs);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return 1;
  }

  if (prepare->parsed()) {
    const auto cfg = prepare_flags.resolve(*prepare);
    const auto r = kaer::run_prepare(cfg);
    std::cout << json{{"manifest", r.manifest.string()}, {"vocab_hash", r.vocab_hash}}.dump() << "\n";
  } else if (train->parsed()) {
    const auto cfg = train_flags.resolve(*train);
    const auto r = kaer::run_train(cfg);
    std::cout << json{{"checkpoint", r.checkpoint.string()}, {"steps", r.steps}, {"final_loss", r.final_loss}}.dump()
              << "\n";
  } else if (eval->parsed()) {
    const auto cfg = eval_flags.resolve(*eval);
    const auto m = kaer::run_evaluate(cfg, kaer::parse_split(eval_split));
    std::cout << kaer::metrics_json(m).dump() << "\n";
  } else if (compare->parsed()) {
    const auto a = compare_flags.resolve(*compare, cfg_a);
    const auto b = compare_flags.resolve(*compare, cfg_b);
    if (a.out_dir == b.out_dir) {
      throw kaer::DomainError("configs A and B write to the same out_dir '" + a.out_dir.string() + "'");
    }
    const auto r = kaer::run_compare(a, b, kaer::parse_split(compare_split));
    std::cout << kaer::compare_json(r).dump() << "\n";
  } else if (annotate->parsed()) {
    const auto cfg = annotate_flags.resolve(*annotate);
    const std::string text = kaer::export_annotations(kaer::run_annotate(cfg));
    if (annotate_out.empty()) {
      std::cout << text;
    } else {
      kaer::write_file(annotate_out, text);
    }
  } else if (synth->parsed()) {
    const auto data = kaer::generate_synthetic(spec, synth_seed);
    const std::filesystem::path dir = synth_out;
    kaer::write_table(data.left, dir / "tableA.csv");
    kaer::write_table(data.right, dir / "tableB.csv");
    for (const auto& set : data.splits) {
      kaer::write_pairs(set, dir / (std::string(kaer::split_name(set.split)) + ".csv"));
    }
    kaer::write_file(dir / "gold_annotations.jsonl", kaer::export_annotations(data.gold));
    kaer::write_file(dir / "gazetteer.tsv", data.gazetteer_tsv);
    std::cout << json{{"out_dir", dir.string()}}.dump() << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const kaer::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 3;
  } catch (const kaer::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
