#include <cstdlib>
#include <fstream>
#include <sstream>

#include "doctest.h"

#include "kaer/batch_io.hpp"
#include "kaer/checkpoint.hpp"
#include "kaer/errors.hpp"
#include "kaer/pipeline.hpp"
#include "kaer/synthetic.hpp"

using namespace kaer;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("kaer_pipeline_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

/// Writes a small synthetic dataset in Magellan layout.
void write_dataset(const fs::path& dir, std::uint64_t seed = 1) {
  SyntheticSpec spec;
  spec.entities = 40;
  spec.train_pairs = 24;
  spec.test_pairs = 12;
  const auto d = generate_synthetic(spec, seed);
  write_table(d.left, dir / "tableA.csv");
  write_table(d.right, dir / "tableB.csv");
  write_pairs(d.splits[0], dir / "train.csv");
  write_pairs(d.splits[2], dir / "test.csv");
  write_file(dir / "gold_annotations.jsonl", export_annotations(d.gold));
  write_file(dir / "gazetteer.tsv", d.gazetteer_tsv);
}

RunConfig small_run(const fs::path& data, const fs::path& out, PromptMode mode = PromptMode::Space) {
  RunConfig c = RunConfig::resolve(json{{"data_dir", data.string()},
                                        {"out_dir", out.string()},
                                        {"profile", "desk"},
                                        {"d_model", 16},
                                        {"d_ff", 32},
                                        {"n_layers", 1},
                                        {"epochs", 2},
                                        {"batch_size", 8},
                                        {"seed", 5}},
                                   json(), std::nullopt);
  c.prompt_mode = mode;
  return c;
}

std::vector<json> lines_of(const fs::path& path) {
  std::vector<json> out;
  std::istringstream in(read_file(path));
  std::string line;
  while (std::getline(in, line)) out.push_back(json::parse(line));
  return out;
}

}  // namespace

TEST_CASE("collect annotations layers the sources") {
  const Table a("A", {"title", "year"}, {Record{"0", {{"title", "acme widget"}, {"year", "1999"}}}});
  const Table b("B", {"title", "year"}, {Record{"0", {{"title", "acme widget"}, {"year", "2001"}}}});
  Gazetteer g;
  g.add("acme", "ORG");
  g.add("widget", "PRODUCT");
  AnnotationStore external;
  external.set_column_type({"A", "year", "release", 1.0});
  external.add_mention({"A", "0", "title", 0, 2, "acme widget", "GPE"});

  KnowledgeOptions opts;
  opts.rule_typer = true;
  opts.gazetteer = &g;
  opts.external = &external;
  const AnnotationStore s = collect_annotations(a, b, opts);
  CHECK(s.column_type("A", "year")->predicted_type == "release");
  CHECK(s.column_type("B", "year")->predicted_type == "year");
  const auto ma = s.mentions("A", "0", "title");
  REQUIRE(ma.size() == 1);
  CHECK(ma[0]->entity_type == "GPE");
  CHECK(s.mentions("B", "0", "title").size() == 2);

  opts.ditto = DittoMode::Product;
  const AnnotationStore p = collect_annotations(a, b, opts);
  const auto all = p.all_mentions();
  REQUIRE(all.size() == 2);
  for (const auto& m : all) CHECK(m.entity_type == "PRODUCT");
}

TEST_CASE("encoding pairs does not depend on the thread count") {
  SyntheticSpec spec;
  spec.entities = 30;
  spec.train_pairs = 20;
  spec.test_pairs = 0;
  const auto d = generate_synthetic(spec, 2);
  const std::vector<Table> corpus{d.left, d.right};
  const Tokenizer tok = build_vocab(corpus, 1, d.gold.labels());
  const auto one = encode_pair_lines(d.left, d.right, d.splits[0], d.gold, PromptMode::ConstrainedTuning, tok, 128, 1);
  const auto four = encode_pair_lines(d.left, d.right, d.splits[0], d.gold, PromptMode::ConstrainedTuning, tok, 128, 4);
  CHECK(one == four);
}

TEST_CASE("prepare writes batch files and a manifest") {
  const fs::path data = scratch("prepare_data");
  write_dataset(data);
  RunConfig cfg = small_run(data, scratch("prepare_slash"), PromptMode::Slash);
  cfg.annotations = data / "gold_annotations.jsonl";
  const auto r = run_prepare(cfg);
  CHECK(r.splits == std::vector<Split>{Split::Train, Split::Test});
  const json manifest = json::parse(read_file(r.manifest));
  CHECK(manifest.at("vocab_hash") == r.vocab_hash);
  CHECK(manifest.at("prompt_mode") == "slash");
  CHECK(manifest.at("annotation_sources").contains("annotations"));
  CHECK(manifest.at("splits").at("train").at("pairs") == 24);

  const Tokenizer tok = Tokenizer::from_tsv(read_file(cfg.out_dir / "vocab.tsv"));
  CHECK(fnv1a_hex(tok.to_tsv()) == r.vocab_hash);
  for (const auto& line : lines_of(cfg.out_dir / "train.jsonl")) {
    const auto tokens = line.at("tokens").get<std::vector<TokenId>>();
    CHECK(std::find(tokens.begin(), tokens.end(), tok.id("/")) != tokens.end());
    CHECK_FALSE(line.contains("soft_pos"));
  }

  const std::string before = read_file(r.manifest) + read_file(cfg.out_dir / "train.jsonl");
  run_prepare(cfg);
  CHECK(read_file(r.manifest) + read_file(cfg.out_dir / "train.jsonl") == before);
}

TEST_CASE("constrained prepare lines carry soft positions") {
  const fs::path data = scratch("pct_data");
  write_dataset(data);
  RunConfig cfg = small_run(data, scratch("pct_out"), PromptMode::ConstrainedTuning);
  cfg.gazetteer = data / "gazetteer.tsv";
  cfg.rule_typer = true;
  run_prepare(cfg);
  for (const auto& line : lines_of(cfg.out_dir / "test.jsonl")) {
    CHECK(line.contains("soft_pos"));
    CHECK(line.contains("visible_rows"));
    CHECK(line.at("sites").size() > 0);
  }
}

TEST_CASE("missing inputs name the offending path") {
  const fs::path data = scratch("missing_data");
  RunConfig cfg = small_run(data, scratch("missing_out"));
  try {
    run_prepare(cfg);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("tableA.csv") != std::string::npos);
  }
  write_dataset(data);
  cfg.gazetteer = data / "nope.tsv";
  CHECK_THROWS_WITH_AS(run_prepare(cfg), doctest::Contains("nope.tsv"), DataError);
  cfg.gazetteer.clear();
  CHECK_THROWS_AS(run_train(cfg), DataError);
}

TEST_CASE("zero epochs leave the initialization") {
  const fs::path data = scratch("zero_data");
  write_dataset(data);
  RunConfig cfg = small_run(data, scratch("zero_out"));
  cfg.epochs = 0;
  run_prepare(cfg);
  const auto r = run_train(cfg);
  CHECK(r.steps == 0);
  const Checkpoint ck = load_checkpoint(r.checkpoint);
  const Tokenizer tok = Tokenizer::from_tsv(read_file(cfg.out_dir / "vocab.tsv"));
  const auto init = EncoderParams<double>::initialize(cfg.encoder_config(static_cast<std::int64_t>(tok.size())));
  CHECK(encode_checkpoint(ck.params, ck.meta) == encode_checkpoint(init, ck.meta));
}

TEST_CASE("train and evaluate end to end") {
  const fs::path data = scratch("e2e_data");
  write_dataset(data);
  RunConfig cfg = small_run(data, scratch("e2e_out"));
  run_prepare(cfg);
  const auto r = run_train(cfg);
  CHECK(r.steps == 2 * 3);
  CHECK(std::isfinite(r.final_loss));
  const std::string log = read_file(r.loss_log);
  CHECK(log.rfind("step\tepoch\tloss\n", 0) == 0);
  CHECK(std::count(log.begin(), log.end(), '\n') == 7);
  const Metrics m = run_evaluate(cfg, Split::Test);
  CHECK(m.n() == 12);
  const json j = json::parse(read_file(cfg.out_dir / "metrics_test.json"));
  CHECK(j.at("n") == 12);
  CHECK(j.at("per_example_correct").size() == 12);
  const json short_form = metrics_json(m);
  CHECK(short_form.size() == 4);
  CHECK_THROWS_AS(run_evaluate(cfg, Split::Valid), DataError);
}

TEST_CASE("evaluation refuses a different vocabulary") {
  const fs::path data = scratch("vocab_data");
  write_dataset(data);
  RunConfig cfg = small_run(data, scratch("vocab_out"));
  cfg.epochs = 0;
  run_prepare(cfg);
  run_train(cfg);
  cfg.annotations = data / "gold_annotations.jsonl";
  cfg.prompt_mode = PromptMode::Slash;
  cfg.min_count = 2;
  run_prepare(cfg);
  CHECK_THROWS_AS(run_evaluate(cfg, Split::Test), IncompatibleArtifactsError);
}

TEST_CASE("comparing a configuration with itself is degenerate") {
  const fs::path data = scratch("cmp_data");
  write_dataset(data);
  RunConfig a = small_run(data, scratch("cmp_a"));
  RunConfig b = small_run(data, scratch("cmp_b"));
  CHECK_THROWS_AS(run_compare(a, b, Split::Test), DegenerateError);
}

#ifdef KAER_CLI_PATH
namespace {

struct CliResult {
  int code = 0;
  std::string out;
  std::string err;
};

CliResult cli(const std::string& args, const std::string& env = "") {
  const fs::path dir = fs::temp_directory_path() / "kaer_cli_io";
  fs::create_directories(dir);
  const std::string cmd = env + " \"" KAER_CLI_PATH "\" " + args + " >" + (dir / "out").string() + " 2>" +
                          (dir / "err").string();
  const int status = std::system(cmd.c_str());
  CliResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = read_file(dir / "out");
  r.err = read_file(dir / "err");
  return r;
}

}  // namespace

TEST_CASE("cli usage errors exit 1") {
  const auto r = cli("frobnicate");
  CHECK(r.code == 1);
  CHECK(r.err.find("prepare") != std::string::npos);
  CHECK(cli("").code == 1);
  CHECK(cli("train --epochs").code == 1);
  CHECK(cli("--help").code == 0);
}

TEST_CASE("cli data errors exit 2 with the path") {
  const fs::path out = scratch("cli_missing");
  const auto r = cli("prepare --data_dir " + (out / "absent").string() + " --out_dir " + out.string());
  CHECK(r.code == 2);
  CHECK(r.err.find("absent") != std::string::npos);
  CHECK(cli("prepare --config " + (out / "none.json").string()).code == 2);
  CHECK(cli("prepare --batch_size 0 --data_dir x").code == 2);
}

TEST_CASE("cli flag overrides equal config-file values") {
  const fs::path data = scratch("cli_data");
  CHECK(cli("synth --entities 40 --train_pairs 24 --test_pairs 12 --seed 1 --out_dir " + data.string()).code == 0);
  CHECK(fs::exists(data / "gold_annotations.jsonl"));
  const fs::path a = scratch("cli_flag");
  const fs::path b = scratch("cli_file");
  const std::string common = " --data_dir " + data.string() + " --profile desk --annotations " +
                             (data / "gold_annotations.jsonl").string();
  CHECK(cli("prepare --mode slash --out_dir " + a.string() + common).code == 0);
  write_file(b / "cfg.json", json{{"mode", "Slash"}}.dump());
  CHECK(cli("prepare --config " + (b / "cfg.json").string() + " --out_dir " + b.string() + common).code == 0);
  CHECK(read_file(a / "train.jsonl") == read_file(b / "train.jsonl"));
  CHECK(json::parse(read_file(a / "manifest.json")).at("prompt_mode") == "slash");
}

TEST_CASE("cli train, eval, annotate and compare") {
  const fs::path data = scratch("cli_run_data");
  CHECK(cli("synth --entities 40 --train_pairs 24 --test_pairs 12 --seed 2 --out_dir " + data.string()).code == 0);
  const fs::path run = scratch("cli_run");
  const std::string common = " --data_dir " + data.string() + " --out_dir " + run.string() +
                             " --profile desk --d_model 16 --d_ff 32 --n_layers 1 --epochs 1";
  CHECK(cli("prepare" + common).code == 0);
  CHECK(cli("train" + common).code == 0);
  const auto e = cli("eval --split test" + common);
  CHECK(e.code == 0);
  const json m = json::parse(e.out);
  CHECK(m.contains("precision"));
  CHECK(m.at("n") == 12);

  const auto ann = cli("annotate --rule_typer --data_dir " + data.string());
  CHECK(ann.code == 0);
  CHECK(ann.out.find("\"kind\":\"column_type\"") != std::string::npos);

  const fs::path cfgs = scratch("cli_cmp");
  const json base{{"data_dir", data.string()}, {"profile", "desk"}, {"d_model", 16}, {"d_ff", 32},
                  {"n_layers", 1},             {"epochs", 2},       {"seed", 3}};
  json ja = base, jb = base;
  ja["out_dir"] = (cfgs / "a").string();
  jb["out_dir"] = (cfgs / "b").string();
  jb["prompt_mode"] = "slash";
  jb["annotations"] = (data / "gold_annotations.jsonl").string();
  write_file(cfgs / "a.json", ja.dump());
  write_file(cfgs / "b.json", jb.dump());
  const auto c = cli("compare --a " + (cfgs / "a.json").string() + " --b " + (cfgs / "b.json").string() +
                     " --split test");
  if (c.code == 0) {
    const json r = json::parse(c.out);
    for (const char* key : {"f1_a", "f1_b", "t", "df", "p", "sig_05", "sig_01"}) CHECK(r.contains(key));
    CHECK(r.at("df") == 11);
  } else {
    // Identical correctness on both runs is possible at this size.
    CHECK(c.code == 2);
    CHECK(c.err.find("agree") != std::string::npos);
  }
}

TEST_CASE("KAER_SEED sits between the config file and flags") {
  const fs::path data = scratch("cli_seed_data");
  CHECK(cli("synth --entities 40 --train_pairs 24 --test_pairs 12 --out_dir " + data.string()).code == 0);
  const std::string common = " --data_dir " + data.string() + " --profile desk --d_model 16 --d_ff 32 --n_layers 1 "
                                                              "--epochs 1 --out_dir ";
  auto checkpoint_of = [&](const std::string& env, const std::string& extra, const std::string& name) {
    const fs::path out = scratch(name);
    CHECK(cli("prepare" + common + out.string()).code == 0);
    CHECK(cli("train" + common + out.string() + extra, env).code == 0);
    return read_file(out / "checkpoint.bin");
  };
  const auto env7 = checkpoint_of("KAER_SEED=7", "", "seed_env");
  const auto flag7 = checkpoint_of("", " --seed 7", "seed_flag");
  const auto env_then_flag = checkpoint_of("KAER_SEED=3", " --seed 7", "seed_both");
  const auto plain = checkpoint_of("", "", "seed_none");
  CHECK(env7 == flag7);
  CHECK(env_then_flag == flag7);
  CHECK(plain != flag7);
}
#endif
