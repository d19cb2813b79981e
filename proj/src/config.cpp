#include "kaer/config.hpp"

#include "kaer/errors.hpp"
#include "kaer/table.hpp"

namespace kaer {

using nlohmann::json;

namespace {

template <typename T>
T get(const json& v, const std::string& key) {
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (v.is_string()) {
        const auto s = v.get<std::string>();
        if (s == "true" || s == "1") return true;
        if (s == "false" || s == "0") return false;
        throw DomainError("'" + key + "' expects a boolean");
      }
    } else if constexpr (std::is_arithmetic_v<T>) {
      if (v.is_string()) {
        const auto s = v.get<std::string>();
        std::size_t used = 0;
        const double x = std::stod(s, &used);
        if (used != s.size()) throw DomainError("'" + key + "' expects a number");
        return static_cast<T>(x);
      }
    }
    return v.get<T>();
  } catch (const json::exception&) {
    throw DomainError("config key '" + key + "' has the wrong type");
  } catch (const std::invalid_argument&) {
    throw DomainError("config key '" + key + "' expects a number");
  }
}

}  // namespace

void RunConfig::apply(const json& values) {
  if (!values.is_object()) throw DomainError("config must be a flat JSON object");
  for (const auto& [key, v] : values.items()) {
    if (key == "data_dir") data_dir = get<std::string>(v, key);
    else if (key == "table_a") table_a = get<std::string>(v, key);
    else if (key == "table_b") table_b = get<std::string>(v, key);
    else if (key == "train") train = get<std::string>(v, key);
    else if (key == "valid") valid = get<std::string>(v, key);
    else if (key == "test") test = get<std::string>(v, key);
    else if (key == "out_dir") out_dir = get<std::string>(v, key);
    else if (key == "prompt_mode" || key == "mode") prompt_mode = parse_prompt_mode(get<std::string>(v, key));
    else if (key == "rule_typer") rule_typer = get<bool>(v, key);
    else if (key == "gazetteer") gazetteer = get<std::string>(v, key);
    else if (key == "annotations") annotations = get<std::string>(v, key);
    else if (key == "ditto_mode") {
      ditto_mode = get<std::string>(v, key);
      if (ditto_mode != "off" && ditto_mode != "general" && ditto_mode != "product") {
        throw DomainError("ditto_mode must be off, general or product");
      }
    } else if (key == "profile") apply_profile(get<std::string>(v, key));
    else if (key == "d_model") d_model = get<std::int64_t>(v, key);
    else if (key == "n_heads") n_heads = get<std::int64_t>(v, key);
    else if (key == "n_layers") n_layers = get<std::int64_t>(v, key);
    else if (key == "d_ff") d_ff = get<std::int64_t>(v, key);
    else if (key == "dropout") dropout = get<double>(v, key);
    else if (key == "segment_embeddings") segment_embeddings = get<bool>(v, key);
    else if (key == "float32") float32 = get<bool>(v, key);
    else if (key == "batch_size") batch_size = get<std::int64_t>(v, key);
    else if (key == "epochs") epochs = get<std::int64_t>(v, key);
    else if (key == "lr") lr = get<double>(v, key);
    else if (key == "max_len") max_len = get<std::int64_t>(v, key);
    else if (key == "seed") seed = get<std::uint64_t>(v, key);
    else if (key == "threads") threads = get<int>(v, key);
    else if (key == "min_count") min_count = get<std::int64_t>(v, key);
    else throw DomainError("unknown config key '" + key + "'");
  }
  if (batch_size <= 0) throw DomainError("batch_size must be positive");
  if (epochs < 0) throw DomainError("epochs must be non-negative");
  if (max_len < 8) throw DomainError("max_len must be at least 8");
  if (threads <= 0) throw DomainError("threads must be positive");
  if (min_count < 1) throw DomainError("min_count must be at least 1");
}

void RunConfig::apply_profile(const std::string& name) {
  if (name == "full") {
    batch_size = 64;
    epochs = 20;
    lr = 3e-5;
    max_len = 512;
  } else if (name == "desk") {
    batch_size = 16;
    epochs = 10;
    lr = 1e-3;
    max_len = 128;
  } else {
    throw DomainError("unknown profile '" + name + "'");
  }
  profile = name;
}

json RunConfig::to_json() const {
  return {{"data_dir", data_dir.string()},
          {"table_a", table_a.string()},
          {"table_b", table_b.string()},
          {"train", train.string()},
          {"valid", valid.string()},
          {"test", test.string()},
          {"out_dir", out_dir.string()},
          {"prompt_mode", std::string(prompt_mode_name(prompt_mode))},
          {"rule_typer", rule_typer},
          {"gazetteer", gazetteer.string()},
          {"annotations", annotations.string()},
          {"ditto_mode", ditto_mode},
          {"profile", profile},
          {"d_model", d_model},
          {"n_heads", n_heads},
          {"n_layers", n_layers},
          {"d_ff", d_ff},
          {"dropout", dropout},
          {"segment_embeddings", segment_embeddings},
          {"float32", float32},
          {"batch_size", batch_size},
          {"epochs", epochs},
          {"lr", lr},
          {"max_len", max_len},
          {"seed", seed},
          {"threads", threads},
          {"min_count", min_count}};
}

EncoderConfig RunConfig::encoder_config(std::int64_t vocab_size) const {
  EncoderConfig c;
  c.vocab_size = vocab_size;
  c.d_model = d_model;
  c.n_heads = n_heads;
  c.n_layers = n_layers;
  c.d_ff = d_ff;
  c.max_position = max_len;
  c.dropout_rate = dropout;
  c.segment_embeddings = segment_embeddings;
  c.seed = seed;
  c.validate();
  return c;
}

std::filesystem::path RunConfig::split_path(Split split) const {
  const std::filesystem::path& explicit_path = split == Split::Train ? train : split == Split::Valid ? valid : test;
  if (!explicit_path.empty()) return explicit_path;
  if (data_dir.empty()) return {};
  return data_dir / (std::string(split_name(split)) + ".csv");
}

RunConfig RunConfig::resolve(const json& file_values, const json& flag_values, std::optional<std::string> env_seed) {
  RunConfig cfg;
  // The profile is a base layer: explicit keys from the file or flags win over it.
  auto profile_of = [](const json& j) -> std::optional<std::string> {
    if (j.is_object() && j.contains("profile")) return get<std::string>(j.at("profile"), "profile");
    return std::nullopt;
  };
  if (auto p = profile_of(flag_values)) cfg.apply_profile(*p);
  else if (auto q = profile_of(file_values)) cfg.apply_profile(*q);

  auto without_profile = [](json j) {
    if (j.is_object()) j.erase("profile");
    return j;
  };
  if (!file_values.is_null()) cfg.apply(without_profile(file_values));
  if (env_seed && !env_seed->empty()) cfg.apply(json{{"seed", *env_seed}});
  if (!flag_values.is_null()) cfg.apply(without_profile(flag_values));
  if (cfg.data_dir.empty() == false) {
    if (cfg.table_a.empty()) cfg.table_a = cfg.data_dir / "tableA.csv";
    if (cfg.table_b.empty()) cfg.table_b = cfg.data_dir / "tableB.csv";
  }
  return cfg;
}

json RunConfig::read_file(const std::filesystem::path& path) {
  try {
    return json::parse(kaer::read_file(path));
  } catch (const json::exception& e) {
    throw FormatError("config '" + path.string() + "': " + e.what());
  }
}

}  // namespace kaer
