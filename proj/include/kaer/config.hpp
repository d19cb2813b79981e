#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "json.hpp"

#include "kaer/encoder.hpp"
#include "kaer/serializer.hpp"

namespace kaer {

/// Everything one prepare/train/eval run needs. Built by layering, lowest
/// precedence first: defaults, profile, config file, KAER_SEED, flags.
struct RunConfig {
  std::filesystem::path data_dir;
  std::filesystem::path table_a, table_b;
  std::filesystem::path train, valid, test;
  std::filesystem::path out_dir = "run";

  PromptMode prompt_mode = PromptMode::Space;
  bool rule_typer = false;
  std::filesystem::path gazetteer;
  std::filesystem::path annotations;
  std::string ditto_mode = "off";

  std::string profile = "full";
  std::int64_t d_model = 64, n_heads = 4, n_layers = 2, d_ff = 128;
  double dropout = 0.1;
  bool segment_embeddings = true;
  bool float32 = false;

  std::int64_t batch_size = 64;
  std::int64_t epochs = 20;
  double lr = 3e-5;
  std::int64_t max_len = 512;
  std::uint64_t seed = 0;
  int threads = 1;
  std::int64_t min_count = 1;

  /// Applies one flat JSON object; unknown keys raise DomainError.
  void apply(const nlohmann::json& values);
  void apply_profile(const std::string& name);
  nlohmann::json to_json() const;

  EncoderConfig encoder_config(std::int64_t vocab_size) const;
  std::filesystem::path split_path(Split split) const;

  /// `file_values` and `flag_values` are flat JSON objects; `env_seed` is the
  /// raw KAER_SEED value when set.
  static RunConfig resolve(const nlohmann::json& file_values, const nlohmann::json& flag_values,
                           std::optional<std::string> env_seed);
  static nlohmann::json read_file(const std::filesystem::path& path);
};

}  // namespace kaer
