#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "kaer/encoder.hpp"

namespace kaer {

inline constexpr int kCheckpointVersion = 1;

/// Provenance stored next to the weights.
struct CheckpointMeta {
  std::string vocab_hash;
  std::string prompt_mode;
  std::int64_t steps = 0;
};

struct Checkpoint {
  EncoderParams<double> params;
  CheckpointMeta meta;
};

/// One JSON header line (version, config, seed, tensor shapes) followed by
/// every tensor as row-major little-endian float64 in declaration order.
std::string encode_checkpoint(const EncoderParams<double>& params, const CheckpointMeta& meta);
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const EncoderParams<double>& params,
                     const CheckpointMeta& meta);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string config_to_json(const EncoderConfig& config);

}  // namespace kaer
