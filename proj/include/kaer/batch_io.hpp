#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "kaer/constrained.hpp"
#include "kaer/serializer.hpp"

namespace kaer {

/// One line of a batch file:
///   {"tokens":[..],"segments":[..],"sites":[{"head":[s,e],"know":[..],"kind":"entity"}],"label":0}
/// Constrained-tuning lines add "soft_pos" and "visible_rows" describing the
/// flattened sequence; "tokens"/"segments"/"sites" always describe the trunk.
std::string encode_batch_line(const InputSequence& seq, const InjectedSequence* injected);

/// Rebuilds the encoder input from a line. Lines without "soft_pos" yield
/// hard positions and a full visible matrix.
InjectedSequence decode_batch_line(std::string_view line);

std::vector<InjectedSequence> read_batch_file(const std::filesystem::path& path);

/// 64-bit FNV-1a, as 16 lowercase hex digits.
std::string fnv1a_hex(std::string_view bytes);

}  // namespace kaer
