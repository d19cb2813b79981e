#include "kaer/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "json.hpp"

#include "kaer/errors.hpp"
#include "kaer/table.hpp"

namespace kaer {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint encoding assumes little-endian");

namespace {

json config_json(const EncoderConfig& c) {
  return {{"vocab_size", c.vocab_size}, {"d_model", c.d_model},           {"n_heads", c.n_heads},
          {"n_layers", c.n_layers},     {"d_ff", c.d_ff},                 {"max_position", c.max_position},
          {"dropout_rate", c.dropout_rate}, {"segment_embeddings", c.segment_embeddings}, {"seed", c.seed}};
}

EncoderConfig config_from(const json& j) {
  EncoderConfig c;
  c.vocab_size = j.at("vocab_size").get<std::int64_t>();
  c.d_model = j.at("d_model").get<std::int64_t>();
  c.n_heads = j.at("n_heads").get<std::int64_t>();
  c.n_layers = j.at("n_layers").get<std::int64_t>();
  c.d_ff = j.at("d_ff").get<std::int64_t>();
  c.max_position = j.at("max_position").get<std::int64_t>();
  c.dropout_rate = j.at("dropout_rate").get<double>();
  c.segment_embeddings = j.at("segment_embeddings").get<bool>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

}  // namespace

std::string config_to_json(const EncoderConfig& config) { return config_json(config).dump(); }

std::string encode_checkpoint(const EncoderParams<double>& params, const CheckpointMeta& meta) {
  json header = {{"format", "kaer-checkpoint"},
                 {"version", kCheckpointVersion},
                 {"config", config_json(params.config)},
                 {"seed", params.config.seed},
                 {"vocab_hash", meta.vocab_hash},
                 {"prompt_mode", meta.prompt_mode},
                 {"steps", meta.steps},
                 {"dtype", "float64"},
                 {"order", "row-major"}};
  json shapes = json::array();
  for (const auto& [name, m] : params.tensors()) shapes.push_back({{"name", name}, {"rows", m->rows()}, {"cols", m->cols()}});
  header["tensors"] = std::move(shapes);

  std::string out = header.dump();
  out.push_back('\n');
  for (const auto& [name, m] : params.tensors()) {
    for (Eigen::Index i = 0; i < m->rows(); ++i) {
      for (Eigen::Index j = 0; j < m->cols(); ++j) {
        const double v = (*m)(i, j);
        char buf[sizeof(double)];
        std::memcpy(buf, &v, sizeof v);
        out.append(buf, sizeof buf);
      }
    }
  }
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  const std::size_t eol = bytes.find('\n');
  if (eol == std::string_view::npos) throw FormatError("checkpoint: missing header line");
  json header;
  try {
    header = json::parse(bytes.substr(0, eol));
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  }
  if (header.value("format", "") != "kaer-checkpoint") throw FormatError("checkpoint: unknown format");
  if (!header.contains("version")) throw FormatError("checkpoint: missing version");
  if (header.at("version").get<int>() != kCheckpointVersion) {
    throw IncompatibleArtifactsError("checkpoint version " + header.at("version").dump() + " is not supported");
  }
  Checkpoint ck;
  ck.params = EncoderParams<double>::zeros_like(config_from(header.at("config")));
  ck.meta.vocab_hash = header.value("vocab_hash", "");
  ck.meta.prompt_mode = header.value("prompt_mode", "");
  ck.meta.steps = header.value("steps", std::int64_t{0});

  const auto& shapes = header.at("tensors");
  auto tensors = ck.params.tensors();
  if (shapes.size() != tensors.size()) throw FormatError("checkpoint: tensor count mismatch");
  std::size_t offset = eol + 1;
  for (std::size_t t = 0; t < tensors.size(); ++t) {
    auto& [name, m] = tensors[t];
    if (shapes[t].at("name") != name || shapes[t].at("rows") != m->rows() || shapes[t].at("cols") != m->cols()) {
      throw FormatError("checkpoint: tensor '" + name + "' does not match its declared shape");
    }
    const std::size_t need = static_cast<std::size_t>(m->size()) * sizeof(double);
    if (offset + need > bytes.size()) throw FormatError("checkpoint: truncated payload at '" + name + "'");
    for (Eigen::Index i = 0; i < m->rows(); ++i) {
      for (Eigen::Index j = 0; j < m->cols(); ++j) {
        double v;
        std::memcpy(&v, bytes.data() + offset, sizeof v);
        offset += sizeof v;
        (*m)(i, j) = v;
      }
    }
  }
  if (offset != bytes.size()) throw FormatError("checkpoint: trailing bytes");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const EncoderParams<double>& params,
                     const CheckpointMeta& meta) {
  write_file(path, encode_checkpoint(params, meta));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

}  // namespace kaer
