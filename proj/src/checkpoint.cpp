#include "docaug/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "docaug/hash.hpp"

namespace docaug {

using nlohmann::json;

namespace {

constexpr const char* kFormat = "docaug-checkpoint-v1";

void put_float(std::string& out, float v) {
  std::uint32_t bits = std::bit_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) out += static_cast<char>((bits >> (8 * i)) & 0xFF);
}

float get_float(const unsigned char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return std::bit_cast<float>(bits);
}

}  // namespace

std::string serialize_checkpoint(const ModelParams& params, const CheckpointMeta& meta) {
  json tensors = json::array();
  std::size_t count = 0;
  params.weights.visit([&](const std::string& name, const Mat<float>& t) {
    tensors.push_back({{"name", name}, {"shape", {t.rows(), t.cols()}}});
    count += static_cast<std::size_t>(t.size());
  });
  json header{{"format", kFormat},
              {"role", to_string(params.role)},
              {"config", params.config.to_json()},
              {"seed", meta.seed},
              {"src_vocab_sha256", meta.src_vocab_sha256},
              {"tgt_vocab_sha256", meta.tgt_vocab_sha256},
              {"config_sha256", meta.config_sha256},
              {"extra", meta.extra},
              {"tensors", tensors},
              {"payload_bytes", count * 4}};
  std::string out = header.dump();
  out += '\n';
  out.reserve(out.size() + count * 4);
  params.weights.visit([&](const std::string&, const Mat<float>& t) {
    for (Eigen::Index i = 0; i < t.size(); ++i) put_float(out, t.data()[i]);
  });
  return out;
}

void save_checkpoint(const std::string& path, const ModelParams& params, const CheckpointMeta& meta) {
  write_file(path, serialize_checkpoint(params, meta));
}

LoadedCheckpoint parse_checkpoint(const std::string& bytes) {
  const auto nl = bytes.find('\n');
  if (nl == std::string::npos) throw ValidationError("checkpoint: missing header line");
  json header;
  try {
    header = json::parse(bytes.substr(0, nl));
  } catch (const json::exception& e) {
    throw ValidationError(std::string("checkpoint: bad header: ") + e.what());
  }
  if (header.value("format", "") != kFormat) throw ValidationError("checkpoint: unknown format");
  LoadedCheckpoint out;
  try {
    out.params.config = ModelConfig::from_json(header.at("config"));
    out.params.role = parse_role(header.at("role").get<std::string>());
    out.meta.seed = header.at("seed").get<std::uint64_t>();
    out.meta.src_vocab_sha256 = header.at("src_vocab_sha256").get<std::string>();
    out.meta.tgt_vocab_sha256 = header.at("tgt_vocab_sha256").get<std::string>();
    out.meta.config_sha256 = header.at("config_sha256").get<std::string>();
    out.meta.extra = header.value("extra", json::object());
  } catch (const json::exception& e) {
    throw ValidationError(std::string("checkpoint: bad header: ") + e.what());
  }
  out.params.config.validate();
  out.params.weights = zero_weights<float>(out.params.config);
  const auto& table = header.at("tensors");
  const std::size_t payload = header.at("payload_bytes").get<std::size_t>();
  if (bytes.size() - nl - 1 != payload) throw ValidationError("checkpoint: payload size mismatch");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + nl + 1);
  std::size_t index = 0;
  out.params.weights.visit([&](const std::string& name, Mat<float>& t) {
    if (index >= table.size()) throw ValidationError("checkpoint: tensor table too short");
    const auto& entry = table[index++];
    if (entry.at("name").get<std::string>() != name || entry.at("shape")[0].get<Eigen::Index>() != t.rows() ||
        entry.at("shape")[1].get<Eigen::Index>() != t.cols())
      throw ValidationError("checkpoint: tensor '" + name + "' does not match the configuration");
    for (Eigen::Index i = 0; i < t.size(); ++i, p += 4) t.data()[i] = get_float(p);
  });
  if (index != table.size()) throw ValidationError("checkpoint: unexpected extra tensors");
  return out;
}

LoadedCheckpoint load_checkpoint(const std::string& path) { return parse_checkpoint(read_file(path)); }

}  // namespace docaug
