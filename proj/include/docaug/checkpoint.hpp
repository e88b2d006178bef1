#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "docaug/model.hpp"

namespace docaug {

// Provenance stored in a checkpoint header next to the model configuration.
struct CheckpointMeta {
  std::uint64_t seed = 0;
  std::string src_vocab_sha256;
  std::string tgt_vocab_sha256;
  std::string config_sha256;
  nlohmann::json extra = nlohmann::json::object();
};

// Layout: one line of UTF-8 JSON (config, role, hashes, seed, tensor table),
// a newline, then every tensor as little-endian float32 in table order.
std::string serialize_checkpoint(const ModelParams& params, const CheckpointMeta& meta);
void save_checkpoint(const std::string& path, const ModelParams& params, const CheckpointMeta& meta);

struct LoadedCheckpoint {
  ModelParams params;
  CheckpointMeta meta;
};

LoadedCheckpoint parse_checkpoint(const std::string& bytes);
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace docaug
