#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include <json.hpp>

#include "gtree/ad/tensor.hpp"

namespace gtree::ad {

inline constexpr int kCheckpointVersion = 1;

/// JSON document {"format": "gtree-checkpoint", "version": 1, "meta": {...},
/// "tensors": {name: {"shape": [...], "data": [...]}}}. Reals use shortest
/// round-trip decimals, so save/load is bit-exact.
std::string serialize_checkpoint(const ParamSet& params, const nlohmann::json& meta = nlohmann::json::object());

struct Checkpoint {
  ParamSet params;
  nlohmann::json meta;
};

/// Throws CheckpointError on malformed input or an unsupported version.
Checkpoint parse_checkpoint(std::string_view text);

void save_checkpoint(const std::filesystem::path& path, const ParamSet& params,
                     const nlohmann::json& meta = nlohmann::json::object());
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace gtree::ad
