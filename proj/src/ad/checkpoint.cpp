#include "gtree/ad/checkpoint.hpp"

#include "gtree/errors.hpp"
#include "gtree/io.hpp"

namespace gtree::ad {

using nlohmann::json;

std::string serialize_checkpoint(const ParamSet& params, const json& meta) {
  std::string out = "{\"format\":\"gtree-checkpoint\",\"version\":" + std::to_string(kCheckpointVersion) +
                    ",\"meta\":" + meta.dump() + ",\"tensors\":{";
  bool first = true;
  for (const auto& [name, t] : params) {
    if (!first) out += ',';
    first = false;
    out += json(name).dump() + ":{\"shape\":[";
    for (std::size_t i = 0; i < t.shape().size(); ++i) {
      if (i) out += ',';
      out += std::to_string(t.shape()[i]);
    }
    out += "],\"data\":[";
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (i) out += ',';
      out += format_real(t[i]);
    }
    out += "]}";
  }
  out += "}}";
  return out;
}

Checkpoint parse_checkpoint(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw CheckpointError(std::string("checkpoint is not valid JSON: ") + e.what());
  }
  if (!doc.is_object() || doc.value("format", "") != "gtree-checkpoint")
    throw CheckpointError("not a gtree checkpoint");
  if (doc.value("version", -1) != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version");
  if (!doc.contains("tensors") || !doc["tensors"].is_object()) throw CheckpointError("checkpoint has no tensors");
  Checkpoint ck;
  ck.meta = doc.contains("meta") ? doc["meta"] : json::object();
  for (const auto& [name, jt] : doc["tensors"].items()) {
    try {
      auto shape = jt.at("shape").get<std::vector<std::size_t>>();
      auto data = jt.at("data").get<std::vector<double>>();
      ck.params.emplace(name, Tensor(std::move(shape), std::move(data)));
    } catch (const json::exception& e) {
      throw CheckpointError("bad tensor '" + name + "': " + e.what());
    } catch (const ShapeError& e) {
      throw CheckpointError("bad tensor '" + name + "': " + e.what());
    }
  }
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const ParamSet& params, const json& meta) {
  write_text_file(path, serialize_checkpoint(params, meta));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  try {
    return parse_checkpoint(read_text_file(path));
  } catch (const CheckpointError&) {
    throw;
  } catch (const DataError& e) {
    throw CheckpointError(e.what());
  }
}

}  // namespace gtree::ad
