#include "gtree/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "gtree/errors.hpp"

namespace gtree {

using nlohmann::json;

std::string format_real(double value) {
  if (!std::isfinite(value)) throw NumericError("cannot format non-finite real");
  // JSON readers take "-0" as an integer and drop the sign
  if (value == 0.0 && std::signbit(value)) return "-0.0";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

namespace {

std::size_t swc_type_slot(long code) {
  if (code >= 1 && code <= 7) return static_cast<std::size_t>(code - 1);
  return 7;
}

}  // namespace

GeometricTree parse_swc(std::string_view text) {
  struct Row {
    long index;
    long type;
    Vec3 pos;
    double radius;
    long parent;
  };
  std::vector<Row> rows;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    Row r{};
    if (!(ls >> r.index)) {
      // blank or comment-only line
      std::istringstream probe(line);
      std::string tok;
      if (probe >> tok) throw FormatError("SWC line " + std::to_string(line_no) + ": bad index");
      continue;
    }
    if (!(ls >> r.type >> r.pos.x >> r.pos.y >> r.pos.z >> r.radius >> r.parent))
      throw FormatError("SWC line " + std::to_string(line_no) + ": expected 7 columns");
    std::string extra;
    if (ls >> extra) throw FormatError("SWC line " + std::to_string(line_no) + ": trailing data");
    rows.push_back(r);
  }
  if (rows.empty()) throw FormatError("SWC file has no samples");

  std::unordered_map<long, std::int64_t> dense;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (!dense.emplace(rows[i].index, static_cast<std::int64_t>(i)).second)
      throw FormatError("SWC duplicate sample index " + std::to_string(rows[i].index));
  }

  std::vector<NodeRecord> nodes;
  nodes.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    NodeRecord rec;
    rec.id = static_cast<std::int64_t>(i);
    rec.position = r.pos;
    rec.attrs.assign(kSwcAttrDim, 0.0);
    rec.attrs[swc_type_slot(r.type)] = 1.0;
    rec.attrs[8] = r.radius;
    if (r.parent >= 0) {
      auto it = dense.find(r.parent);
      if (it == dense.end())
        throw FormatError("SWC sample " + std::to_string(r.index) + " references missing parent " +
                          std::to_string(r.parent));
      rec.parent_id = it->second;
    }
    nodes.push_back(std::move(rec));
  }
  return GeometricTree::from_nodes(std::move(nodes));
}

namespace {

double json_real(const json& v, const char* what) {
  if (!v.is_number()) throw FormatError(std::string(what) + " must be a number");
  return v.get<double>();
}

std::int64_t json_int(const json& v, const char* what) {
  if (!v.is_number_integer()) throw FormatError(std::string(what) + " must be an integer");
  return v.get<std::int64_t>();
}

Label json_label(const json& v) {
  if (v.is_null()) return std::monostate{};
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) return v.get<std::string>();
  throw FormatError("label must be a number, string or null");
}

void append_label(std::string& out, const Label& label) {
  if (std::holds_alternative<double>(label)) {
    out += format_real(std::get<double>(label));
  } else if (std::holds_alternative<std::string>(label)) {
    out += json(std::get<std::string>(label)).dump();
  } else {
    out += "null";
  }
}

json parse_json_text(std::string_view text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("invalid JSON: ") + e.what());
  }
}

}  // namespace

GeometricTree parse_tree_json(std::string_view text) {
  json doc = parse_json_text(text);
  if (!doc.is_object()) throw FormatError("tree JSON must be an object");
  if (!doc.contains("root")) throw FormatError("tree JSON missing \"root\"");
  if (!doc.contains("nodes") || !doc["nodes"].is_array())
    throw FormatError("tree JSON missing \"nodes\" array");
  const auto root = json_int(doc["root"], "root");
  Label label = doc.contains("label") ? json_label(doc["label"]) : Label{};

  std::vector<NodeRecord> nodes;
  for (const auto& jn : doc["nodes"]) {
    if (!jn.is_object()) throw FormatError("node entry must be an object");
    if (!jn.contains("id")) throw FormatError("node missing \"id\"");
    NodeRecord rec;
    rec.id = json_int(jn["id"], "id");
    if (jn.contains("parent") && !jn["parent"].is_null())
      rec.parent_id = json_int(jn["parent"], "parent");
    if (!jn.contains("xyz") || !jn["xyz"].is_array() || jn["xyz"].size() != 3)
      throw FormatError("node " + std::to_string(rec.id) + " needs a 3-element \"xyz\"");
    rec.position = {json_real(jn["xyz"][0], "xyz"), json_real(jn["xyz"][1], "xyz"),
                    json_real(jn["xyz"][2], "xyz")};
    if (jn.contains("attrs")) {
      if (!jn["attrs"].is_array()) throw FormatError("\"attrs\" must be an array");
      for (const auto& a : jn["attrs"]) rec.attrs.push_back(json_real(a, "attrs"));
    }
    nodes.push_back(std::move(rec));
  }
  auto tree = GeometricTree::from_nodes(std::move(nodes), std::move(label));
  if (tree.root_id() != root)
    throw FormatError("\"root\" is " + std::to_string(root) + " but the parentless node is " +
                      std::to_string(tree.root_id()));
  return tree;
}

std::string serialize_tree_json(const GeometricTree& tree) {
  std::string out;
  out.reserve(tree.size() * 64 + 32);
  out += "{\"root\":";
  out += std::to_string(tree.root_id());
  out += ",\"label\":";
  append_label(out, tree.label());
  out += ",\"nodes\":[";
  bool first = true;
  for (const auto& n : tree.nodes()) {
    if (!first) out += ',';
    first = false;
    out += "{\"id\":";
    out += std::to_string(n.id);
    out += ",\"parent\":";
    out += n.parent_id ? std::to_string(*n.parent_id) : std::string("null");
    out += ",\"xyz\":[";
    out += format_real(n.position.x);
    out += ',';
    out += format_real(n.position.y);
    out += ',';
    out += format_real(n.position.z);
    out += "],\"attrs\":[";
    for (std::size_t a = 0; a < n.attrs.size(); ++a) {
      if (a) out += ',';
      out += format_real(n.attrs[a]);
    }
    out += "]}";
  }
  out += "]}";
  return out;
}

std::string to_string(TaskKind kind) {
  return kind == TaskKind::Classification ? "classification" : "regression";
}

TaskKind task_kind_from_string(std::string_view name) {
  if (name == "classification") return TaskKind::Classification;
  if (name == "regression") return TaskKind::Regression;
  throw ConfigError("unknown task kind '" + std::string(name) + "'");
}

void DatasetManifest::validate() const {
  double sum = 0.0;
  for (double r : split_ratios) {
    if (!(r > 0.0)) throw ConfigError("split ratios must be positive");
    sum += r;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
}

DatasetManifest parse_manifest_json(std::string_view text) {
  json doc = parse_json_text(text);
  if (!doc.is_object()) throw FormatError("manifest must be an object");
  DatasetManifest m;
  if (doc.contains("task_kind")) m.task_kind = task_kind_from_string(doc["task_kind"].get<std::string>());
  if (doc.contains("split_seed")) m.split_seed = doc["split_seed"].get<std::uint64_t>();
  if (doc.contains("split_ratios")) {
    const auto& r = doc["split_ratios"];
    if (!r.is_array() || r.size() != 3) throw FormatError("split_ratios must have 3 entries");
    for (std::size_t i = 0; i < 3; ++i) m.split_ratios[i] = json_real(r[i], "split_ratios");
  }
  if (!doc.contains("entries") || !doc["entries"].is_array())
    throw FormatError("manifest missing \"entries\" array");
  for (const auto& e : doc["entries"]) {
    if (!e.contains("path") || !e["path"].is_string()) throw FormatError("manifest entry needs \"path\"");
    m.entries.push_back({e["path"].get<std::string>(), e.contains("target") ? json_label(e["target"]) : Label{}});
  }
  m.validate();
  return m;
}

std::string serialize_manifest_json(const DatasetManifest& manifest) {
  std::string out = "{\"task_kind\":\"" + to_string(manifest.task_kind) + "\",\"split_seed\":" +
                    std::to_string(manifest.split_seed) + ",\"split_ratios\":[";
  for (std::size_t i = 0; i < 3; ++i) {
    if (i) out += ',';
    out += format_real(manifest.split_ratios[i]);
  }
  out += "],\"entries\":[";
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    if (i) out += ',';
    out += "{\"path\":" + json(manifest.entries[i].path).dump() + ",\"target\":";
    append_label(out, manifest.entries[i].target);
    out += '}';
  }
  out += "]}";
  return out;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

}  // namespace gtree
