#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "gtree/tree.hpp"

namespace gtree {

/// Width of SWC-derived node attrs: 8-slot type one-hot followed by radius.
inline constexpr std::size_t kSwcAttrDim = 9;

/// Parses SWC text ("index type x y z radius parent" per line, '#' comments).
/// Node ids are remapped to 0..N-1 in file order.
GeometricTree parse_swc(std::string_view text);

GeometricTree parse_tree_json(std::string_view text);

/// Canonical form: nodes sorted by id, fixed key order, no whitespace,
/// shortest round-trip decimals.
std::string serialize_tree_json(const GeometricTree& tree);

enum class TaskKind { Classification, Regression };

std::string to_string(TaskKind kind);
TaskKind task_kind_from_string(std::string_view name);

struct ManifestEntry {
  std::string path;
  Label target;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  TaskKind task_kind = TaskKind::Classification;
  std::uint64_t split_seed = 0;
  std::array<double, 3> split_ratios{0.8, 0.1, 0.1};

  /// Throws ConfigError unless ratios are positive and sum to 1.
  void validate() const;
};

DatasetManifest parse_manifest_json(std::string_view text);
std::string serialize_manifest_json(const DatasetManifest& manifest);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

/// Shortest decimal that parses back to the same double.
std::string format_real(double value);

}  // namespace gtree
