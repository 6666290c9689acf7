#include "cli.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gtree/ad/checkpoint.hpp"
#include "gtree/errors.hpp"
#include "gtree/geometry.hpp"
#include "gtree/io.hpp"
#include "gtree/kernels.hpp"
#include "gtree/model.hpp"
#include "gtree/synthetic.hpp"
#include "gtree/train.hpp"

namespace gtree::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr int kSchemaVersion = 1;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Output sink confined to one directory.
class RunDir {
 public:
  explicit RunDir(fs::path root) : root_(std::move(root)) {}

  fs::path resolve(const std::string& rel) const {
    const fs::path p(rel);
    if (p.empty() || p.is_absolute() || p.has_root_name())
      throw ConfigError("output path must be relative to the run directory: " + rel);
    const fs::path norm = p.lexically_normal();
    if (norm.empty() || *norm.begin() == ".." || norm == ".")
      throw ConfigError("output path escapes the run directory: " + rel);
    return root_ / norm;
  }

  void write(const std::string& rel, std::string_view text) const { write_text_file(resolve(rel), text); }
  const fs::path& root() const { return root_; }

 private:
  fs::path root_;
};

// ---- flags -----------------------------------------------------------------

enum class Kind { Int, Real, Text, Flag, List };

struct FlagSpec {
  CLI::Option* opt;
  Kind kind;
  json::json_pointer target;
  bool train;
};

struct Command {
  CLI::App* app = nullptr;
  std::vector<FlagSpec> flags;
  std::string config_path;
  std::string run_dir = ".";

  void add(const std::string& name, Kind kind, const std::string& pointer, const std::string& desc,
           bool train = false) {
    CLI::Option* o = kind == Kind::Flag ? app->add_flag(name, desc) : app->add_option(name, desc);
    if (kind == Kind::Int || kind == Kind::Real) o->check(CLI::Number);
    if (kind == Kind::Int) o->type_name("INT");
    if (kind == Kind::Real) o->type_name("REAL");
    if (kind == Kind::Text) o->type_name("TEXT");
    if (kind == Kind::List) o->type_name("LIST");
    flags.push_back({o, kind, json::json_pointer(pointer), train});
  }
};

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, ','))
    if (!cur.empty()) out.push_back(cur);
  return out;
}

double parse_real(const std::string& s) {
  double v = 0.0;
  const auto* end = s.data() + s.size();
  const auto r = std::from_chars(s.data(), end, v);
  if (r.ec != std::errc() || r.ptr != end) throw UsageError("not a number: '" + s + "'");
  return v;
}

long long parse_int(const std::string& s) {
  long long v = 0;
  const auto* end = s.data() + s.size();
  const auto r = std::from_chars(s.data(), end, v);
  if (r.ec != std::errc() || r.ptr != end) throw UsageError("not an integer: '" + s + "'");
  return v;
}

json flag_value(const FlagSpec& f) {
  const std::string raw = f.kind == Kind::Flag ? "" : f.opt->as<std::string>();
  switch (f.kind) {
    case Kind::Int: return parse_int(raw);
    case Kind::Real: return parse_real(raw);
    case Kind::Flag: return true;
    case Kind::List: {
      json arr = json::array();
      for (const auto& part : split_commas(raw)) arr.push_back(parse_real(part));
      return arr;
    }
    case Kind::Text: break;
  }
  return raw;
}

json load_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw ConfigError("config file must hold a JSON object");
  if (j.contains("schema_version") && j.at("schema_version") != kSchemaVersion)
    throw ConfigError("unsupported config schema_version in " + path);
  return j;
}

// Defaults, then the config file's "options" section, then explicit flags.
json effective_options(const Command& cmd, json defaults, const json& file) {
  if (file.contains("options")) defaults.merge_patch(file.at("options"));
  for (const auto& f : cmd.flags)
    if (!f.train && f.opt->count() > 0) defaults[f.target] = flag_value(f);
  return defaults;
}

json train_flag_patch(const Command& cmd) {
  json patch = json::object();
  for (const auto& f : cmd.flags)
    if (f.train && f.opt->count() > 0) patch[f.target] = flag_value(f);
  return patch;
}

template <typename T>
T get(const json& opts, const char* key) {
  try {
    return opts.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("option '") + key + "' is missing or has the wrong type");
  }
}

std::string required_path(const json& opts, const char* key) {
  if (!opts.contains(key) || opts.at(key).is_null() || opts.at(key) == "")
    throw UsageError(std::string("missing required option --") + key);
  return get<std::string>(opts, key);
}

void write_snapshot(const RunDir& out, const std::string& sub, const json& options, const json& train = nullptr) {
  json snap{{"schema_version", kSchemaVersion}, {"subcommand", sub}, {"options", options}};
  if (!train.is_null()) snap["train"] = train;
  out.write("config.json", snap.dump(2) + "\n");
}

// ---- shared helpers ----------------------------------------------------------

GeometricTree load_tree(const fs::path& path) {
  const auto text = read_text_file(path);
  return path.extension() == ".swc" ? parse_swc(text) : parse_tree_json(text);
}

struct LoadedData {
  DatasetManifest manifest;
  Dataset data;
};

LoadedData load_manifest(const std::string& path) {
  LoadedData d;
  d.manifest = parse_manifest_json(read_text_file(path));
  d.data = load_dataset(d.manifest, fs::path(path).parent_path());
  if (d.data.size() == 0) throw ConfigError("manifest lists no trees");
  return d;
}

// Defaults < manifest split settings < config file "train" section < flags.
TrainConfig resolve_train(const Command& cmd, const json& file, const DatasetManifest* manifest) {
  TrainConfig c;
  if (manifest) {
    c.split_seed = manifest->split_seed;
    c.split_ratios = manifest->split_ratios;
  }
  if (file.contains("train")) c = train_config_from_json(file.at("train"), c);
  else if (!file.contains("schema_version") && !file.empty() && !file.contains("options"))
    c = train_config_from_json(file, c);
  return train_config_from_json(train_flag_patch(cmd), c);
}

void bind_data(TrainConfig& c, const Dataset& data) {
  c.model.task = data.task;
  if (data.task == TaskKind::Classification) c.model.num_classes = data.num_classes;
  c.model.encoder.attr_dim = static_cast<int>(data.trees.front().attr_dim());
  c.validate();
}

json model_meta(const TrainResult& r) {
  return {{"kind", "model"}, {"model", to_json(r.model.config)}, {"basis", to_json(r.basis)}};
}

ModelParams load_model(const std::string& path) {
  auto ck = ad::load_checkpoint(path);
  if (ck.meta.value("kind", "") != "model") throw CheckpointError(path + " is not a model checkpoint");
  ModelParams m;
  try {
    m.config = model_config_from_json(ck.meta.at("model"));
  } catch (const json::exception& e) {
    throw CheckpointError(path + ": bad model description: " + e.what());
  }
  m.params = std::move(ck.params);
  return m;
}

void check_model_fits(const ModelParams& m, const Dataset& data) {
  if (m.config.task != data.task) throw ConfigError("model task differs from the dataset task");
  if (m.config.encoder.attr_dim != static_cast<int>(data.trees.front().attr_dim()))
    throw ConfigError("model attr_dim differs from the dataset node attrs");
}

std::vector<std::size_t> split_indices(const Split& s, const std::string& name, std::size_t n) {
  if (name == "train") return s.train;
  if (name == "val") return s.val;
  if (name == "test") return s.test;
  if (name == "all") {
    std::vector<std::size_t> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = i;
    return all;
  }
  throw ConfigError("split must be train, val, test or all");
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + "\"";
}

void write_run(const RunDir& out, const std::string& prefix, const TrainResult& r, const json& meta,
               const std::string& ckpt_name) {
  ad::save_checkpoint(out.resolve(prefix + ckpt_name), r.model.params, meta);
  out.write(prefix + "report.json", r.report.to_json().dump(2) + "\n");
  out.write(prefix + "loss_curve.csv", r.report.loss_curve_csv());
}

// ---- subcommands -------------------------------------------------------------

json generator_defaults() {
  const GeneratorConfig g;
  return {{"count", g.count},
          {"mode", "classification"},
          {"min_depth", g.min_depth},
          {"max_depth", g.max_depth},
          {"exact_nodes", nullptr},
          {"max_nodes", g.max_nodes},
          {"null_control", false},
          {"seed", 0},
          {"split_seed", nullptr},
          {"out", "trees"}};
}

int cmd_generate(const Command& cmd, const json& file) {
  const json opts = effective_options(cmd, generator_defaults(), file);
  GeneratorConfig g;
  g.count = get<std::size_t>(opts, "count");
  const auto mode = get<std::string>(opts, "mode");
  if (mode == "classification") g.mode = SyntheticMode::Classification;
  else if (mode == "regression") g.mode = SyntheticMode::Regression;
  else if (mode == "unlabeled") g.mode = SyntheticMode::Unlabeled;
  else throw ConfigError("mode must be classification, regression or unlabeled");
  g.min_depth = get<int>(opts, "min_depth");
  g.max_depth = get<int>(opts, "max_depth");
  g.max_nodes = get<std::size_t>(opts, "max_nodes");
  if (!opts.at("exact_nodes").is_null()) g.exact_nodes = get<std::size_t>(opts, "exact_nodes");
  g.class_coupling = !get<bool>(opts, "null_control");
  g.validate();
  const auto seed = get<std::uint64_t>(opts, "seed");

  const RunDir out(cmd.run_dir);
  const auto dir = get<std::string>(opts, "out");
  out.resolve(dir);
  const auto samples = generate_synthetic(g, seed);
  DatasetManifest m;
  m.task_kind = g.mode == SyntheticMode::Regression ? TaskKind::Regression : TaskKind::Classification;
  m.split_seed = opts.at("split_seed").is_null() ? seed : get<std::uint64_t>(opts, "split_seed");
  for (std::size_t t = 0; t < samples.size(); ++t) {
    char name[32];
    std::snprintf(name, sizeof name, "tree_%05zu.json", t);
    const std::string rel = (fs::path(dir) / name).generic_string();
    out.write(rel, serialize_tree_json(samples[t].tree) + "\n");
    m.entries.push_back({rel, samples[t].tree.label()});
  }
  out.write("manifest.json", serialize_manifest_json(m) + "\n");
  write_snapshot(out, "generate", opts);
  std::cout << "wrote " << samples.size() << " trees to " << out.resolve(dir).string() << "\n";
  return 0;
}

int cmd_convert(const Command& cmd, const json& file) {
  const json opts = effective_options(cmd, {{"in", nullptr}, {"out", "tree.json"}}, file);
  const auto tree = load_tree(required_path(opts, "in"));
  const RunDir out(cmd.run_dir);
  out.write(get<std::string>(opts, "out"), serialize_tree_json(tree) + "\n");
  write_snapshot(out, "convert", opts);
  return 0;
}

constexpr const char* kFeatureHeader =
    "i,j,k,p,valid_len,d_ij,d_jk,d_jp,theta_ijk,theta_ijp,phi_ijkp,"
    "m_d_ij,m_d_jk,m_d_jp,m_theta_ijk,m_theta_ijp,m_phi_ijkp";

int cmd_extract(const Command& cmd, const json& file) {
  const json opts = effective_options(cmd, {{"in", nullptr}, {"out", "features.csv"}}, file);
  const auto tree = load_tree(required_path(opts, "in"));
  const auto branches = enumerate_branches(tree);
  const auto feats = extract_all_features(tree, branches);

  std::string csv = std::string(kFeatureHeader) + "\n";
  auto id = [&](int idx) { return idx == kNone ? std::string() : std::to_string(tree.node(idx).id); };
  for (std::size_t b = 0; b < feats.size(); ++b) {
    const auto& br = branches.branches[b];
    csv += id(br.i) + "," + id(br.j) + "," + id(br.k) + "," + id(br.p) + "," + std::to_string(br.valid_len);
    for (double v : feats[b].values()) csv += "," + format_real(v);
    for (bool m : feats[b].mask) csv += m ? ",1" : ",0";
    csv += "\n";
  }
  const RunDir out(cmd.run_dir);
  out.write(get<std::string>(opts, "out"), csv);
  write_snapshot(out, "extract", opts);
  std::cout << feats.size() << " branches\n";
  return 0;
}

std::vector<std::vector<std::string>> read_csv_rows(const std::string& text, const std::string& header) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty feature file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != header) throw FormatError("unexpected feature file header");
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::size_t start = 0;
    for (;;) {
      const auto comma = line.find(',', start);
      cells.push_back(line.substr(start, comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    rows.push_back(std::move(cells));
  }
  return rows;
}

int cmd_reconstruct(const Command& cmd, const json& file) {
  const json opts = effective_options(
      cmd, {{"in", nullptr}, {"topology", nullptr}, {"seed_triple", nullptr}, {"out", "coordinates.json"}}, file);
  const auto topology = load_tree(required_path(opts, "topology"));
  const auto rows = read_csv_rows(read_text_file(required_path(opts, "in")), kFeatureHeader);

  auto node = [&](const std::string& cell) {
    if (cell.empty()) return kNone;
    long long v = 0;
    try {
      v = parse_int(cell);
    } catch (const UsageError&) {
      throw FormatError("bad node id '" + cell + "' in feature file");
    }
    return topology.index_of(v);
  };
  auto real = [](const std::string& cell) {
    try {
      return parse_real(cell);
    } catch (const UsageError&) {
      throw FormatError("bad value '" + cell + "' in feature file");
    }
  };
  std::vector<BranchRecord> records;
  for (const auto& r : rows) {
    if (r.size() != 17) throw FormatError("feature rows need 17 columns");
    BranchRecord rec;
    rec.branch = {node(r[0]), node(r[1]), node(r[2]), node(r[3]), static_cast<int>(real(r[4]))};
    auto& f = rec.features;
    f.d_ij = real(r[5]);
    f.d_jk = real(r[6]);
    f.d_jp = real(r[7]);
    f.theta_ijk = real(r[8]);
    f.theta_ijp = real(r[9]);
    f.phi_ijkp = real(r[10]);
    for (std::size_t m = 0; m < 6; ++m) f.mask[m] = r[11 + m] == "1";
    records.push_back(rec);
  }

  std::array<int, 3> seeds{};
  if (opts.at("seed_triple").is_null()) {
    // root -> first child -> first grandchild
    seeds[0] = topology.root();
    for (std::size_t s = 1; s < 3; ++s) {
      const auto kids = topology.children(seeds[s - 1]);
      if (kids.empty()) throw ConfigError("tree is too shallow for a default seed triple");
      seeds[s] = kids.front();
    }
  } else {
    const auto& t = opts.at("seed_triple");
    std::vector<std::int64_t> ids;
    if (t.is_string()) {
      for (const auto& part : split_commas(t.get<std::string>())) ids.push_back(parse_int(part));
    } else {
      ids = get<std::vector<std::int64_t>>(opts, "seed_triple");
    }
    if (ids.size() != 3) throw UsageError("--seed-triple needs three node ids");
    for (std::size_t s = 0; s < 3; ++s) seeds[s] = topology.index_of(ids[s]);
  }
  const std::array<Vec3, 3> anchor{topology.position(seeds[0]), topology.position(seeds[1]),
                                   topology.position(seeds[2])};
  const auto pos = reconstruct_tree(topology, records, seeds, anchor);

  const RunDir out(cmd.run_dir);
  out.write(get<std::string>(opts, "out"), serialize_tree_json(topology.with_positions(pos)) + "\n");
  json echoed = opts;
  echoed["seed_triple"] = {topology.node(seeds[0]).id, topology.node(seeds[1]).id, topology.node(seeds[2]).id};
  write_snapshot(out, "reconstruct", echoed);
  return 0;
}

int cmd_pretrain(const Command& cmd, const json& file) {
  const json opts = effective_options(cmd, {{"manifest", nullptr}, {"out", "encoder.ckpt.json"}}, file);
  const auto loaded = load_manifest(required_path(opts, "manifest"));
  TrainConfig cfg = resolve_train(cmd, file, &loaded.manifest);
  cfg.mode = TrainMode::Pretrain;
  bind_data(cfg, loaded.data);

  const RunDir out(cmd.run_dir);
  const auto ckpt = get<std::string>(opts, "out");
  out.resolve(ckpt);
  write_snapshot(out, "pretrain", opts, to_json(cfg));
  const auto r = pretrain_ssl(loaded.data, cfg);
  ad::save_checkpoint(out.resolve(ckpt), r.model.params, encoder_meta(r.model.config, r.basis));
  out.write("report.json", r.report.to_json().dump(2) + "\n");
  out.write("loss_curve.csv", r.report.loss_curve_csv());

  std::string csv = "tree,path";
  for (int c = 0; c < cfg.model.encoder.hidden_dim; ++c) csv += ",z" + std::to_string(c);
  csv += "\n";
  std::vector<ad::Tensor> z(loaded.data.size());
  for_each_index(z.size(), cfg.exec,
                 [&](std::size_t t) { z[t] = encode_tree_vector(prepare_inputs(loaded.data.trees[t]), r.model); });
  for (std::size_t t = 0; t < z.size(); ++t) {
    csv += std::to_string(t) + "," + csv_field(loaded.manifest.entries[t].path);
    for (double v : z[t].values()) csv += "," + format_real(v);
    csv += "\n";
  }
  out.write("embeddings.csv", csv);

  const auto& last = r.report.epochs.back();
  std::cout << "pretrain: best epoch " << r.report.best_epoch << ", generative " << last.train_generative
            << ", order " << last.train_order << ", val violation rate " << last.val_violation_rate << "\n";
  return 0;
}

struct Stats {
  double mean = 0.0, sd = 0.0;
};

Stats mean_sd(const std::vector<double>& v) {
  Stats s;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    for (double x : v) s.sd += (x - s.mean) * (x - s.mean);
    s.sd = std::sqrt(s.sd / static_cast<double>(v.size() - 1));
  }
  return s;
}

// Shared tail of train and finetune: one or more runs, per-run outputs and a summary.
template <typename RunFn>
int repeated_runs(const RunDir& out, const std::string& sub, const json& opts, const TrainConfig& cfg, RunFn&& fn) {
  const int runs = get<int>(opts, "runs");
  if (runs < 1) throw ConfigError("--runs must be at least 1");
  write_snapshot(out, sub, opts, to_json(cfg));
  std::vector<double> metrics;
  std::string name;
  std::string csv = "run,seed,best_epoch,metric,value\n";
  for (int i = 0; i < runs; ++i) {
    TrainConfig c = cfg;
    c.seed = cfg.seed + static_cast<std::uint64_t>(i);
    const TrainResult r = fn(c);
    const std::string prefix = runs == 1 ? "" : "run_" + std::to_string(i) + "/";
    write_run(out, prefix, r, model_meta(r), "model.ckpt.json");
    name = r.report.metric_name;
    const double m = r.report.test_metric.value_or(std::nan(""));
    metrics.push_back(m);
    csv += std::to_string(i) + "," + std::to_string(c.seed) + "," + std::to_string(r.report.best_epoch) + "," +
           name + "," + format_real(m) + "\n";
    std::cout << "run " << i << " seed " << c.seed << " test " << name << " " << m << "\n";
  }
  const Stats s = mean_sd(metrics);
  out.write("metrics.csv", csv);
  json summary{{"metric", name}, {"values", metrics}, {"mean", s.mean}, {"std", s.sd}, {"runs", runs}};
  out.write("summary.json", summary.dump(2) + "\n");
  std::cout << name << " " << s.mean << " +/- " << s.sd << " over " << runs << " run(s)\n";
  return 0;
}

int cmd_train(const Command& cmd, const json& file) {
  const json opts = effective_options(cmd, {{"manifest", nullptr}, {"runs", 1}}, file);
  const auto loaded = load_manifest(required_path(opts, "manifest"));
  TrainConfig cfg = resolve_train(cmd, file, &loaded.manifest);
  cfg.mode = TrainMode::Supervised;
  bind_data(cfg, loaded.data);
  return repeated_runs(RunDir(cmd.run_dir), "train", opts, cfg,
                       [&](const TrainConfig& c) { return train_supervised(loaded.data, c); });
}

int cmd_finetune(const Command& cmd, const json& file) {
  const json opts = effective_options(cmd, {{"manifest", nullptr}, {"encoder", nullptr}, {"runs", 1}}, file);
  const auto encoder = ad::load_checkpoint(required_path(opts, "encoder"));
  const auto loaded = load_manifest(required_path(opts, "manifest"));
  TrainConfig cfg = resolve_train(cmd, file, &loaded.manifest);
  cfg.mode = TrainMode::Finetune;
  // The encoder shape comes from the checkpoint unless the config file pins it.
  if (encoder.meta.contains("encoder")) {
    try {
      cfg.model.encoder = encoder_config_from_json(encoder.meta.at("encoder"));
    } catch (const ConfigError& e) {
      throw CheckpointError(std::string("checkpoint encoder config is invalid: ") + e.what());
    }
  }
  if (file.contains("train") && file.at("train").contains("model") && file.at("train").at("model").contains("encoder"))
    cfg = train_config_from_json(file.at("train"), cfg);
  cfg = train_config_from_json(train_flag_patch(cmd), cfg);
  bind_data(cfg, loaded.data);
  return repeated_runs(RunDir(cmd.run_dir), "finetune", opts, cfg,
                       [&](const TrainConfig& c) { return finetune(encoder, loaded.data, c); });
}

int cmd_evaluate(const Command& cmd, const json& file) {
  const json opts = effective_options(cmd, {{"manifest", nullptr}, {"model", nullptr}, {"split", "test"}}, file);
  const auto model = load_model(required_path(opts, "model"));
  const auto loaded = load_manifest(required_path(opts, "manifest"));
  check_model_fits(model, loaded.data);
  const TrainConfig cfg = resolve_train(cmd, file, &loaded.manifest);
  const auto split = make_split(loaded.data.size(), cfg.split_ratios, cfg.split_seed);
  const auto split_name = get<std::string>(opts, "split");
  const auto idx = split_indices(split, split_name, loaded.data.size());
  if (idx.empty()) throw ConfigError("split '" + split_name + "' is empty");

  const auto scores = score_trees(model, loaded.data, idx, cfg.exec);
  const double metric = evaluate_metric(model, loaded.data, idx, cfg.exec);
  const auto name = metric_name(model.config);

  const RunDir out(cmd.run_dir);
  write_snapshot(out, "evaluate", opts, to_json(cfg));
  out.write("metrics.csv", "split,metric,value,count\n" + split_name + "," + name + "," + format_real(metric) + "," +
                               std::to_string(idx.size()) + "\n");
  std::string csv = "tree,path,target,score\n";
  for (std::size_t n = 0; n < idx.size(); ++n) {
    const auto t = idx[n];
    const auto& label = loaded.data.trees[t].label();
    const std::string target =
        std::holds_alternative<std::monostate>(label) ? "" : format_real(loaded.data.target(t));
    csv += std::to_string(t) + "," + csv_field(loaded.manifest.entries[t].path) + "," + target + "," +
           format_real(scores[n]) + "\n";
  }
  out.write("scores.csv", csv);
  std::cout << split_name << " " << name << " " << metric << " (" << idx.size() << " trees)\n";
  return 0;
}

std::string invariance_svg(const InvarianceReport& rep) {
  const double w = 640, h = 360, left = 70, right = 20, top = 30, bottom = 60;
  const double pw = w - left - right, ph = h - top - bottom;
  const std::size_t n = rep.rows.size();
  auto x = [&](std::size_t i) { return left + (n > 1 ? pw * static_cast<double>(i) / static_cast<double>(n - 1) : pw / 2); };
  auto y = [&](double v) { return top + ph * (1.0 - v); };
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
    << "\" font-family=\"sans-serif\" font-size=\"11\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<text x=\"" << left << "\" y=\"18\" font-size=\"13\">Score under rigid transforms (max deviation "
    << format_real(rep.max_deviation) << ")</text>\n"
    << "<line x1=\"" << left << "\" y1=\"" << y(0) << "\" x2=\"" << left + pw << "\" y2=\"" << y(0)
    << "\" stroke=\"black\"/>\n"
    << "<line x1=\"" << left << "\" y1=\"" << y(0) << "\" x2=\"" << left << "\" y2=\"" << y(1)
    << "\" stroke=\"black\"/>\n";
  for (double t : {0.0, 0.25, 0.5, 0.75, 1.0})
    s << "<text x=\"" << left - 8 << "\" y=\"" << y(t) + 4 << "\" text-anchor=\"end\">" << t << "</text>\n";
  s << "<text x=\"16\" y=\"" << top + ph / 2 << "\" transform=\"rotate(-90 16 " << top + ph / 2
    << ")\" text-anchor=\"middle\">AUC</text>\n";
  std::string pts;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = rep.rows[i];
    s << "<text x=\"" << x(i) << "\" y=\"" << y(0) + 16 << "\" text-anchor=\"middle\">" << r.magnitude << "</text>\n"
      << "<text x=\"" << x(i) << "\" y=\"" << y(0) + 30 << "\" text-anchor=\"middle\" fill=\"#777\">dev "
      << std::scientific << std::setprecision(1) << r.max_deviation << std::defaultfloat << std::setprecision(6)
      << "</text>\n";
    if (r.auc) {
      pts += std::to_string(x(i)) + "," + std::to_string(y(*r.auc)) + " ";
      s << "<circle cx=\"" << x(i) << "\" cy=\"" << y(*r.auc) << "\" r=\"3\" fill=\"#1f77b4\"/>\n";
    }
  }
  if (!pts.empty()) s << "<polyline points=\"" << pts << "\" fill=\"none\" stroke=\"#1f77b4\"/>\n";
  s << "<text x=\"" << left + pw / 2 << "\" y=\"" << h - 10 << "\" text-anchor=\"middle\">translation magnitude</text>\n"
    << "</svg>\n";
  return s.str();
}

int cmd_invariance(const Command& cmd, const json& file) {
  const json opts = effective_options(cmd,
                                      {{"manifest", nullptr},
                                       {"model", nullptr},
                                       {"split", "test"},
                                       {"n_transforms", 8},
                                       {"magnitudes", {0.0, 1.0, 10.0, 100.0, 1000.0}},
                                       {"seed", 0}},
                                      file);
  const auto model = load_model(required_path(opts, "model"));
  const auto loaded = load_manifest(required_path(opts, "manifest"));
  check_model_fits(model, loaded.data);
  const TrainConfig cfg = resolve_train(cmd, file, &loaded.manifest);
  const auto split = make_split(loaded.data.size(), cfg.split_ratios, cfg.split_seed);
  const auto idx = split_indices(split, get<std::string>(opts, "split"), loaded.data.size());
  if (idx.empty()) throw ConfigError("selected split is empty");
  Dataset subset = loaded.data;
  subset.trees.clear();
  for (auto t : idx) subset.trees.push_back(loaded.data.trees[t]);

  const auto mags = get<std::vector<double>>(opts, "magnitudes");
  const auto rep = invariance_test(model_scorer(model), subset, get<int>(opts, "n_transforms"),
                                   get<std::uint64_t>(opts, "seed"), mags, cfg.exec);

  const RunDir out(cmd.run_dir);
  write_snapshot(out, "invariance", opts, to_json(cfg));
  std::string csv = "magnitude,max_deviation,auc\n";
  for (const auto& r : rep.rows)
    csv += format_real(r.magnitude) + "," + format_real(r.max_deviation) + "," + (r.auc ? format_real(*r.auc) : "") +
           "\n";
  out.write("invariance.csv", csv);
  out.write("invariance.svg", invariance_svg(rep));
  std::cout << "max deviation " << rep.max_deviation << "\n";
  return 0;
}

int cmd_bench(const Command& cmd, const json& file) {
  const json opts = effective_options(
      cmd,
      {{"sizes", {1000, 2000, 3000, 4000, 5000, 6000, 7000, 8000, 9000, 10000}}, {"trees_per_point", 3}, {"seed", 0}},
      file);
  const TrainConfig cfg = resolve_train(cmd, file, nullptr);
  std::vector<std::size_t> sizes;
  for (double s : get<std::vector<double>>(opts, "sizes")) {
    if (!(s >= 1.0) || s != std::floor(s)) throw ConfigError("sizes must be positive integers");
    sizes.push_back(static_cast<std::size_t>(s));
  }
  if (!std::is_sorted(sizes.begin(), sizes.end())) throw ConfigError("sizes must be ascending");
  const RunDir out(cmd.run_dir);
  write_snapshot(out, "bench", opts, to_json(cfg));
  const auto rep = bench_scaling(sizes, get<int>(opts, "trees_per_point"), cfg.model, get<std::uint64_t>(opts, "seed"));

  std::string csv = "nodes,trees,branches,total_seconds,mean_seconds\n";
  std::printf("%8s %6s %10s %12s\n", "nodes", "trees", "branches", "mean_s");
  for (const auto& r : rep.rows) {
    csv += std::to_string(r.nodes) + "," + std::to_string(r.trees) + "," + std::to_string(r.branches) + "," +
           format_real(r.total_seconds) + "," + format_real(r.mean_seconds) + "\n";
    std::printf("%8zu %6zu %10zu %12.4f\n", r.nodes, r.trees, r.branches, r.mean_seconds);
  }
  std::printf("pearson r = %.4f\n", rep.pearson_r);
  out.write("bench.csv", csv);
  out.write("bench.json", json{{"pearson_r", rep.pearson_r}}.dump(2) + "\n");
  return 0;
}

void add_train_flags(Command& c) {
  c.add("--epochs", Kind::Int, "/epochs", "Training epochs", true);
  c.add("--batch-size", Kind::Int, "/batch_size", "Trees per minibatch", true);
  c.add("--lr", Kind::Real, "/lr", "Adam learning rate", true);
  c.add("--seed", Kind::Int, "/seed", "Base seed for weights and sampling", true);
  c.add("--split-seed", Kind::Int, "/split_seed", "Seed of the train/val/test split", true);
  c.add("--hidden-dim", Kind::Int, "/model/encoder/hidden_dim", "Embedding width", true);
  c.add("--layers", Kind::Int, "/model/encoder/num_layers", "Message-passing layers", true);
  c.add("--exec", Kind::Text, "/exec", "parallel or serial", true);
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"Geometric tree message passing: features, reconstruction, training and evaluation"};
  app.require_subcommand(1);

  using Handler = int (*)(const Command&, const json&);
  std::map<std::string, std::pair<Command, Handler>> cmds;
  auto sub = [&](const std::string& name, const std::string& desc, Handler h) -> Command& {
    auto& slot = cmds[name];
    slot.first.app = app.add_subcommand(name, desc);
    slot.first.app->add_option("--config", slot.first.config_path, "JSON config file (a config.json snapshot works)");
    slot.first.app->add_option("--run-dir", slot.first.run_dir, "Directory receiving every output");
    slot.second = h;
    return slot.first;
  };

  auto& gen = sub("generate", "Write a synthetic dataset and its manifest", cmd_generate);
  gen.add("--count", Kind::Int, "/count", "Number of trees");
  gen.add("--mode", Kind::Text, "/mode", "classification, regression or unlabeled");
  gen.add("--min-depth", Kind::Int, "/min_depth", "Minimum tree depth");
  gen.add("--max-depth", Kind::Int, "/max_depth", "Maximum tree depth");
  gen.add("--max-nodes", Kind::Int, "/max_nodes", "Node cap per tree");
  gen.add("--exact-nodes", Kind::Int, "/exact_nodes", "Grow every tree to exactly this many nodes");
  gen.add("--null-control", Kind::Flag, "/null_control", "Draw both classes from the same process");
  gen.add("--seed", Kind::Int, "/seed", "Generator seed");
  gen.add("--split-seed", Kind::Int, "/split_seed", "Split seed recorded in the manifest (default: --seed)");
  gen.add("--out", Kind::Text, "/out", "Tree directory inside the run directory");

  auto& conv = sub("convert", "Convert an SWC or JSON tree to canonical JSON", cmd_convert);
  conv.add("--in", Kind::Text, "/in", "Input tree (.swc or .json)");
  conv.add("--out", Kind::Text, "/out", "Output file inside the run directory");

  auto& ext = sub("extract", "Dump per-branch features as CSV", cmd_extract);
  ext.add("--in", Kind::Text, "/in", "Input tree (.swc or .json)");
  ext.add("--out", Kind::Text, "/out", "Output CSV inside the run directory");

  auto& rec = sub("reconstruct", "Recover coordinates from a feature dump", cmd_reconstruct);
  rec.add("--in", Kind::Text, "/in", "Feature CSV written by extract");
  rec.add("--topology", Kind::Text, "/topology", "Tree giving the parent links and the seed positions");
  rec.add("--seed-triple", Kind::Text, "/seed_triple", "Node ids a,b,c of a parent-child-grandchild chain");
  rec.add("--out", Kind::Text, "/out", "Output tree JSON inside the run directory");

  auto& pre = sub("pretrain", "Self-supervised encoder pretraining", cmd_pretrain);
  pre.add("--manifest", Kind::Text, "/manifest", "Dataset manifest");
  pre.add("--out", Kind::Text, "/out", "Encoder checkpoint name");
  add_train_flags(pre);
  pre.add("--generative-weight", Kind::Real, "/generative_weight", "Weight of the subtree-growth term", true);
  pre.add("--order-weight", Kind::Real, "/order_weight", "Weight of the partial-order term", true);

  auto& tr = sub("train", "Supervised training from scratch", cmd_train);
  tr.add("--manifest", Kind::Text, "/manifest", "Dataset manifest");
  tr.add("--runs", Kind::Int, "/runs", "Repeat with seeds seed, seed+1, ...");
  add_train_flags(tr);
  tr.add("--label-fraction", Kind::Real, "/label_fraction", "Fraction of training labels used", true);

  auto& ft = sub("finetune", "Train a prediction head on a pretrained encoder", cmd_finetune);
  ft.add("--manifest", Kind::Text, "/manifest", "Dataset manifest");
  ft.add("--encoder", Kind::Text, "/encoder", "Encoder checkpoint from pretrain");
  ft.add("--runs", Kind::Int, "/runs", "Repeat with seeds seed, seed+1, ...");
  add_train_flags(ft);
  ft.add("--label-fraction", Kind::Real, "/label_fraction", "Fraction of training labels used", true);
  ft.add("--freeze", Kind::Flag, "/freeze_encoder", "Keep encoder weights fixed", true);

  auto& ev = sub("evaluate", "Score a trained model on one split", cmd_evaluate);
  ev.add("--manifest", Kind::Text, "/manifest", "Dataset manifest");
  ev.add("--model", Kind::Text, "/model", "Model checkpoint");
  ev.add("--split", Kind::Text, "/split", "train, val, test or all");
  ev.add("--split-seed", Kind::Int, "/split_seed", "Seed of the train/val/test split", true);
  ev.add("--exec", Kind::Text, "/exec", "parallel or serial", true);

  auto& inv = sub("invariance", "Score deviation under random rigid transforms", cmd_invariance);
  inv.add("--manifest", Kind::Text, "/manifest", "Dataset manifest");
  inv.add("--model", Kind::Text, "/model", "Model checkpoint");
  inv.add("--split", Kind::Text, "/split", "train, val, test or all");
  inv.add("--n-transforms", Kind::Int, "/n_transforms", "Transforms per magnitude");
  inv.add("--magnitudes", Kind::List, "/magnitudes", "Comma-separated translation lengths");
  inv.add("--seed", Kind::Int, "/seed", "Transform seed");
  inv.add("--split-seed", Kind::Int, "/split_seed", "Seed of the train/val/test split", true);
  inv.add("--exec", Kind::Text, "/exec", "parallel or serial", true);

  auto& bench = sub("bench", "Time forward+backward passes against tree size", cmd_bench);
  bench.add("--sizes", Kind::List, "/sizes", "Comma-separated node counts, ascending");
  bench.add("--trees-per-point", Kind::Int, "/trees_per_point", "Trees timed per size");
  bench.add("--seed", Kind::Int, "/seed", "Generator seed");
  bench.add("--hidden-dim", Kind::Int, "/model/encoder/hidden_dim", "Embedding width", true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    std::cout << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    if (argc > 1 && argv[1][0] != '-' && !cmds.count(argv[1]))
      std::cerr << "error: unknown subcommand '" << argv[1] << "'\n\n" << app.help();
    else
      std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  for (auto& [name, entry] : cmds) {
    auto& [cmd, handler] = entry;
    if (!cmd.app->parsed()) continue;
    try {
      return handler(cmd, load_config_file(cmd.config_path));
    } catch (const UsageError& e) {
      std::cerr << "error: " << e.what() << "\n\n" << cmd.app->help();
      return 1;
    } catch (const CLI::Error& e) {
      std::cerr << "error: " << e.what() << "\n\n" << cmd.app->help();
      return 1;
    } catch (const DataError& e) {
      std::cerr << "data error: " << e.what() << "\n";
      return 2;
    } catch (const ContractError& e) {
      std::cerr << "invalid input: " << e.what() << "\n";
      return 2;
    } catch (const fs::filesystem_error& e) {
      std::cerr << "filesystem error: " << e.what() << "\n";
      return 2;
    } catch (const NumericFailure& e) {
      std::cerr << "numeric failure: " << e.what() << "\n";
      return 3;
    } catch (const std::exception& e) {
      std::cerr << "failure: " << e.what() << "\n";
      return 3;
    }
  }
  std::cerr << app.help();
  return 1;
}

}  // namespace gtree::cli
