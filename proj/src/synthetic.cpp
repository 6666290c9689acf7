#include "gtree/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <limits>
#include <random>

#include "gtree/errors.hpp"
#include "gtree/kernels.hpp"

namespace gtree {

void GeneratorConfig::validate() const {
  if (count == 0) throw ConfigError("generator count must be positive");
  if (min_depth < 1 || max_depth < min_depth) throw ConfigError("invalid depth range");
  if (ssl_intended && !exact_nodes && min_depth < 3)
    throw ConfigError("min depth must be at least 3 for self-supervised objectives");
  if (exact_nodes && *exact_nodes < 4 && ssl_intended)
    throw ConfigError("exact_nodes must be at least 4 for self-supervised objectives");
  if (branch_probs.empty()) throw ConfigError("branch_probs must not be empty");
  double s = 0.0;
  for (double p : branch_probs) {
    if (p < 0.0) throw ConfigError("branch probabilities must be non-negative");
    s += p;
  }
  if (!(s > 0.0)) throw ConfigError("branch probabilities must not all be zero");
  if (stem_length < 0) throw ConfigError("stem_length must be non-negative");
  if (!(step_mean > 0.0) || !(step_decay > 0.0) || step_jitter < 0.0) throw ConfigError("invalid step settings");
  if (bend_low < 0.0 || bend_high > std::numbers::pi || bend_low > bend_high || bend_noise < 0.0)
    throw ConfigError("invalid bend angle settings");
  if (max_nodes < 2) throw ConfigError("max_nodes must be at least 2");
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

namespace {

Vec3 unit(const Vec3& v) { return v / norm(v); }

// Direction making angle `bend` with `dir`, at azimuth `azimuth` about it.
Vec3 bend_direction(const Vec3& dir, double bend, double azimuth) {
  const Vec3 helper = std::abs(dir.x) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
  const Vec3 u = unit(cross(dir, helper));
  const Vec3 v = cross(dir, u);
  const Vec3 perp = std::cos(azimuth) * u + std::sin(azimuth) * v;
  return unit(std::cos(bend) * dir + std::sin(bend) * perp);
}

}  // namespace

GeometricTree grow_tree(const GeneratorConfig& cfg, std::uint64_t seed, int tree_class) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::discrete_distribution<int> fanout(cfg.branch_probs.begin(), cfg.branch_probs.end());

  const int depth_limit = cfg.exact_nodes ? std::numeric_limits<int>::max()
                                          : std::uniform_int_distribution<int>(cfg.min_depth, cfg.max_depth)(rng);
  const std::size_t node_limit = cfg.exact_nodes ? *cfg.exact_nodes : cfg.max_nodes;
  // Depth scale used for the class-0 bend schedule.
  const double depth_scale = cfg.exact_nodes ? std::max(1.0, std::log2(static_cast<double>(node_limit)))
                                             : static_cast<double>(depth_limit);
  // Regression / unlabeled trees get one curvature level per tree.
  const double tree_bend = cfg.bend_low + (cfg.bend_high - cfg.bend_low) * uni(rng);

  struct Growing {
    Vec3 pos;
    Vec3 dir;
    int depth;
  };
  std::vector<NodeRecord> nodes;
  std::vector<Growing> state;
  nodes.reserve(node_limit);
  const double az0 = 2.0 * std::numbers::pi * uni(rng);
  const double pol0 = std::acos(2.0 * uni(rng) - 1.0);
  const Vec3 dir0{std::sin(pol0) * std::cos(az0), std::sin(pol0) * std::sin(az0), std::cos(pol0)};
  nodes.push_back({0, std::nullopt, Vec3{}, {}});
  state.push_back({Vec3{}, dir0, 0});

  auto bend_for = [&](int depth) {
    double mean = tree_bend;
    if (cfg.mode == SyntheticMode::Classification) {
      const double mid = 0.5 * (cfg.bend_high + cfg.bend_low);
      if (tree_class == 0 || !cfg.class_coupling) {
        const double frac = std::min(1.0, depth / depth_scale);
        mean = cfg.class_coupling ? cfg.bend_high - (cfg.bend_high - cfg.bend_low) * frac : mid;
      } else {
        mean = mid;
      }
    }
    return std::clamp(mean + cfg.bend_noise * gauss(rng), 0.05, std::numbers::pi - 0.05);
  };

  for (std::size_t head = 0; head < state.size() && nodes.size() < node_limit; ++head) {
    const Growing g = state[head];
    if (g.depth >= depth_limit) continue;
    const int kids = g.depth < cfg.stem_length ? 1 : fanout(rng) + 1;
    const double first_azimuth = 2.0 * std::numbers::pi * uni(rng);
    for (int c = 0; c < kids && nodes.size() < node_limit; ++c) {
      const double azimuth = first_azimuth + 2.0 * std::numbers::pi * c / kids + 0.3 * gauss(rng);
      const Vec3 dir = bend_direction(g.dir, bend_for(g.depth), azimuth);
      const double mean_step = cfg.step_mean * std::pow(cfg.step_decay, g.depth);
      const double step = std::max(0.1 * mean_step, mean_step * (1.0 + cfg.step_jitter * gauss(rng)));
      const Vec3 pos = g.pos + step * dir;
      NodeRecord rec;
      rec.id = static_cast<std::int64_t>(nodes.size());
      rec.parent_id = static_cast<std::int64_t>(head);
      rec.position = pos;
      nodes.push_back(std::move(rec));
      state.push_back({pos, dir, g.depth + 1});
    }
  }
  return GeometricTree::from_nodes(std::move(nodes));
}

std::vector<SyntheticSample> generate_synthetic(const GeneratorConfig& config, std::uint64_t seed) {
  config.validate();
  std::vector<SyntheticSample> out;
  out.reserve(config.count);
  for (std::size_t t = 0; t < config.count; ++t) {
    const int cls = static_cast<int>(t % 2);
    SyntheticSample s{grow_tree(config, derive_seed(seed, t), cls), {}};
    switch (config.mode) {
      case SyntheticMode::Classification:
        s.targets["class"] = cls;
        s.tree.set_label(static_cast<double>(cls));
        break;
      case SyntheticMode::Regression: {
        const auto tg = compute_targets(s.tree, Exec::Serial);
        s.targets["spatial_diameter"] = tg.diameter;
        s.targets["spatial_radius"] = tg.radius;
        s.tree.set_label(tg.diameter);
        break;
      }
      case SyntheticMode::Unlabeled:
        break;
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace gtree
