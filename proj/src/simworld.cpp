#include "corpn/simworld.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <optional>
#include <sstream>

#include "corpn/rng.hpp"
#include "corpn/textio.hpp"

namespace corpn {

namespace {

enum class Part : std::uint64_t { Train = 1, NovelSupport = 2, BaseSupport = 3, Test = 4, Holdout = 5 };

const char* part_name(Part p) {
  switch (p) {
    case Part::Train: return "train";
    case Part::NovelSupport: return "novel_support";
    case Part::BaseSupport: return "base_support";
    case Part::Test: return "test";
    case Part::Holdout: return "holdout";
  }
  return "?";
}

void normalize(std::span<double> v) {
  double sq = 0.0;
  for (double x : v) sq += x * x;
  const double n = std::sqrt(sq);
  if (n > 0.0)
    for (double& x : v) x /= n;
}

std::vector<double> random_unit(Rng& rng, std::size_t dim) {
  std::vector<double> v(dim);
  for (double& x : v) x = normal(rng);
  normalize(v);
  return v;
}

/// Random unit vector inside span(basis columns [first, last)).
std::vector<double> random_in_subspace(Rng& rng, const Matrix& basis, std::size_t first,
                                       std::size_t last) {
  const std::size_t d = basis.rows();
  std::vector<double> coeff = random_unit(rng, last - first);
  std::vector<double> v(d, 0.0);
  for (std::size_t c = first; c < last; ++c)
    for (std::size_t r = 0; r < d; ++r) v[r] += coeff[c - first] * basis(r, c);
  normalize(v);
  return v;
}

Matrix random_orthonormal(Rng& rng, std::size_t d) {
  Matrix q(d, d);
  for (double& x : q.data()) x = normal(rng);
  // Modified Gram-Schmidt over columns.
  for (std::size_t c = 0; c < d; ++c) {
    for (std::size_t p = 0; p < c; ++p) {
      double dot = 0.0;
      for (std::size_t r = 0; r < d; ++r) dot += q(r, c) * q(r, p);
      for (std::size_t r = 0; r < d; ++r) q(r, c) -= dot * q(r, p);
    }
    double sq = 0.0;
    for (std::size_t r = 0; r < d; ++r) sq += q(r, c) * q(r, c);
    const double n = std::sqrt(sq);
    for (std::size_t r = 0; r < d; ++r) q(r, c) /= n;
  }
  return q;
}

Box sample_box(Rng& rng, const WorldConfig& cfg) {
  const auto& scales = cfg.anchor_scales;
  const auto& ratios = cfg.anchor_ratios;
  const double s = scales[std::uniform_int_distribution<std::size_t>(0, scales.size() - 1)(rng)];
  const double r = ratios[std::uniform_int_distribution<std::size_t>(0, ratios.size() - 1)(rng)];
  double w = s / std::sqrt(r) * uniform(rng, 1.0 - cfg.size_jitter, 1.0 + cfg.size_jitter);
  double h = s * std::sqrt(r) * uniform(rng, 1.0 - cfg.size_jitter, 1.0 + cfg.size_jitter);
  w = std::min(w, cfg.image_size);
  h = std::min(h, cfg.image_size);
  const double x1 = uniform(rng, 0.0, cfg.image_size - w);
  const double y1 = uniform(rng, 0.0, cfg.image_size - h);
  return {x1, y1, x1 + w, y1 + h};
}

std::uint64_t scene_uid(std::uint64_t episode_seed, Part part, std::size_t index) {
  return stream_seed(episode_seed, Stream::Scene, {static_cast<std::uint64_t>(part), index});
}

int pick(Rng& rng, const std::vector<int>& from) {
  return from[std::uniform_int_distribution<std::size_t>(0, from.size() - 1)(rng)];
}

std::size_t pick_count(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

}  // namespace

std::size_t WorldConfig::grid_size() const {
  return static_cast<std::size_t>(std::floor(image_size / stride));
}

void WorldConfig::validate() const {
  if (feature_dim < 4) throw std::invalid_argument("world.feature_dim must be >= 4");
  if (n_base < 1 || n_novel < 1) throw std::invalid_argument("world: class counts must be >= 1");
  if (!(novel_shift >= 0.0 && novel_shift <= 1.0))
    throw std::invalid_argument("world.novel_shift must be in [0, 1]");
  if (!(objectness >= 0.0 && objectness <= 1.0))
    throw std::invalid_argument("world.objectness must be in [0, 1]");
  if (!(noise_sigma >= 0.0)) throw std::invalid_argument("world.noise_sigma must be >= 0");
  if (!(image_size > 0.0) || !(stride > 0.0) || grid_size() < 1)
    throw std::invalid_argument("world: image_size/stride must give at least one cell");
  if (anchor_scales.empty() || anchor_ratios.empty())
    throw std::invalid_argument("world: anchor scales and ratios must be nonempty");
  if (!(size_jitter >= 0.0 && size_jitter < 1.0))
    throw std::invalid_argument("world.size_jitter must be in [0, 1)");
  if (train_objects_min < 1 || train_objects_min > train_objects_max)
    throw std::invalid_argument("world: need 1 <= train_objects_min <= train_objects_max");
  if (test_objects_min < 1 || test_objects_min > test_objects_max)
    throw std::invalid_argument("world: need 1 <= test_objects_min <= test_objects_max");
  if (clutter_min > clutter_max) throw std::invalid_argument("world: clutter_min > clutter_max");
  if (!(test_novel_fraction >= 0.0 && test_novel_fraction <= 1.0))
    throw std::invalid_argument("world.test_novel_fraction must be in [0, 1]");
}

bool CategorySplit::is_novel(int category) const {
  return std::find(novel.begin(), novel.end(), category) != novel.end();
}

std::vector<Box> Scene::gt_boxes() const {
  std::vector<Box> out;
  out.reserve(objects.size());
  for (const auto& o : objects) out.push_back(o.box);
  return out;
}

World make_world(const WorldConfig& config) {
  config.validate();
  World w;
  w.config = config;
  for (std::size_t c = 0; c < config.n_base; ++c) w.split.base.push_back(static_cast<int>(c));
  for (std::size_t c = 0; c < config.n_novel; ++c)
    w.split.novel.push_back(static_cast<int>(config.n_base + c));
  const std::size_t g = config.grid_size();
  w.anchors = generate_anchors(g, g, config.stride, config.anchor_scales, config.anchor_ratios);
  w.contained.resize(w.anchors.size());
  for (std::size_t a = 0; a < w.anchors.size(); ++a) {
    for (std::size_t b = 0; b < w.anchors.size(); ++b) {
      if (w.anchors[a].contains(w.anchors[b])) w.contained[a].push_back(b);
    }
  }

  const std::size_t d = config.feature_dim;
  Rng rng = make_rng(config.seed, Stream::World);
  w.basis = random_orthonormal(rng, d);
  w.objectness.resize(d);
  for (std::size_t r = 0; r < d; ++r) w.objectness[r] = w.basis(r, 0);

  // Column 0 is objectness; [1, mid) is the base subspace, [mid, d) the
  // subspace only novel classes use.
  const std::size_t mid = 1 + (d - 1) / 2;
  const double rho = config.objectness;
  const double theta = config.novel_shift * std::numbers::pi / 2.0;
  const double rho_novel = rho * (1.0 - config.novel_shift);

  w.prototypes = Matrix(w.split.n_categories(), d);
  auto compose = [&](std::size_t row, double along_u, const std::vector<double>& z) {
    const double rest = std::sqrt(std::max(0.0, 1.0 - along_u * along_u));
    auto p = w.prototypes.row(row);
    for (std::size_t r = 0; r < d; ++r) p[r] = along_u * w.objectness[r] + rest * z[r];
    normalize(p);
  };
  for (int c : w.split.base) {
    compose(static_cast<std::size_t>(c), rho, random_in_subspace(rng, w.basis, 1, mid));
  }
  for (int c : w.split.novel) {
    const auto zb = random_in_subspace(rng, w.basis, 1, mid);
    const auto zn = random_in_subspace(rng, w.basis, mid, d);
    std::vector<double> z(d);
    for (std::size_t r = 0; r < d; ++r) z[r] = std::cos(theta) * zb[r] + std::sin(theta) * zn[r];
    compose(static_cast<std::size_t>(c), rho_novel, z);
  }
  return w;
}

Matrix render_features(const Scene& scene, const World& world) {
  return render_features(scene, world, world.config.noise_sigma);
}

Matrix render_features(const Scene& scene, const World& world, double noise_sigma) {
  const std::size_t d = world.feature_dim();
  const std::size_t n = world.anchors.size();
  Matrix x(d, n);
  const std::uint64_t key = stream_seed(world.config.seed, Stream::FeatureNoise, {scene.uid});
  for (std::size_t a = 0; a < n; ++a) {
    const Box& anchor = world.anchors[a];
    for (const auto& obj : scene.objects) {
      const double w = iou(anchor, obj.box);
      if (w <= 0.0) continue;
      auto p = world.prototype(obj.category);
      for (std::size_t r = 0; r < d; ++r) x(r, a) += w * p[r];
    }
    for (const auto& cl : scene.clutter) {
      const double w = iou(anchor, cl.box) * world.config.clutter_gain;
      if (w <= 0.0) continue;
      for (std::size_t r = 0; r < d; ++r) x(r, a) += w * cl.direction[r];
    }
    if (noise_sigma > 0.0) {
      for (std::size_t r = 0; r < d; ++r) x(r, a) += noise_sigma * counter_normal(key, a * d + r);
    }
  }
  return x;
}

Scene make_scene(const World& world, std::uint64_t uid, std::span<const int> categories,
                 std::uint64_t seed) {
  const WorldConfig& cfg = world.config;
  Rng rng = make_rng(seed, Stream::Scene, {uid});
  Scene scene;
  scene.uid = uid;
  scene.extent = cfg.image_size;
  constexpr int kAttempts = 200;

  auto try_place = [&]() -> std::optional<Box> {
    for (int attempt = 0; attempt < kAttempts; ++attempt) {
      const Box b = sample_box(rng, cfg);
      bool ok = true;
      for (const auto& o : scene.objects) ok = ok && iou(b, o.box) <= cfg.max_object_overlap;
      for (const auto& c : scene.clutter) ok = ok && iou(b, c.box) <= cfg.max_object_overlap;
      if (ok) return b;
    }
    return std::nullopt;
  };

  for (int c : categories) {
    if (c < 0 || static_cast<std::size_t>(c) >= world.split.n_categories()) {
      throw std::invalid_argument("make_scene: unknown category " + std::to_string(c));
    }
    const auto b = try_place();
    if (!b) {
      throw PlacementError("cannot place object after " + std::to_string(kAttempts) +
                           " attempts (scene has " + std::to_string(scene.objects.size()) +
                           " objects)");
    }
    scene.objects.push_back({c, *b});
  }
  const std::size_t n_clutter = pick_count(rng, cfg.clutter_min, cfg.clutter_max);
  for (std::size_t i = 0; i < n_clutter; ++i) {
    // Clutter is decoration: a crowded scene just gets less of it.
    const auto b = try_place();
    if (!b) break;
    scene.clutter.push_back({*b, random_unit(rng, cfg.feature_dim)});
  }
  return scene;
}

Episode make_episode(const World& world, const EpisodeConfig& config) {
  if (config.shots < 1) throw std::invalid_argument("make_episode: shots must be >= 1");
  const WorldConfig& wc = world.config;
  Episode ep;
  ep.split = world.split;
  ep.shots = config.shots;

  auto random_scene = [&](Part part, std::size_t index, bool mixed, std::size_t lo,
                          std::size_t hi) {
    const std::uint64_t uid = scene_uid(config.seed, part, index);
    Rng rng = make_rng(config.seed, Stream::Scene, {uid, 1});
    const std::size_t n = pick_count(rng, lo, hi);
    std::vector<int> cats;
    for (std::size_t i = 0; i < n; ++i) {
      const bool novel = mixed && uniform01(rng) < wc.test_novel_fraction;
      cats.push_back(pick(rng, novel ? world.split.novel : world.split.base));
    }
    return make_scene(world, uid, cats, config.seed);
  };

  for (std::size_t i = 0; i < config.n_train_scenes; ++i) {
    ep.base_train.push_back(
        random_scene(Part::Train, i, false, wc.train_objects_min, wc.train_objects_max));
  }
  auto support = [&](Part part, const std::vector<int>& classes, std::vector<Scene>& out) {
    std::size_t index = 0;
    for (int c : classes) {
      for (std::size_t s = 0; s < config.shots; ++s, ++index) {
        const int cat[1] = {c};
        out.push_back(make_scene(world, scene_uid(config.seed, part, index), cat, config.seed));
      }
    }
  };
  support(Part::NovelSupport, world.split.novel, ep.novel_support);
  support(Part::BaseSupport, world.split.base, ep.base_support);
  for (std::size_t i = 0; i < config.n_test_scenes; ++i) {
    ep.test.push_back(random_scene(Part::Test, i, true, wc.test_objects_min, wc.test_objects_max));
  }
  for (std::size_t i = 0; i < config.n_holdout_scenes; ++i) {
    ep.holdout.push_back(
        random_scene(Part::Holdout, i, false, wc.train_objects_min, wc.train_objects_max));
  }
  return ep;
}

std::string export_episode(const Episode& episode) {
  std::ostringstream os;
  os << "# corpn-episode 1 shots=" << episode.shots << "\n";
  char buf[256];
  auto dump = [&](Part part, const std::vector<Scene>& scenes) {
    for (std::size_t i = 0; i < scenes.size(); ++i) {
      for (const auto& o : scenes[i].objects) {
        std::snprintf(buf, sizeof buf, "%s/%zu,%d,%.17g,%.17g,%.17g,%.17g\n", part_name(part), i,
                      o.category, o.box.x1, o.box.y1, o.box.x2, o.box.y2);
        os << buf;
      }
    }
  };
  dump(Part::Train, episode.base_train);
  dump(Part::NovelSupport, episode.novel_support);
  dump(Part::BaseSupport, episode.base_support);
  dump(Part::Test, episode.test);
  dump(Part::Holdout, episode.holdout);
  return os.str();
}

std::vector<ExportedObject> parse_episode_export(std::string_view text) {
  std::vector<ExportedObject> out;
  std::istringstream is{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 6) {
      throw FormatError("episode export line " + std::to_string(line_no) + ": expected 6 fields");
    }
    ExportedObject o;
    o.scene_id = fields[0];
    o.category = static_cast<int>(parse_int(fields[1]));
    o.box = {parse_double(fields[2]), parse_double(fields[3]), parse_double(fields[4]),
             parse_double(fields[5])};
    out.push_back(std::move(o));
  }
  return out;
}

}  // namespace corpn
