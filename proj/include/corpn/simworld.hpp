#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "corpn/geometry.hpp"
#include "corpn/linalg.hpp"

namespace corpn {

/// Knobs of the synthetic detection world. Defaults are the calibrated world.
struct WorldConfig {
  std::uint64_t seed = 1;
  std::size_t n_base = 6;
  std::size_t n_novel = 3;
  std::size_t feature_dim = 16;
  /// 0 draws novel prototypes from the base distribution; 1 moves them fully
  /// off the shared objectness direction into a subspace base training never
  /// sees.
  double novel_shift = 0.25;
  /// Cosine between a base prototype and the shared objectness direction.
  double objectness = 0.6;
  double noise_sigma = 0.1;

  double image_size = 96.0;
  double stride = 8.0;
  std::vector<double> anchor_scales{24.0, 40.0};
  std::vector<double> anchor_ratios{0.5, 1.0, 2.0};
  /// Object side jitter around an anchor shape, multiplicative.
  double size_jitter = 0.15;
  /// Maximum IOU allowed between two placed objects.
  double max_object_overlap = 0.1;

  std::size_t train_objects_min = 1;
  std::size_t train_objects_max = 3;
  std::size_t test_objects_min = 2;
  std::size_t test_objects_max = 4;
  /// Probability that a test object is drawn from the novel classes.
  double test_novel_fraction = 0.5;

  /// Unannotated distractors: random-direction blobs scaled by clutter_gain.
  std::size_t clutter_min = 1;
  std::size_t clutter_max = 3;
  double clutter_gain = 0.5;

  std::size_t grid_size() const;
  void validate() const;
};

struct CategorySplit {
  std::vector<int> base;
  std::vector<int> novel;

  bool is_novel(int category) const;
  std::size_t n_categories() const { return base.size() + novel.size(); }
};

struct Object {
  int category = 0;
  Box box;
};

struct Clutter {
  Box box;
  std::vector<double> direction;  // unit norm, scaled by clutter_gain when rendered
};

struct Scene {
  /// Unique key within an episode; seeds the feature noise.
  std::uint64_t uid = 0;
  double extent = 0.0;
  std::vector<Object> objects;
  std::vector<Clutter> clutter;

  std::vector<Box> gt_boxes() const;
};

/// Immutable world parameters.
struct World {
  WorldConfig config;
  CategorySplit split;
  std::vector<Box> anchors;
  Matrix prototypes;              // n_categories x D, unit rows
  std::vector<double> objectness;  // shared direction u, unit norm
  Matrix basis;                    // D x D orthonormal; column 0 is u
  /// For each anchor, the anchors lying fully inside it (itself included).
  std::vector<std::vector<std::size_t>> contained;

  std::size_t feature_dim() const { return config.feature_dim; }
  std::span<const double> prototype(int category) const {
    return prototypes.row(static_cast<std::size_t>(category));
  }
};

World make_world(const WorldConfig& config);

/// Anchor features, D x N_A. Column a is the IOU-weighted sum of overlapping
/// object prototypes and clutter directions plus N(0, sigma^2) noise keyed by
/// (world seed, scene uid, anchor index).
Matrix render_features(const Scene& scene, const World& world);
Matrix render_features(const Scene& scene, const World& world, double noise_sigma);

struct Episode {
  CategorySplit split;
  std::size_t shots = 1;
  std::vector<Scene> base_train;
  /// Exactly `shots` single-object scenes per novel class.
  std::vector<Scene> novel_support;
  /// Exactly `shots` single-object scenes per base class (balanced fine-tuning).
  std::vector<Scene> base_support;
  std::vector<Scene> test;
  /// Base-only scenes never used for training, for held-out statistics.
  std::vector<Scene> holdout;
};

struct EpisodeConfig {
  std::size_t shots = 1;
  std::size_t n_train_scenes = 120;
  std::size_t n_test_scenes = 200;
  std::size_t n_holdout_scenes = 8;
  std::uint64_t seed = 1;
};

class PlacementError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

Episode make_episode(const World& world, const EpisodeConfig& config);

/// Samples one scene with the given categories. Throws PlacementError when the
/// objects cannot be placed within the extent.
Scene make_scene(const World& world, std::uint64_t uid, std::span<const int> categories,
                 std::uint64_t seed);

/// Line-oriented export. Header "# corpn-episode 1 shots=<k>", then one line
/// per object: scene_id,category,x1,y1,x2,y2 where scene_id is
/// <part>/<index> and part is one of train, novel_support, base_support,
/// test, holdout. Coordinates use %.17g so the round trip is exact.
std::string export_episode(const Episode& episode);

struct ExportedObject {
  std::string scene_id;
  int category = 0;
  Box box;
};

std::vector<ExportedObject> parse_episode_export(std::string_view text);

}  // namespace corpn
