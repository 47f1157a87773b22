#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <set>

#include "corpn/simworld.hpp"

using namespace corpn;

namespace {

WorldConfig small_world() {
  WorldConfig c;
  c.seed = 3;
  return c;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

TEST(World, PrototypesAreUnitNorm) {
  const World w = make_world(small_world());
  for (std::size_t c = 0; c < w.prototypes.rows(); ++c) {
    EXPECT_NEAR(dot(w.prototypes.row(c), w.prototypes.row(c)), 1.0, 1e-12);
  }
  EXPECT_NEAR(dot(w.objectness, w.objectness), 1.0, 1e-12);
}

TEST(World, SplitIsDisjointAndComplete) {
  const World w = make_world(small_world());
  std::set<int> all(w.split.base.begin(), w.split.base.end());
  for (int c : w.split.novel) EXPECT_TRUE(all.insert(c).second);
  EXPECT_EQ(all.size(), w.split.n_categories());
  EXPECT_TRUE(w.split.is_novel(w.split.novel.front()));
  EXPECT_FALSE(w.split.is_novel(w.split.base.front()));
}

TEST(World, DeterministicForSeed) {
  const World a = make_world(small_world()), b = make_world(small_world());
  EXPECT_EQ(a.prototypes, b.prototypes);
  EXPECT_EQ(a.anchors, b.anchors);
  auto other = small_world();
  other.seed = 4;
  EXPECT_NE(make_world(other).prototypes, a.prototypes);
}

TEST(World, ZeroShiftDrawsNovelLikeBase) {
  auto cfg = small_world();
  cfg.novel_shift = 0.0;
  const World w = make_world(cfg);
  const std::size_t d = cfg.feature_dim, mid = 1 + (d - 1) / 2;
  for (std::size_t c = 0; c < w.split.n_categories(); ++c) {
    const auto p = w.prototypes.row(c);
    EXPECT_NEAR(dot(p, w.objectness), cfg.objectness, 1e-12);
    // Nothing in the directions reserved for shifted novel classes.
    for (std::size_t k = mid; k < d; ++k) {
      std::vector<double> e(d);
      for (std::size_t r = 0; r < d; ++r) e[r] = w.basis(r, k);
      EXPECT_NEAR(dot(p, e), 0.0, 1e-12);
    }
  }
}

TEST(World, ShiftReducesNovelObjectness) {
  auto cfg = small_world();
  cfg.novel_shift = 0.6;
  const World w = make_world(cfg);
  for (int c : w.split.base)
    EXPECT_NEAR(dot(w.prototype(c), w.objectness), cfg.objectness, 1e-12);
  for (int c : w.split.novel)
    EXPECT_NEAR(dot(w.prototype(c), w.objectness), cfg.objectness * 0.4, 1e-12);
}

TEST(World, RejectsBadConfig) {
  auto cfg = small_world();
  cfg.feature_dim = 3;
  EXPECT_THROW(make_world(cfg), std::invalid_argument);
  cfg = small_world();
  cfg.novel_shift = 1.5;
  EXPECT_THROW(make_world(cfg), std::invalid_argument);
  cfg = small_world();
  cfg.n_novel = 0;
  EXPECT_THROW(make_world(cfg), std::invalid_argument);
}

TEST(Render, EmptySceneIsPureNoise) {
  const World w = make_world(small_world());
  Scene s;
  s.uid = 17;
  s.extent = w.config.image_size;
  const Matrix x = render_features(s, w);
  const Matrix quiet = render_features(s, w, 0.0);
  for (double v : quiet.data()) EXPECT_EQ(v, 0.0);
  double sum = 0, sq = 0;
  for (double v : x.data()) {
    sum += v;
    sq += v * v;
  }
  const double n = static_cast<double>(x.size());
  EXPECT_NEAR(sum / n, 0.0, 0.01);
  EXPECT_NEAR(std::sqrt(sq / n), w.config.noise_sigma, 0.01);
}

TEST(Render, AnchorOnLoneObjectIsItsPrototype) {
  const World w = make_world(small_world());
  Scene s;
  s.uid = 1;
  s.extent = w.config.image_size;
  const std::size_t a = 100;
  s.objects.push_back({2, w.anchors[a]});
  const Matrix x = render_features(s, w, 0.0);
  for (std::size_t r = 0; r < w.feature_dim(); ++r) EXPECT_EQ(x(r, a), w.prototype(2)[r]);
}

TEST(Render, BlendMatchesDirectRecomputation) {
  const World w = make_world(small_world());
  const Scene s = make_scene(w, 5, std::vector<int>{0, 7, 3}, 11);
  const Matrix x = render_features(s, w, 0.0);
  for (std::size_t a = 0; a < w.anchors.size(); a += 7) {
    for (std::size_t r = 0; r < w.feature_dim(); ++r) {
      double expect = 0;
      for (const auto& o : s.objects) expect += iou(w.anchors[a], o.box) * w.prototype(o.category)[r];
      for (const auto& c : s.clutter)
        expect += w.config.clutter_gain * iou(w.anchors[a], c.box) * c.direction[r];
      EXPECT_NEAR(x(r, a), expect, 1e-12);
    }
  }
}

TEST(Render, NoiseIsKeyedByScene) {
  const World w = make_world(small_world());
  const Scene s = make_scene(w, 9, std::vector<int>{1}, 2);
  EXPECT_EQ(render_features(s, w), render_features(s, w));
  Scene t = s;
  t.uid = 10;
  EXPECT_NE(render_features(s, w), render_features(t, w));
}

TEST(Scene, BoxesStayInsideExtent) {
  const World w = make_world(small_world());
  const Box frame{0, 0, w.config.image_size, w.config.image_size};
  for (std::uint64_t uid = 0; uid < 200; ++uid) {
    const Scene s = make_scene(w, uid, std::vector<int>{0, 1, 6}, 4);
    ASSERT_EQ(s.objects.size(), 3u);
    for (const auto& o : s.objects) EXPECT_TRUE(frame.contains(o.box));
    for (std::size_t i = 0; i < s.objects.size(); ++i)
      for (std::size_t j = i + 1; j < s.objects.size(); ++j)
        EXPECT_LE(iou(s.objects[i].box, s.objects[j].box), w.config.max_object_overlap);
  }
}

TEST(Scene, ImpossiblePlacementThrows) {
  const World w = make_world(small_world());
  const std::vector<int> crowd(60, 0);
  EXPECT_THROW(make_scene(w, 1, crowd, 1), PlacementError);
  EXPECT_THROW(make_scene(w, 1, std::vector<int>{99}, 1), std::invalid_argument);
}

TEST(Episode, SupportCountsAndBaseOnlyTraining) {
  const World w = make_world(small_world());
  for (std::size_t k : {1u, 3u}) {
    EpisodeConfig ec;
    ec.shots = k;
    ec.n_train_scenes = 40;
    ec.n_test_scenes = 10;
    const Episode ep = make_episode(w, ec);
    EXPECT_EQ(ep.novel_support.size(), k * w.split.novel.size());
    EXPECT_EQ(ep.base_support.size(), k * w.split.base.size());
    std::map<int, std::size_t> per_class;
    for (const auto& s : ep.novel_support) {
      ASSERT_EQ(s.objects.size(), 1u);
      ++per_class[s.objects[0].category];
    }
    for (int c : w.split.novel) EXPECT_EQ(per_class[c], k);
    for (const auto& s : ep.base_train) {
      EXPECT_GE(s.objects.size(), 1u);
      for (const auto& o : s.objects) EXPECT_FALSE(w.split.is_novel(o.category));
    }
    for (const auto& s : ep.holdout)
      for (const auto& o : s.objects) EXPECT_FALSE(w.split.is_novel(o.category));
  }
  EpisodeConfig bad;
  bad.shots = 0;
  EXPECT_THROW(make_episode(w, bad), std::invalid_argument);
}

TEST(Episode, TestMixtureMatchesConfiguredFraction) {
  const World w = make_world(small_world());
  EpisodeConfig ec;
  ec.n_train_scenes = 1;
  ec.n_test_scenes = 1000;
  const Episode ep = make_episode(w, ec);
  std::size_t novel = 0, total = 0;
  std::map<int, std::size_t> per_class;
  for (const auto& s : ep.test) {
    for (const auto& o : s.objects) {
      novel += w.split.is_novel(o.category);
      ++total;
      ++per_class[o.category];
    }
  }
  const double p = w.config.test_novel_fraction;
  const double sd = std::sqrt(p * (1 - p) / static_cast<double>(total));
  EXPECT_NEAR(static_cast<double>(novel) / static_cast<double>(total), p, 4 * sd);
  // Within each group classes are uniform.
  for (int c : w.split.novel) {
    const double q = p / static_cast<double>(w.split.novel.size());
    const double e = q * static_cast<double>(total);
    EXPECT_NEAR(static_cast<double>(per_class[c]), e, 4 * std::sqrt(e * (1 - q)));
  }
}

TEST(Episode, DeterministicAndExportRoundTrips) {
  const World w = make_world(small_world());
  EpisodeConfig ec;
  ec.n_train_scenes = 12;
  ec.n_test_scenes = 6;
  const std::string a = export_episode(make_episode(w, ec));
  EXPECT_EQ(a, export_episode(make_episode(w, ec)));
  EXPECT_EQ(a.rfind("# corpn-episode 1 shots=1\n", 0), 0u);
  const auto parsed = parse_episode_export(a);
  const Episode ep = make_episode(w, ec);
  ASSERT_FALSE(parsed.empty());
  EXPECT_EQ(parsed.front().scene_id, "train/0");
  EXPECT_EQ(parsed.front().box, ep.base_train[0].objects[0].box);
  EXPECT_EQ(parsed.front().category, ep.base_train[0].objects[0].category);
}
