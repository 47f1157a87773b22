#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "corpn/eval.hpp"
#include "corpn/harness.hpp"
#include "oracles.hpp"

using namespace corpn;

namespace {

Box int_box(std::mt19937_64& rng, int extent, int min_side) {
  std::uniform_int_distribution<int> pos(0, extent - min_side);
  std::uniform_int_distribution<int> side(min_side, min_side * 3);
  const int x = pos(rng), y = pos(rng);
  return {double(x), double(y), double(x + side(rng)), double(y + side(rng))};
}

// Detections near ground truth so matches actually happen.
void random_case(std::mt19937_64& rng, std::vector<std::vector<Detection>>& dets,
                 std::vector<std::vector<GroundTruth>>& gt, int n_cat) {
  std::uniform_int_distribution<int> n_scenes(1, 3), n_gt(0, 3), n_det(0, 4), cat(0, n_cat - 1),
      jitter(-2, 2), grade(0, 6);
  const int s = n_scenes(rng);
  dets.assign(s, {});
  gt.assign(s, {});
  int boxes = 0;
  for (int i = 0; i < s && boxes < 10; ++i) {
    for (int g = n_gt(rng); g > 0 && boxes < 10; --g, ++boxes)
      gt[i].push_back({int_box(rng, 24, 4), cat(rng)});
    for (int d = n_det(rng); d > 0 && boxes < 10; --d, ++boxes) {
      Box b = int_box(rng, 24, 4);
      if (!gt[i].empty() && grade(rng) < 4) {
        b = gt[i][static_cast<std::size_t>(grade(rng)) % gt[i].size()].box;
        b.x1 += jitter(rng);
        b.x2 += jitter(rng);
        if (b.x2 <= b.x1) b.x2 = b.x1 + 1;
      }
      dets[i].push_back({b, grade(rng) / 6.0, cat(rng)});
    }
  }
}

}  // namespace

TEST(AvgFn, WorkedExamples) {
  using L = AnchorLabel;
  const std::vector<std::vector<double>> scores{{0.6, 0.4, 0.3, 0.1}};
  const std::vector<std::vector<L>> labels{{L::Foreground, L::Foreground, L::Foreground, L::Background}};
  EXPECT_EQ(avg_false_negatives(scores, labels), 2.0);
  const std::vector<std::vector<double>> high{{0.6, 0.5, 0.9, 0.1}};
  EXPECT_EQ(avg_false_negatives(high, labels), 0.0);
}

TEST(AvgFn, MatchesRecountAndIsMonotone) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0, 1);
  for (int t = 0; t < 200; ++t) {
    std::vector<std::vector<double>> sc(3);
    std::vector<std::vector<AnchorLabel>> lab(3);
    double count = 0;
    for (int s = 0; s < 3; ++s) {
      for (int a = 0; a < 20; ++a) {
        sc[s].push_back(u(rng));
        lab[s].push_back(static_cast<AnchorLabel>(static_cast<int>(u(rng) * 3)));
        count += lab[s].back() == AnchorLabel::Foreground && sc[s].back() < 0.5;
      }
    }
    const double v = avg_false_negatives(sc, lab);
    EXPECT_DOUBLE_EQ(v, count / 3.0);
    for (std::size_t a = 0; a < 20; ++a) {
      if (lab[1][a] != AnchorLabel::Foreground) continue;
      sc[1][a] = std::min(1.0, sc[1][a] + 0.3);
      const double w = avg_false_negatives(sc, lab);
      EXPECT_LE(w, v);
      break;
    }
  }
}

TEST(AvgFg, WorkedExamples) {
  EXPECT_EQ(avg_foreground_after_nms({}), 0.0);
  const std::vector<std::vector<std::uint8_t>> kept{{1, 1, 1, 0}, {1, 1, 1, 1, 1, 0, 0}};
  EXPECT_EQ(avg_foreground_after_nms(kept), 4.0);
}

TEST(Recall, WorkedExamples) {
  const std::vector<Box> gt{{0, 0, 10, 10}, {20, 20, 30, 30}, {50, 50, 60, 60}};
  EXPECT_EQ(proposal_recall(gt, gt), 1.0);
  EXPECT_EQ(proposal_recall(std::vector<Box>{}, gt), 0.0);
  EXPECT_EQ(proposal_recall(std::vector<Box>{}, std::vector<Box>{}), 1.0);
  // Two gt hit (one exactly, one at IOU 2/3), one missed (IOU 1/3), two strays.
  const std::vector<Box> props{
      {0, 0, 10, 10}, {20, 20, 35, 30}, {50, 50, 80, 60}, {80, 80, 90, 90}, {0, 40, 5, 45}};
  EXPECT_DOUBLE_EQ(proposal_recall(props, gt), 2.0 / 3.0);
  // Only the first proposal counts at top_k = 1.
  EXPECT_DOUBLE_EQ(proposal_recall(props, gt, 0.5, 1), 1.0 / 3.0);
}

TEST(Ap50, WorkedExamples) {
  const std::vector<std::vector<GroundTruth>> gt{{{{0, 0, 10, 10}, 0}, {{20, 20, 30, 30}, 1}}};
  const std::vector<std::vector<Detection>> perfect{{{{0, 0, 10, 10}, 0.9, 0}, {{20, 20, 30, 30}, 0.8, 1}}};
  const auto a = ap50(perfect, gt, 3);
  EXPECT_EQ(a.per_category[0], 1.0);
  EXPECT_EQ(a.per_category[1], 1.0);
  EXPECT_TRUE(std::isnan(a.per_category[2]));
  EXPECT_EQ(a.mean, 1.0);
  const std::vector<std::vector<Detection>> swapped{{{{0, 0, 10, 10}, 0.9, 1}, {{20, 20, 30, 30}, 0.8, 0}}};
  EXPECT_EQ(ap50(swapped, gt, 2).mean, 0.0);

  // Four detections against three gt of one class: hit, miss, hit, duplicate.
  const std::vector<std::vector<GroundTruth>> g3{
      {{{0, 0, 10, 10}, 0}, {{20, 0, 30, 10}, 0}, {{40, 0, 50, 10}, 0}}};
  const std::vector<std::vector<Detection>> d4{{{{0, 0, 10, 10}, 0.9, 0},
                                                {{70, 70, 80, 80}, 0.8, 0},
                                                {{20, 0, 30, 10}, 0.7, 0},
                                                {{0, 0, 10, 10}, 0.6, 0}}};
  // Precisions 1, 1/2, 2/3, 1/2 at recalls 1/3, 1/3, 2/3, 2/3.
  const double expect = (1.0 + 2.0 / 3.0) / 3.0;
  EXPECT_NEAR(ap50(d4, g3, 1).mean, expect, 1e-15);
  EXPECT_NEAR(oracle::category_ap(d4, g3, 0), expect, 1e-15);
}

TEST(Ap50, InvariantToMonotoneScoreChange) {
  std::mt19937_64 rng(17);
  for (int t = 0; t < 200; ++t) {
    std::vector<std::vector<Detection>> d;
    std::vector<std::vector<GroundTruth>> g;
    random_case(rng, d, g, 2);
    const auto a = ap50(d, g, 2);
    for (auto& scene : d)
      for (auto& det : scene) det.score = std::exp(3 * det.score) - 7;
    const auto b = ap50(d, g, 2);
    for (std::size_t c = 0; c < 2; ++c) {
      if (std::isnan(a.per_category[c])) {
        EXPECT_TRUE(std::isnan(b.per_category[c]));
      } else {
        EXPECT_EQ(a.per_category[c], b.per_category[c]);
      }
    }
  }
}

TEST(Ap50, MatchesExhaustiveOracle) {
  std::mt19937_64 rng(31);
  for (int t = 0; t < 1000; ++t) {
    std::vector<std::vector<Detection>> d;
    std::vector<std::vector<GroundTruth>> g;
    random_case(rng, d, g, 2);
    const auto a = ap50(d, g, 2);
    for (int c = 0; c < 2; ++c) {
      const double want = oracle::category_ap(d, g, c);
      if (want < 0) {
        EXPECT_TRUE(std::isnan(a.per_category[static_cast<std::size_t>(c)]));
      } else {
        EXPECT_NEAR(a.per_category[static_cast<std::size_t>(c)], want, 1e-12) << t;
      }
    }
  }
}

TEST(AllPointsAp, EnvelopeAndErrors) {
  const std::vector<double> r{0.5, 0.5, 1.0}, p{1.0, 0.5, 2.0 / 3.0};
  EXPECT_NEAR(all_points_ap(r, p), 0.5 + 0.5 * 2.0 / 3.0, 1e-15);
  EXPECT_THROW(all_points_ap(r, std::vector<double>{1.0}), std::invalid_argument);
}

TEST(Evaluate, RecordIsWellFormed) {
  ExperimentSpec spec;
  spec.train.phase1_steps = 60;
  spec.episode.n_test_scenes = 20;
  const RunOutput out = run_pipeline(spec, 3);
  const auto& m = out.metrics;
  for (double ap : {m.novel_ap50, m.base_ap50, m.proposal_recall}) {
    EXPECT_GE(ap, 0.0);
    EXPECT_LE(ap, 1.0);
  }
  EXPECT_GE(m.avg_fn, 0.0);
  EXPECT_GE(m.avg_fg, 0.0);
  EXPECT_TRUE(std::isfinite(m.logdet_cov));
  EXPECT_EQ(run_pipeline(spec, 3).metrics, m);
}
