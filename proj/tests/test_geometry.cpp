#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "corpn/geometry.hpp"
#include "oracles.hpp"

using corpn::Box;

namespace {

Box random_int_box(std::mt19937_64& rng, int extent) {
  std::uniform_int_distribution<int> d(0, extent);
  int x1 = d(rng), x2 = d(rng), y1 = d(rng), y2 = d(rng);
  if (x1 > x2) std::swap(x1, x2);
  if (y1 > y2) std::swap(y1, y2);
  return {double(x1), double(y1), double(x2), double(y2)};
}

}  // namespace

TEST(Iou, WorkedExamples) {
  const Box b{3, 4, 10, 12};
  EXPECT_DOUBLE_EQ(corpn::iou(b, b), 1.0);
  EXPECT_EQ(corpn::iou({0, 0, 1, 1}, {2, 2, 3, 3}), 0.0);
  EXPECT_NEAR(corpn::iou({0, 0, 2, 2}, {1, 1, 3, 3}), 1.0 / 7.0, 1e-15);
}

TEST(Iou, DegenerateBoxesGiveZero) {
  EXPECT_EQ(corpn::iou({1, 1, 1, 5}, {0, 0, 4, 4}), 0.0);
  EXPECT_EQ(corpn::iou({2, 2, 2, 2}, {2, 2, 2, 2}), 0.0);
}

TEST(Iou, MatchesRasterOracle) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 2000; ++i) {
    const Box a = random_int_box(rng, 16), b = random_int_box(rng, 16);
    const double v = corpn::iou(a, b);
    EXPECT_EQ(v, oracle::raster_iou(a, b)) << i;
    EXPECT_EQ(v, corpn::iou(b, a));
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Anchors, SingleCell) {
  const double s[] = {16.0}, r[] = {1.0};
  const auto a = corpn::generate_anchors(1, 1, 16, s, r);
  ASSERT_EQ(a.size(), 1u);
  EXPECT_EQ(a[0], (Box{0, 0, 16, 16}));
}

TEST(Anchors, RowMajorCenters) {
  const double s[] = {16.0}, r[] = {1.0};
  const auto a = corpn::generate_anchors(2, 2, 16, s, r);
  ASSERT_EQ(a.size(), 4u);
  const double cx[] = {8, 24, 8, 24}, cy[] = {8, 8, 24, 24};
  for (int i = 0; i < 4; ++i) {
    EXPECT_DOUBLE_EQ(a[i].cx(), cx[i]);
    EXPECT_DOUBLE_EQ(a[i].cy(), cy[i]);
  }
}

TEST(Anchors, RatioShape) {
  const double s[] = {16.0}, r[] = {2.0};
  const auto a = corpn::generate_anchors(1, 1, 16, s, r);
  EXPECT_NEAR(a[0].height() / a[0].width(), 2.0, 1e-12);
  EXPECT_NEAR(a[0].area(), 256.0, 1e-9);
}

TEST(Anchors, CountAndOrder) {
  const double s[] = {8.0, 16.0}, r[] = {0.5, 1.0, 2.0};
  const auto a = corpn::generate_anchors(3, 4, 8, s, r);
  ASSERT_EQ(a.size(), 3u * 4u * 2u * 3u);
  // Second cell starts after all scale/ratio combinations of the first.
  EXPECT_DOUBLE_EQ(a[6].cx(), 12.0);
  EXPECT_NEAR(a[3].area(), 256.0, 1e-9);
}

TEST(Anchors, RejectsBadInput) {
  const double s[] = {16.0}, r[] = {1.0}, bad[] = {0.0};
  EXPECT_THROW(corpn::generate_anchors(0, 1, 16, s, r), std::invalid_argument);
  EXPECT_THROW(corpn::generate_anchors(1, 1, 16, bad, r), std::invalid_argument);
  EXPECT_THROW(corpn::generate_anchors(1, 1, 16, s, bad), std::invalid_argument);
}

TEST(Labels, WorkedExamples) {
  using L = corpn::AnchorLabel;
  const std::vector<Box> gt{{0, 0, 10, 10}};
  // Identical, disjoint, and IOU exactly 0.5 (10x10 vs 10x20 sharing 100).
  const std::vector<Box> anchors{{0, 0, 10, 10}, {50, 50, 60, 60}, {0, 0, 10, 20}};
  const auto lab = corpn::label_anchors(anchors, gt);
  EXPECT_EQ(lab[0], L::Foreground);
  EXPECT_EQ(lab[1], L::Background);
  EXPECT_EQ(lab[2], L::Ignore);
}

TEST(Labels, EmptyGtIsAllBackground) {
  const std::vector<Box> anchors{{0, 0, 1, 1}, {2, 2, 3, 3}};
  for (auto l : corpn::label_anchors(anchors, {})) EXPECT_EQ(l, corpn::AnchorLabel::Background);
}

TEST(Labels, BestAnchorClaimsEveryGt) {
  // No anchor reaches 0.7, but each gt still gets its argmax anchor.
  const std::vector<Box> gt{{0, 0, 10, 10}, {40, 40, 50, 50}};
  const std::vector<Box> anchors{{0, 0, 10, 20}, {0, 0, 20, 20}, {40, 40, 60, 50}, {80, 80, 90, 90}};
  const auto lab = corpn::label_anchors(anchors, gt);
  EXPECT_EQ(lab[0], corpn::AnchorLabel::Foreground);
  EXPECT_EQ(lab[1], corpn::AnchorLabel::Background);
  EXPECT_EQ(lab[2], corpn::AnchorLabel::Foreground);
  EXPECT_EQ(lab[3], corpn::AnchorLabel::Background);
}

TEST(Labels, RejectsBadThresholds) {
  const std::vector<Box> a{{0, 0, 1, 1}};
  EXPECT_THROW(corpn::label_anchors(a, a, {0.3, 0.7}), std::invalid_argument);
}

TEST(Nms, WorkedExamples) {
  EXPECT_EQ(corpn::nms(std::vector<Box>{{0, 0, 4, 4}}, std::vector<double>{0.3}, 0.5),
            std::vector<std::size_t>{0});
  const std::vector<Box> same{{0, 0, 4, 4}, {0, 0, 4, 4}};
  EXPECT_EQ(corpn::nms(same, std::vector<double>{0.9, 0.8}, 0.5), std::vector<std::size_t>{0});
  // box0 and box1 are 16x10 and share 12x10, so IOU = 120 / 200.
  const std::vector<Box> three{{0, 0, 16, 10}, {4, 0, 20, 10}, {40, 40, 50, 50}};
  ASSERT_DOUBLE_EQ(corpn::iou(three[0], three[1]), 0.6);
  EXPECT_EQ(corpn::nms(three, std::vector<double>{0.9, 0.8, 0.7}, 0.5),
            (std::vector<std::size_t>{0, 2}));
}

TEST(Nms, EmptyAndMismatch) {
  EXPECT_TRUE(corpn::nms({}, {}, 0.5).empty());
  EXPECT_THROW(corpn::nms(std::vector<Box>{{0, 0, 1, 1}}, {}, 0.5), std::invalid_argument);
  EXPECT_THROW(corpn::nms({}, {}, 0.0), std::invalid_argument);
}

TEST(Nms, TiesGoToLowerIndex) {
  const std::vector<Box> b{{0, 0, 4, 4}, {0, 0, 4, 4}, {10, 10, 12, 12}};
  EXPECT_EQ(corpn::nms(b, std::vector<double>{0.5, 0.5, 0.5}, 0.5),
            (std::vector<std::size_t>{0, 2}));
}

TEST(Nms, MatchesBruteForce) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> count(1, 8);
  std::uniform_int_distribution<int> grade(0, 9);  // coarse scores force ties
  for (int i = 0; i < 2000; ++i) {
    const int n = count(rng);
    std::vector<Box> boxes;
    std::vector<double> scores;
    for (int k = 0; k < n; ++k) {
      boxes.push_back(random_int_box(rng, 12));
      scores.push_back(grade(rng) / 10.0);
    }
    const double thresh = (1 + grade(rng)) / 10.0;
    const auto kept = corpn::nms(boxes, scores, thresh);
    ASSERT_EQ(kept, oracle::brute_nms(boxes, scores, thresh)) << i;
    for (std::size_t a = 0; a < kept.size(); ++a)
      for (std::size_t b = a + 1; b < kept.size(); ++b)
        EXPECT_LE(corpn::iou(boxes[kept[a]], boxes[kept[b]]), thresh);
  }
}

TEST(Nms, TopKIsPrefix) {
  std::mt19937_64 rng(9);
  std::vector<Box> boxes;
  std::vector<double> scores;
  for (int k = 0; k < 40; ++k) {
    boxes.push_back(random_int_box(rng, 30));
    scores.push_back(std::uniform_real_distribution<double>(0, 1)(rng));
  }
  const auto full = corpn::nms(boxes, scores, 0.4);
  const auto top = corpn::nms_top_k(boxes, scores, 0.4, 3);
  ASSERT_EQ(top.size(), std::min<std::size_t>(3, full.size()));
  EXPECT_TRUE(std::equal(top.begin(), top.end(), full.begin()));
}
