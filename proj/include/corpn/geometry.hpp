#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace corpn {

/// Axis-aligned box in continuous image coordinates. x1 <= x2, y1 <= y2.
struct Box {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return (x2 - x1) * (y2 - y1); }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }
  bool valid() const { return x1 <= x2 && y1 <= y2; }
  bool contains(const Box& other) const {
    return other.x1 >= x1 && other.y1 >= y1 && other.x2 <= x2 && other.y2 <= y2;
  }

  friend bool operator==(const Box&, const Box&) = default;
};

enum class AnchorLabel : std::uint8_t { Background = 0, Foreground = 1, Ignore = 2 };

/// Intersection over union. Zero-area or disjoint boxes give 0.
double iou(const Box& a, const Box& b);

double intersection_area(const Box& a, const Box& b);

/// Tiles anchors over a grid_h x grid_w lattice with the given stride.
/// Order: row-major over cells, then scale, then ratio. Each anchor has
/// area scale^2 and height/width == ratio.
std::vector<Box> generate_anchors(std::size_t grid_h, std::size_t grid_w, double stride,
                                  std::span<const double> scales,
                                  std::span<const double> ratios);

struct LabelThresholds {
  double fg = 0.7;
  double bg = 0.3;
};

/// Faster R-CNN style anchor assignment. An anchor is Foreground when its best
/// IOU reaches thresholds.fg or it is the best anchor for some gt box (with
/// positive IOU), Background when its best IOU is at most thresholds.bg, and
/// Ignore otherwise.
std::vector<AnchorLabel> label_anchors(std::span<const Box> anchors, std::span<const Box> gt,
                                       LabelThresholds thresholds = {});

/// Index of the gt box with the highest IOU per anchor, -1 when gt is empty
/// or the anchor overlaps nothing.
std::vector<int> match_anchors(std::span<const Box> anchors, std::span<const Box> gt);

/// Greedy NMS. Returns kept indices in descending score order; equal scores
/// are ordered by lower original index. A box is suppressed when its IOU with
/// a kept box is strictly greater than iou_thresh.
std::vector<std::size_t> nms(std::span<const Box> boxes, std::span<const double> scores,
                             double iou_thresh);

/// Greedy NMS that stops once max_keep boxes are kept. The result is always
/// a prefix of nms() on the same input.
std::vector<std::size_t> nms_top_k(std::span<const Box> boxes, std::span<const double> scores,
                                   double iou_thresh, std::size_t max_keep);

/// Indices sorted by descending score, ties by ascending index.
std::vector<std::size_t> rank_by_score(std::span<const double> scores);

}  // namespace corpn
