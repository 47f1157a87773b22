#include "corpn/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace corpn {

double intersection_area(const Box& a, const Box& b) {
  const double w = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double h = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (w <= 0.0 || h <= 0.0) return 0.0;
  return w * h;
}

double iou(const Box& a, const Box& b) {
  const double inter = intersection_area(a, b);
  if (inter <= 0.0) return 0.0;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

std::vector<Box> generate_anchors(std::size_t grid_h, std::size_t grid_w, double stride,
                                  std::span<const double> scales,
                                  std::span<const double> ratios) {
  if (grid_h == 0 || grid_w == 0 || !(stride > 0.0) || scales.empty() || ratios.empty()) {
    throw std::invalid_argument("generate_anchors: counts must be >= 1 and lists nonempty");
  }
  for (double s : scales)
    if (!(s > 0.0)) throw std::invalid_argument("generate_anchors: scales must be positive");
  for (double r : ratios)
    if (!(r > 0.0)) throw std::invalid_argument("generate_anchors: ratios must be positive");

  std::vector<Box> out;
  out.reserve(grid_h * grid_w * scales.size() * ratios.size());
  for (std::size_t row = 0; row < grid_h; ++row) {
    for (std::size_t col = 0; col < grid_w; ++col) {
      const double cx = (static_cast<double>(col) + 0.5) * stride;
      const double cy = (static_cast<double>(row) + 0.5) * stride;
      for (double s : scales) {
        for (double r : ratios) {
          // w*h = s^2, h/w = r
          const double w = s / std::sqrt(r);
          const double h = s * std::sqrt(r);
          out.push_back({cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h});
        }
      }
    }
  }
  return out;
}

std::vector<int> match_anchors(std::span<const Box> anchors, std::span<const Box> gt) {
  std::vector<int> best(anchors.size(), -1);
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    double best_iou = 0.0;
    for (std::size_t g = 0; g < gt.size(); ++g) {
      const double v = iou(anchors[a], gt[g]);
      if (v > best_iou) {
        best_iou = v;
        best[a] = static_cast<int>(g);
      }
    }
  }
  return best;
}

std::vector<AnchorLabel> label_anchors(std::span<const Box> anchors, std::span<const Box> gt,
                                       LabelThresholds thresholds) {
  if (!(thresholds.fg > thresholds.bg) || thresholds.bg <= 0.0 || thresholds.fg >= 1.0) {
    throw std::invalid_argument("label_anchors: need 0 < bg < fg < 1");
  }
  std::vector<AnchorLabel> labels(anchors.size(), AnchorLabel::Background);
  if (gt.empty()) return labels;

  std::vector<double> max_iou(anchors.size(), 0.0);
  std::vector<double> gt_best(gt.size(), 0.0);
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    for (std::size_t g = 0; g < gt.size(); ++g) {
      const double v = iou(anchors[a], gt[g]);
      max_iou[a] = std::max(max_iou[a], v);
      gt_best[g] = std::max(gt_best[g], v);
    }
  }
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    if (max_iou[a] >= thresholds.fg) {
      labels[a] = AnchorLabel::Foreground;
    } else if (max_iou[a] <= thresholds.bg) {
      labels[a] = AnchorLabel::Background;
    } else {
      labels[a] = AnchorLabel::Ignore;
    }
  }
  // Every gt box claims its best anchor(s), including ties.
  for (std::size_t g = 0; g < gt.size(); ++g) {
    if (gt_best[g] <= 0.0) continue;
    for (std::size_t a = 0; a < anchors.size(); ++a) {
      if (iou(anchors[a], gt[g]) == gt_best[g]) labels[a] = AnchorLabel::Foreground;
    }
  }
  return labels;
}

std::vector<std::size_t> rank_by_score(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

std::vector<std::size_t> nms(std::span<const Box> boxes, std::span<const double> scores,
                             double iou_thresh) {
  return nms_top_k(boxes, scores, iou_thresh, boxes.size());
}

std::vector<std::size_t> nms_top_k(std::span<const Box> boxes, std::span<const double> scores,
                                   double iou_thresh, std::size_t max_keep) {
  if (boxes.size() != scores.size()) {
    throw std::invalid_argument("nms: boxes and scores differ in length");
  }
  if (!(iou_thresh > 0.0 && iou_thresh <= 1.0)) {
    throw std::invalid_argument("nms: iou_thresh must be in (0, 1]");
  }
  const auto order = rank_by_score(scores);
  // A candidate survives iff it overlaps no already-kept box; checking against
  // the kept list is the same greedy pass without a suppression sweep.
  std::vector<std::size_t> keep;
  for (std::size_t i : order) {
    if (keep.size() >= max_keep) break;
    bool suppressed = false;
    for (std::size_t k : keep) {
      if (iou(boxes[k], boxes[i]) > iou_thresh) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) keep.push_back(i);
  }
  return keep;
}

}  // namespace corpn
