#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "corpn/geometry.hpp"
#include "corpn/simworld.hpp"
#include "corpn/train.hpp"

namespace corpn {

struct MetricsRecord {
  double novel_ap50 = 0.0;
  double base_ap50 = 0.0;
  double avg_fn = 0.0;
  double avg_fg = 0.0;
  double proposal_recall = 0.0;
  double logdet_cov = 0.0;

  friend bool operator==(const MetricsRecord&, const MetricsRecord&) = default;
};

/// Mean per scene of foreground-labeled anchors whose box score is below
/// `thresh`. scores[s][a] is the selected-RPN probability of anchor a.
double avg_false_negatives(std::span<const std::vector<double>> scores,
                           std::span<const std::vector<AnchorLabel>> labels, double thresh = 0.5);

/// Mean per scene of post-NMS boxes voted foreground.
/// kept_is_fg[s] holds one flag per box kept in scene s.
double avg_foreground_after_nms(std::span<const std::vector<std::uint8_t>> kept_is_fg);

/// Fraction of gt boxes matched (IOU >= iou_thresh) by at least one of the
/// first top_k proposals. Proposals are assumed ranked. Empty gt gives 1.
double proposal_recall(std::span<const Box> proposals, std::span<const Box> gt,
                       double iou_thresh = 0.5, std::size_t top_k = 10);

/// Pooled recall over scenes: matched gt / total gt. No gt at all gives 1.
double proposal_recall(std::span<const std::vector<Box>> proposals,
                       std::span<const std::vector<Box>> gt, double iou_thresh = 0.5,
                       std::size_t top_k = 10);

struct Detection {
  Box box;
  double score = 0.0;
  int category = 0;
};

struct GroundTruth {
  Box box;
  int category = 0;
};

struct ApResult {
  /// Indexed by category id; NaN where the category has no ground truth.
  std::vector<double> per_category;
  /// Mean over categories with ground truth; NaN if there are none.
  double mean = 0.0;

  /// Mean over the listed categories that have ground truth (NaN if none).
  double mean_over(std::span<const int> categories) const;
};

/// VOC-style AP at IOU 0.5 with all-points interpolation. Detections of a
/// category are matched in descending score order (ties keep input order,
/// scenes in order) to the unmatched gt of that category in the same scene
/// with the highest IOU >= 0.5.
ApResult ap50(std::span<const std::vector<Detection>> detections,
              std::span<const std::vector<GroundTruth>> gt, std::size_t n_categories);

/// Area under the monotone precision envelope of the given PR points,
/// all-points convention. recall must be nondecreasing.
double all_points_ap(std::span<const double> recall, std::span<const double> precision);

struct EvalConfig {
  double fn_thresh = 0.5;
  double recall_iou = 0.5;
  std::size_t recall_top_k = 10;
  double detection_min_score = 0.05;
  double detection_nms_iou = 0.5;
  double ridge = 1e-6;
};

/// Detections for one scene: frozen proposals, classifier over pooled
/// features, per-category NMS.
std::vector<Detection> detect(const TrainState& state, const World& world, const Matrix& features,
                              const ProposalConfig& proposals, const EvalConfig& cfg);

/// log det(cov + ridge I) of the generator's probabilities over a minibatch
/// drawn from held-out scenes.
double heldout_logdet(const ProposalGenerator& rpn, const std::vector<SceneData>& holdout,
                      const TrainConfig& train_cfg, double ridge);

/// Full metrics for a trained and fine-tuned state. FN/FG counts come from
/// the fine-tuning scenes, recall and AP from the test scenes.
MetricsRecord evaluate(const TrainState& state, const World& world, const Episode& episode,
                       const std::vector<const Scene*>& finetune, const TrainConfig& train_cfg,
                       const EvalConfig& cfg);

}  // namespace corpn
