#include "corpn/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace corpn {

double avg_false_negatives(std::span<const std::vector<double>> scores,
                           std::span<const std::vector<AnchorLabel>> labels, double thresh) {
  if (scores.size() != labels.size()) {
    throw std::invalid_argument("avg_false_negatives: scene count mismatch");
  }
  if (scores.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t s = 0; s < scores.size(); ++s) {
    if (scores[s].size() != labels[s].size()) {
      throw std::invalid_argument("avg_false_negatives: anchor count mismatch");
    }
    for (std::size_t a = 0; a < scores[s].size(); ++a) {
      if (labels[s][a] == AnchorLabel::Foreground && scores[s][a] < thresh) total += 1.0;
    }
  }
  return total / static_cast<double>(scores.size());
}

double avg_foreground_after_nms(std::span<const std::vector<std::uint8_t>> kept_is_fg) {
  if (kept_is_fg.empty()) return 0.0;
  double total = 0.0;
  for (const auto& scene : kept_is_fg) {
    total += static_cast<double>(std::count_if(scene.begin(), scene.end(),
                                               [](std::uint8_t v) { return v != 0; }));
  }
  return total / static_cast<double>(kept_is_fg.size());
}

namespace {

std::size_t count_matched(std::span<const Box> proposals, std::span<const Box> gt,
                          double iou_thresh, std::size_t top_k) {
  const std::size_t k = std::min(top_k, proposals.size());
  std::size_t matched = 0;
  for (const Box& g : gt) {
    for (std::size_t i = 0; i < k; ++i) {
      if (iou(proposals[i], g) >= iou_thresh) {
        ++matched;
        break;
      }
    }
  }
  return matched;
}

}  // namespace

double proposal_recall(std::span<const Box> proposals, std::span<const Box> gt,
                       double iou_thresh, std::size_t top_k) {
  if (gt.empty()) return 1.0;
  return static_cast<double>(count_matched(proposals, gt, iou_thresh, top_k)) /
         static_cast<double>(gt.size());
}

double proposal_recall(std::span<const std::vector<Box>> proposals,
                       std::span<const std::vector<Box>> gt, double iou_thresh,
                       std::size_t top_k) {
  if (proposals.size() != gt.size()) {
    throw std::invalid_argument("proposal_recall: scene count mismatch");
  }
  std::size_t matched = 0;
  std::size_t total = 0;
  for (std::size_t s = 0; s < gt.size(); ++s) {
    matched += count_matched(proposals[s], gt[s], iou_thresh, top_k);
    total += gt[s].size();
  }
  if (total == 0) return 1.0;
  return static_cast<double>(matched) / static_cast<double>(total);
}

double all_points_ap(std::span<const double> recall, std::span<const double> precision) {
  if (recall.size() != precision.size()) {
    throw std::invalid_argument("all_points_ap: recall/precision length mismatch");
  }
  // Sentinels, envelope from the right, then sum over recall steps.
  std::vector<double> mrec{0.0};
  std::vector<double> mpre{0.0};
  mrec.insert(mrec.end(), recall.begin(), recall.end());
  mpre.insert(mpre.end(), precision.begin(), precision.end());
  mrec.push_back(1.0);
  mpre.push_back(0.0);
  for (std::size_t i = mpre.size() - 1; i > 0; --i) mpre[i - 1] = std::max(mpre[i - 1], mpre[i]);
  double ap = 0.0;
  for (std::size_t i = 1; i < mrec.size(); ++i) {
    if (mrec[i] != mrec[i - 1]) ap += (mrec[i] - mrec[i - 1]) * mpre[i];
  }
  return ap;
}

double ApResult::mean_over(std::span<const int> categories) const {
  double sum = 0.0;
  std::size_t n = 0;
  for (int c : categories) {
    const auto idx = static_cast<std::size_t>(c);
    if (idx < per_category.size() && !std::isnan(per_category[idx])) {
      sum += per_category[idx];
      ++n;
    }
  }
  return n == 0 ? std::numeric_limits<double>::quiet_NaN() : sum / static_cast<double>(n);
}

ApResult ap50(std::span<const std::vector<Detection>> detections,
              std::span<const std::vector<GroundTruth>> gt, std::size_t n_categories) {
  if (detections.size() != gt.size()) throw std::invalid_argument("ap50: scene count mismatch");
  const double nan = std::numeric_limits<double>::quiet_NaN();
  ApResult res;
  res.per_category.assign(n_categories, nan);

  struct Ref {
    std::size_t scene;
    std::size_t index;
    double score;
  };
  double sum = 0.0;
  std::size_t counted = 0;
  for (std::size_t c = 0; c < n_categories; ++c) {
    const int cat = static_cast<int>(c);
    std::size_t n_gt = 0;
    for (const auto& scene : gt)
      for (const auto& g : scene) n_gt += g.category == cat ? 1 : 0;
    if (n_gt == 0) continue;

    std::vector<Ref> refs;
    for (std::size_t s = 0; s < detections.size(); ++s)
      for (std::size_t i = 0; i < detections[s].size(); ++i)
        if (detections[s][i].category == cat) refs.push_back({s, i, detections[s][i].score});
    std::stable_sort(refs.begin(), refs.end(),
                     [](const Ref& a, const Ref& b) { return a.score > b.score; });

    std::vector<std::vector<bool>> used(gt.size());
    for (std::size_t s = 0; s < gt.size(); ++s) used[s].assign(gt[s].size(), false);
    std::vector<double> recall, precision;
    std::size_t tp = 0;
    for (std::size_t k = 0; k < refs.size(); ++k) {
      const auto& det = detections[refs[k].scene][refs[k].index];
      const auto& scene_gt = gt[refs[k].scene];
      double best = -1.0;
      std::size_t best_g = scene_gt.size();
      for (std::size_t g = 0; g < scene_gt.size(); ++g) {
        if (scene_gt[g].category != cat || used[refs[k].scene][g]) continue;
        const double v = iou(det.box, scene_gt[g].box);
        if (v >= 0.5 && v > best) {
          best = v;
          best_g = g;
        }
      }
      if (best_g < scene_gt.size()) {
        used[refs[k].scene][best_g] = true;
        ++tp;
      }
      recall.push_back(static_cast<double>(tp) / static_cast<double>(n_gt));
      precision.push_back(static_cast<double>(tp) / static_cast<double>(k + 1));
    }
    res.per_category[c] = all_points_ap(recall, precision);
    sum += res.per_category[c];
    ++counted;
  }
  res.mean = counted == 0 ? nan : sum / static_cast<double>(counted);
  return res;
}

std::vector<Detection> detect(const TrainState& state, const World& world, const Matrix& features,
                              const ProposalConfig& proposals, const EvalConfig& cfg) {
  const SceneScores sc = score_scene(state.rpn, features);
  const auto props = propose(world, sc, proposals);
  const Matrix pooled = pool_features(world, features, props);
  const Matrix prob = state.classifier.predict(pooled);
  std::vector<Detection> out;
  for (std::size_t row = 1; row < state.classifier.n_rows(); ++row) {
    std::vector<Box> boxes;
    std::vector<double> scores;
    for (std::size_t i = 0; i < props.size(); ++i) {
      if (prob(i, row) >= cfg.detection_min_score) {
        boxes.push_back(world.anchors[props[i]]);
        scores.push_back(prob(i, row));
      }
    }
    for (std::size_t k : nms(boxes, scores, cfg.detection_nms_iou)) {
      out.push_back({boxes[k], scores[k], state.classifier.categories[row - 1]});
    }
  }
  return out;
}

double heldout_logdet(const ProposalGenerator& rpn, const std::vector<SceneData>& holdout,
                      const TrainConfig& train_cfg, double ridge) {
  TrainConfig cfg = train_cfg;
  cfg.batch_scenes = holdout.size();
  const Minibatch mb = sample_minibatch(holdout, cfg, 0);
  return logdet_psd(covariance(rpn.probabilities(mb.features)), ridge);
}

MetricsRecord evaluate(const TrainState& state, const World& world, const Episode& episode,
                       const std::vector<const Scene*>& finetune, const TrainConfig& train_cfg,
                       const EvalConfig& cfg) {
  MetricsRecord rec;

  // Proposal statistics on the scenes the classifier was fine-tuned on.
  std::vector<std::vector<double>> ft_scores;
  std::vector<std::vector<AnchorLabel>> ft_labels;
  std::vector<std::vector<std::uint8_t>> ft_kept;
  for (const Scene* scene : finetune) {
    const Matrix x = render_features(*scene, world);
    SceneScores sc = score_scene(state.rpn, x);
    ft_labels.push_back(label_anchors(world.anchors, scene->gt_boxes(), train_cfg.labels));
    std::vector<std::uint8_t> kept;
    for (std::size_t k : nms(world.anchors, sc.score, train_cfg.proposals.nms_iou)) {
      kept.push_back(sc.is_fg[k]);
    }
    ft_kept.push_back(std::move(kept));
    ft_scores.push_back(std::move(sc.score));
  }
  rec.avg_fn = avg_false_negatives(ft_scores, ft_labels, cfg.fn_thresh);
  rec.avg_fg = avg_foreground_after_nms(ft_kept);

  // Test scenes: novel recall and AP50.
  std::vector<std::vector<Box>> props_per_scene;
  std::vector<std::vector<Box>> novel_gt;
  std::vector<std::vector<Detection>> dets;
  std::vector<std::vector<GroundTruth>> gts;
  ProposalConfig recall_props = train_cfg.proposals;
  recall_props.top_k = std::max(recall_props.top_k, cfg.recall_top_k);
  for (const Scene& scene : episode.test) {
    const Matrix x = render_features(scene, world);
    const SceneScores sc = score_scene(state.rpn, x);
    std::vector<Box> ranked;
    for (std::size_t k : propose(world, sc, recall_props)) ranked.push_back(world.anchors[k]);
    props_per_scene.push_back(std::move(ranked));
    std::vector<Box> ng;
    std::vector<GroundTruth> g;
    for (const auto& o : scene.objects) {
      if (episode.split.is_novel(o.category)) ng.push_back(o.box);
      g.push_back({o.box, o.category});
    }
    novel_gt.push_back(std::move(ng));
    gts.push_back(std::move(g));
    dets.push_back(detect(state, world, x, train_cfg.proposals, cfg));
  }
  rec.proposal_recall = proposal_recall(props_per_scene, novel_gt, cfg.recall_iou, cfg.recall_top_k);
  const ApResult ap = ap50(dets, gts, episode.split.n_categories());
  rec.novel_ap50 = ap.mean_over(episode.split.novel);
  rec.base_ap50 = ap.mean_over(episode.split.base);
  if (std::isnan(rec.novel_ap50)) rec.novel_ap50 = 0.0;
  if (std::isnan(rec.base_ap50)) rec.base_ap50 = 0.0;

  const auto holdout = prepare_scenes(episode.holdout, world, train_cfg.labels);
  rec.logdet_cov = holdout.empty() ? 0.0 : heldout_logdet(state.rpn, holdout, train_cfg, cfg.ridge);
  return rec;
}

}  // namespace corpn
