#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "corpn/geometry.hpp"
#include "corpn/head.hpp"
#include "corpn/linalg.hpp"
#include "corpn/simworld.hpp"

namespace corpn {

enum class Phase2Mode : std::uint8_t { Balanced, NovelOnly };
enum class ClassifierVariant : std::uint8_t { Fc, Cosine };

std::string to_string(Phase2Mode mode);
std::string to_string(ClassifierVariant variant);
Phase2Mode parse_phase2_mode(std::string_view s);
ClassifierVariant parse_classifier_variant(std::string_view s);

/// Proposal stage settings shared by fine-tuning and evaluation.
struct ProposalConfig {
  double nms_iou = 0.7;
  std::size_t top_k = 10;
};

struct TrainConfig {
  double lr = 0.05;
  double momentum = 0.9;
  std::size_t batch_scenes = 4;
  std::size_t phase1_steps = 300;
  std::size_t phase2_steps = 150;
  std::size_t anchors_per_scene = 64;
  /// Upper bound on the foreground share of each scene's anchor minibatch.
  double fg_fraction = 0.25;
  std::uint64_t seed = 1;
  Phase2Mode phase2_mode = Phase2Mode::Balanced;
  double head_init_std = 0.1;

  ClassifierVariant classifier = ClassifierVariant::Fc;
  double cosine_scale = 10.0;
  double classifier_lr = 1.0;
  double finetune_lr = 1.0;

  LabelThresholds labels;
  ProposalConfig proposals;

  /// Throws std::invalid_argument; needs the RPN count for the minibatch
  /// conditioning check (anchors per step must exceed N).
  void validate(std::size_t n_rpns) const;
};

/// One proposal network: a trainable linear extractor (H x D) shared by the
/// binary classifiers of `head` (N x H).
struct ProposalNet {
  Matrix projection;
  CoRpnHead head;

  static ProposalNet create(std::size_t feature_dim, CoRpnHead head);
  Matrix embed(const Matrix& features) const { return matmul(projection, features); }
  ForwardOutput forward(const Matrix& features) const {
    return corpn::forward(head, embed(features));
  }
  friend bool operator==(const ProposalNet&, const ProposalNet&) = default;
};

/// A stack of proposal nets queried as one N-row probability matrix. CoRPNs
/// use one net with N classifiers; a naive ensemble uses N single-classifier
/// nets. Selection and scoring are identical in both cases.
struct ProposalGenerator {
  std::vector<ProposalNet> members;

  std::size_t n_rpns() const;
  Matrix probabilities(const Matrix& features) const;
  /// FNV-1a over the parameter bit patterns.
  std::uint64_t checksum() const;
  friend bool operator==(const ProposalGenerator&, const ProposalGenerator&) = default;
};

/// Box classifier over pooled backbone features. Row 0 is background, row
/// c + 1 scores category c.
struct ClassifierHead {
  ClassifierVariant variant = ClassifierVariant::Cosine;
  double scale = 10.0;
  Matrix weights;             // (n_categories + 1) x D
  std::vector<double> bias;   // fc only
  std::vector<int> categories;

  std::size_t n_rows() const { return weights.rows(); }
  /// Softmax probabilities, one row per column of pooled.
  Matrix predict(const Matrix& pooled) const;
  std::uint64_t checksum() const;
  friend bool operator==(const ClassifierHead&, const ClassifierHead&) = default;
};

ClassifierHead make_classifier(const std::vector<int>& categories, std::size_t feature_dim,
                               const TrainConfig& cfg, std::uint64_t seed);

/// Mean softmax cross-entropy and its weight gradient. targets index rows.
struct ClassifierLoss {
  double value = 0.0;
  Matrix grad_weights;
  std::vector<double> grad_bias;
};
ClassifierLoss classifier_loss(const ClassifierHead& cls, const Matrix& pooled,
                               std::span<const std::size_t> targets);

/// Everything a run owns.
struct TrainState {
  ProposalGenerator rpn;
  ClassifierHead classifier;
  std::vector<LossBreakdown> history;
  /// How often each RPN was j* over phase 1.
  std::vector<std::size_t> selection_counts;
};

class TrainingError : public std::runtime_error {
 public:
  TrainingError(std::size_t step, std::string term, const std::string& detail);
  std::size_t step() const { return step_; }
  const std::string& term() const { return term_; }

 private:
  std::size_t step_;
  std::string term_;
};

/// v <- momentum * v - lr * g; p <- p + v. Throws on non-finite input.
void sgd_step(std::span<double> params, std::span<const double> grads, double lr,
              double momentum, std::span<double> velocity);

/// Features, labels and gt matches for one scene.
struct SceneData {
  const Scene* scene = nullptr;
  Matrix features;
  std::vector<AnchorLabel> labels;
  std::vector<int> match;        // best-overlap gt per anchor, -1 if none
  std::vector<double> max_iou;   // that overlap
};

SceneData prepare_scene(const Scene& scene, const World& world, const LabelThresholds& thr);
std::vector<SceneData> prepare_scenes(const std::vector<Scene>& scenes, const World& world,
                                      const LabelThresholds& thr);

/// Mean of the features of all anchors contained in each listed anchor box.
Matrix pool_features(const World& world, const Matrix& features,
                     std::span<const std::size_t> anchor_ids);

/// One step's anchor minibatch across `batch_scenes` scenes.
struct Minibatch {
  Matrix features;                       // D x M
  std::vector<std::uint8_t> fg;          // 1 = foreground
  std::vector<std::size_t> scene;        // index into the scene list
  std::vector<std::size_t> anchor;       // anchor index within the scene
};

/// Deterministic in (cfg.seed, step).
Minibatch sample_minibatch(const std::vector<SceneData>& scenes, const TrainConfig& cfg,
                           std::size_t step);

/// Index into `scenes` of minibatch slot `slot` (epoch-wise permutation).
std::size_t scene_for_slot(std::size_t n_scenes, const TrainConfig& cfg, std::size_t slot);

/// Classifier crops for one step over the same scenes as the anchor
/// minibatch: anchors with IOU >= 0.5 to a gt box take its category, all
/// others are background; the foreground share is capped at fg_fraction.
struct CropBatch {
  Matrix pooled;                   // D x M
  std::vector<std::size_t> targets;  // classifier row (0 = background)
};
CropBatch sample_crops(const World& world, const std::vector<SceneData>& scenes,
                       const TrainConfig& cfg, std::size_t step);

/// Observer for instrumentation: called once per phase-1 step.
struct StepTrace {
  std::size_t step;
  const ForwardOutput* output;
  const Matrix* grad_ce_raw;
  const LossBreakdown* breakdown;
};
using StepObserver = std::function<void(const StepTrace&)>;

struct Phase1Options {
  LossConfig loss;
  DiversityKind diversity = DiversityKind::LogDet;
  StepObserver observer;
};

/// Initial state: one proposal net with n_rpns classifiers (projection = I)
/// and a base-class classifier.
TrainState init_state(const World& world, std::size_t n_rpns, const TrainConfig& cfg);

/// Phase 1: SGD+momentum on the CoRPN loss plus classifier cross-entropy on
/// minibatch anchor crops. The classifier does not back-propagate into the
/// proposal net.
void phase1_train(TrainState& state, const World& world, const std::vector<SceneData>& train,
                  const TrainConfig& cfg, const Phase1Options& opts);

/// Plain single-RPN trainer over the same minibatches: per-anchor logistic
/// regression through the projection, no selection, no extra terms.
ProposalNet train_single_rpn_reference(const World& world, const std::vector<SceneData>& train,
                                       const TrainConfig& cfg, const CoRpnHead& init_head);

/// N separately trained single-RPN nets, member j initialized with row j of
/// the CoRPN initialization for the same seed.
ProposalGenerator train_naive_ensemble(const World& world, const std::vector<SceneData>& train,
                                       const TrainConfig& cfg, std::size_t n_rpns);

/// Phase-1 classifier training alone (shared by every method).
ClassifierHead train_base_classifier(const World& world, const std::vector<SceneData>& train,
                                     const TrainConfig& cfg);

/// Per-anchor score and foreground vote from a generator.
struct SceneScores {
  Matrix probs;
  std::vector<double> score;
  std::vector<std::uint8_t> is_fg;
};
SceneScores score_scene(const ProposalGenerator& rpn, const Matrix& features);

/// Post-NMS top-k anchors by selected-RPN score.
std::vector<std::size_t> propose(const World& world, const SceneScores& scores,
                                 const ProposalConfig& cfg);

struct Phase2Report {
  std::vector<std::size_t> instances_per_category;  // support boxes consumed
  std::size_t samples = 0;
  std::size_t positive_samples = 0;
  std::vector<double> loss;
  /// Scenes the classifier was fine-tuned on, in order.
  std::vector<const Scene*> scenes;
};

/// Phase 2: the proposal generator is frozen; only the classifier changes.
/// Novel rows are randomly initialized, then the classifier is trained on the
/// frozen generator's proposals over the support scenes.
Phase2Report phase2_finetune(TrainState& state, const World& world, const Episode& episode,
                             const TrainConfig& cfg);

/// Support scenes consumed by phase 2 under the configured mode.
std::vector<const Scene*> finetune_scenes(const Episode& episode, Phase2Mode mode);

/// Loss curve CSV: step,ce,div,coop,total.
std::string loss_curve_csv(const std::vector<LossBreakdown>& history);

/// Versioned text checkpoint of a whole run.
std::string serialize_checkpoint(const TrainState& state, std::uint64_t config_hash);
TrainState parse_checkpoint(std::string_view text, std::uint64_t* config_hash = nullptr);

}  // namespace corpn
