#include "corpn/train.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <sstream>

#include "corpn/rng.hpp"
#include "corpn/textio.hpp"

namespace corpn {

std::string to_string(Phase2Mode mode) {
  return mode == Phase2Mode::Balanced ? "balanced" : "novel_only";
}

std::string to_string(ClassifierVariant variant) {
  return variant == ClassifierVariant::Fc ? "fc" : "cosine";
}

Phase2Mode parse_phase2_mode(std::string_view s) {
  if (s == "balanced") return Phase2Mode::Balanced;
  if (s == "novel_only") return Phase2Mode::NovelOnly;
  throw std::invalid_argument("unknown phase-2 mode '" + std::string(s) +
                              "' (expected balanced or novel_only)");
}

ClassifierVariant parse_classifier_variant(std::string_view s) {
  if (s == "fc") return ClassifierVariant::Fc;
  if (s == "cosine") return ClassifierVariant::Cosine;
  throw std::invalid_argument("unknown classifier variant '" + std::string(s) +
                              "' (expected fc or cosine)");
}

void TrainConfig::validate(std::size_t n_rpns) const {
  if (!(lr > 0.0)) throw std::invalid_argument("train.lr must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0))
    throw std::invalid_argument("train.momentum must be in [0, 1)");
  if (batch_scenes < 1) throw std::invalid_argument("train.batch_scenes must be >= 1");
  if (anchors_per_scene < 2) throw std::invalid_argument("train.anchors_per_scene must be >= 2");
  if (batch_scenes * anchors_per_scene <= n_rpns) {
    throw std::invalid_argument(
        "train: minibatch anchor count (batch_scenes * anchors_per_scene) must exceed n_rpns");
  }
  if (!(fg_fraction > 0.0 && fg_fraction <= 1.0))
    throw std::invalid_argument("train.fg_fraction must be in (0, 1]");
  if (!(head_init_std >= 0.0)) throw std::invalid_argument("train.head_init_std must be >= 0");
  if (!(classifier_lr > 0.0) || !(finetune_lr > 0.0))
    throw std::invalid_argument("train: classifier learning rates must be > 0");
  if (!(cosine_scale > 0.0)) throw std::invalid_argument("train.cosine_scale must be > 0");
  if (!(proposals.nms_iou > 0.0 && proposals.nms_iou <= 1.0))
    throw std::invalid_argument("train.nms_iou must be in (0, 1]");
  if (proposals.top_k < 1) throw std::invalid_argument("train.top_k must be >= 1");
}

namespace {

std::uint64_t fnv1a(std::uint64_t h, std::span<const double> values) {
  for (double v : values) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) {
      h ^= (bits >> (8 * i)) & 0xFFu;
      h *= 0x100000001B3ULL;
    }
  }
  return h;
}

constexpr std::uint64_t kFnvOffset = 0xCBF29CE484222325ULL;

void require_finite(double v, std::size_t step, const char* term) {
  if (!std::isfinite(v)) {
    throw TrainingError(step, term, "loss term is not finite");
  }
}

}  // namespace

TrainingError::TrainingError(std::size_t step, std::string term, const std::string& detail)
    : std::runtime_error("training aborted at step " + std::to_string(step) + " (term " + term +
                         "): " + detail),
      step_(step),
      term_(std::move(term)) {}

void sgd_step(std::span<double> params, std::span<const double> grads, double lr,
              double momentum, std::span<double> velocity) {
  if (params.size() != grads.size() || params.size() != velocity.size()) {
    throw DimensionError("sgd_step: params, grads and velocity differ in size");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!std::isfinite(params[i]) || !std::isfinite(grads[i]) || !std::isfinite(velocity[i])) {
      throw std::domain_error("sgd_step: non-finite input at index " + std::to_string(i));
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    velocity[i] = momentum * velocity[i] - lr * grads[i];
    params[i] += velocity[i];
  }
}

ProposalNet ProposalNet::create(std::size_t feature_dim, CoRpnHead head) {
  if (head.feature_dim() != feature_dim) {
    throw DimensionError("ProposalNet: head width must equal the feature dimension");
  }
  return {Matrix::identity(feature_dim), std::move(head)};
}

std::size_t ProposalGenerator::n_rpns() const {
  std::size_t n = 0;
  for (const auto& m : members) n += m.head.n_rpns();
  return n;
}

Matrix ProposalGenerator::probabilities(const Matrix& features) const {
  Matrix out(n_rpns(), features.cols());
  std::size_t row = 0;
  for (const auto& m : members) {
    const ForwardOutput f = m.forward(features);
    for (std::size_t j = 0; j < f.probs.rows(); ++j, ++row) {
      std::copy(f.probs.row(j).begin(), f.probs.row(j).end(), out.row(row).begin());
    }
  }
  return out;
}

std::uint64_t ProposalGenerator::checksum() const {
  std::uint64_t h = kFnvOffset;
  for (const auto& m : members) {
    h = fnv1a(h, m.projection.data());
    h = fnv1a(h, m.head.weights.data());
    h = fnv1a(h, m.head.biases);
  }
  return h;
}

std::uint64_t ClassifierHead::checksum() const {
  return fnv1a(fnv1a(kFnvOffset, weights.data()), bias);
}

namespace {

std::vector<double> classifier_row_init(std::uint64_t seed, int category, std::size_t dim) {
  // Background is keyed as category -1.
  Rng rng = make_rng(seed, Stream::ClassifierInit, {static_cast<std::uint64_t>(category + 1)});
  // Unit expected norm: the cosine gradient scales with 1/|w|.
  const double sd = 1.0 / std::sqrt(static_cast<double>(dim));
  std::vector<double> w(dim);
  for (double& v : w) v = normal(rng, 0.0, sd);
  return w;
}

double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

constexpr double kTinyNorm = 1e-12;

}  // namespace

ClassifierHead make_classifier(const std::vector<int>& categories, std::size_t feature_dim,
                               const TrainConfig& cfg, std::uint64_t seed) {
  ClassifierHead cls;
  cls.variant = cfg.classifier;
  cls.scale = cfg.cosine_scale;
  cls.categories = categories;
  cls.weights = Matrix(categories.size() + 1, feature_dim);
  cls.bias.assign(categories.size() + 1, 0.0);
  for (std::size_t r = 0; r < cls.n_rows(); ++r) {
    const int cat = r == 0 ? -1 : categories[r - 1];
    const auto w = classifier_row_init(seed, cat, feature_dim);
    std::copy(w.begin(), w.end(), cls.weights.row(r).begin());
  }
  return cls;
}

Matrix ClassifierHead::predict(const Matrix& pooled) const {
  const std::size_t k = n_rows();
  const std::size_t m = pooled.cols();
  Matrix logits(m, k);
  std::vector<double> wnorm(k);
  for (std::size_t r = 0; r < k; ++r) wnorm[r] = std::max(norm2(weights.row(r)), kTinyNorm);
  std::vector<double> p(pooled.rows());
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t d = 0; d < p.size(); ++d) p[d] = pooled(d, i);
    const double pnorm = std::max(norm2(p), kTinyNorm);
    double top = -INFINITY;
    for (std::size_t r = 0; r < k; ++r) {
      double dot = 0.0;
      auto w = weights.row(r);
      for (std::size_t d = 0; d < p.size(); ++d) dot += w[d] * p[d];
      const double z =
          variant == ClassifierVariant::Fc ? dot + bias[r] : scale * dot / (wnorm[r] * pnorm);
      logits(i, r) = z;
      top = std::max(top, z);
    }
    double sum = 0.0;
    for (double& z : logits.row(i)) {
      z = std::exp(z - top);
      sum += z;
    }
    for (double& z : logits.row(i)) z /= sum;
  }
  return logits;
}

ClassifierLoss classifier_loss(const ClassifierHead& cls, const Matrix& pooled,
                               std::span<const std::size_t> targets) {
  const std::size_t m = pooled.cols();
  if (targets.size() != m) throw DimensionError("classifier_loss: target count mismatch");
  const std::size_t k = cls.n_rows();
  ClassifierLoss out{0.0, Matrix(k, cls.weights.cols()), std::vector<double>(k, 0.0)};
  if (m == 0) return out;
  const Matrix prob = cls.predict(pooled);
  const double inv_m = 1.0 / static_cast<double>(m);
  std::vector<double> wnorm(k);
  for (std::size_t r = 0; r < k; ++r) wnorm[r] = std::max(norm2(cls.weights.row(r)), kTinyNorm);
  std::vector<double> p(pooled.rows());
  for (std::size_t i = 0; i < m; ++i) {
    if (targets[i] >= k) throw DimensionError("classifier_loss: target row out of range");
    for (std::size_t d = 0; d < p.size(); ++d) p[d] = pooled(d, i);
    const double pnorm = std::max(norm2(p), kTinyNorm);
    out.value -= std::log(std::max(prob(i, targets[i]), 1e-300));
    for (std::size_t r = 0; r < k; ++r) {
      const double dz = (prob(i, r) - (r == targets[i] ? 1.0 : 0.0)) * inv_m;
      auto g = out.grad_weights.row(r);
      if (cls.variant == ClassifierVariant::Fc) {
        for (std::size_t d = 0; d < p.size(); ++d) g[d] += dz * p[d];
        out.grad_bias[r] += dz;
      } else {
        auto w = cls.weights.row(r);
        double dot = 0.0;
        for (std::size_t d = 0; d < p.size(); ++d) dot += w[d] * p[d];
        const double c = dot / (wnorm[r] * pnorm);
        for (std::size_t d = 0; d < p.size(); ++d) {
          g[d] += dz * cls.scale * (p[d] / pnorm - c * w[d] / wnorm[r]) / wnorm[r];
        }
      }
    }
  }
  out.value *= inv_m;
  return out;
}

SceneData prepare_scene(const Scene& scene, const World& world, const LabelThresholds& thr) {
  SceneData data;
  data.scene = &scene;
  data.features = render_features(scene, world);
  const auto gt = scene.gt_boxes();
  data.labels = label_anchors(world.anchors, gt, thr);
  data.match = match_anchors(world.anchors, gt);
  data.max_iou.assign(world.anchors.size(), 0.0);
  for (std::size_t a = 0; a < world.anchors.size(); ++a) {
    if (data.match[a] >= 0) data.max_iou[a] = iou(world.anchors[a], gt[static_cast<std::size_t>(data.match[a])]);
  }
  return data;
}

std::vector<SceneData> prepare_scenes(const std::vector<Scene>& scenes, const World& world,
                                      const LabelThresholds& thr) {
  std::vector<SceneData> out;
  out.reserve(scenes.size());
  for (const auto& s : scenes) out.push_back(prepare_scene(s, world, thr));
  return out;
}

Matrix pool_features(const World& world, const Matrix& features,
                     std::span<const std::size_t> anchor_ids) {
  Matrix out(features.rows(), anchor_ids.size());
  for (std::size_t i = 0; i < anchor_ids.size(); ++i) {
    const auto& inside = world.contained.at(anchor_ids[i]);
    const double inv = 1.0 / static_cast<double>(inside.size());
    for (std::size_t a : inside)
      for (std::size_t d = 0; d < features.rows(); ++d) out(d, i) += features(d, a);
    for (std::size_t d = 0; d < features.rows(); ++d) out(d, i) *= inv;
  }
  return out;
}

std::size_t scene_for_slot(std::size_t n_scenes, const TrainConfig& cfg, std::size_t slot) {
  const std::size_t epoch = slot / n_scenes;
  std::vector<std::size_t> perm(n_scenes);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng = make_rng(cfg.seed, Stream::Minibatch, {epoch, 0});
  std::shuffle(perm.begin(), perm.end(), rng);
  return perm[slot % n_scenes];
}

namespace {

std::size_t fg_cap(const TrainConfig& cfg) {
  return static_cast<std::size_t>(
      std::floor(cfg.fg_fraction * static_cast<double>(cfg.anchors_per_scene)));
}

}  // namespace

Minibatch sample_minibatch(const std::vector<SceneData>& scenes, const TrainConfig& cfg,
                           std::size_t step) {
  if (scenes.empty()) throw std::invalid_argument("sample_minibatch: no training scenes");
  const std::size_t d = scenes.front().features.rows();
  Minibatch mb;
  std::vector<double> cols;  // column-major staging, transposed at the end
  for (std::size_t b = 0; b < cfg.batch_scenes; ++b) {
    const std::size_t si = scene_for_slot(scenes.size(), cfg, step * cfg.batch_scenes + b);
    const SceneData& sd = scenes[si];

    std::vector<std::size_t> fg;
    std::vector<std::size_t> bg;
    for (std::size_t a = 0; a < sd.labels.size(); ++a) {
      if (sd.labels[a] == AnchorLabel::Foreground) fg.push_back(a);
      if (sd.labels[a] == AnchorLabel::Background) bg.push_back(a);
    }
    Rng rng = make_rng(cfg.seed, Stream::Minibatch, {step, b, 1});
    std::shuffle(fg.begin(), fg.end(), rng);
    std::shuffle(bg.begin(), bg.end(), rng);
    const std::size_t n_fg = std::min(fg.size(), fg_cap(cfg));
    const std::size_t n_bg = std::min(bg.size(), cfg.anchors_per_scene - n_fg);
    auto take = [&](std::size_t a, bool is_fg) {
      mb.fg.push_back(is_fg ? 1 : 0);
      mb.scene.push_back(si);
      mb.anchor.push_back(a);
      for (std::size_t r = 0; r < d; ++r) cols.push_back(sd.features(r, a));
    };
    for (std::size_t i = 0; i < n_fg; ++i) take(fg[i], true);
    for (std::size_t i = 0; i < n_bg; ++i) take(bg[i], false);
  }
  const std::size_t m = mb.fg.size();
  mb.features = Matrix(d, m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t r = 0; r < d; ++r) mb.features(r, i) = cols[i * d + r];
  return mb;
}

CropBatch sample_crops(const World& world, const std::vector<SceneData>& scenes,
                       const TrainConfig& cfg, std::size_t step) {
  if (scenes.empty()) throw std::invalid_argument("sample_crops: no training scenes");
  std::vector<std::size_t> scene_of, anchor_of;
  CropBatch out;
  for (std::size_t b = 0; b < cfg.batch_scenes; ++b) {
    const std::size_t si = scene_for_slot(scenes.size(), cfg, step * cfg.batch_scenes + b);
    const SceneData& sd = scenes[si];
    std::vector<std::size_t> fg, bg;
    for (std::size_t a = 0; a < sd.max_iou.size(); ++a) (sd.max_iou[a] >= 0.5 ? fg : bg).push_back(a);
    Rng rng = make_rng(cfg.seed, Stream::ClassifierSample, {step, b});
    std::shuffle(fg.begin(), fg.end(), rng);
    std::shuffle(bg.begin(), bg.end(), rng);
    const std::size_t n_fg = std::min(fg.size(), fg_cap(cfg));
    const std::size_t n_bg = std::min(bg.size(), cfg.anchors_per_scene - n_fg);
    for (std::size_t i = 0; i < n_fg; ++i) {
      const auto g = static_cast<std::size_t>(sd.match[fg[i]]);
      const int cat = sd.scene->objects[g].category;
      const auto& cats = world.split.base;
      const auto it = std::find(cats.begin(), cats.end(), cat);
      if (it == cats.end()) throw std::invalid_argument("sample_crops: non-base object in training");
      out.targets.push_back(static_cast<std::size_t>(it - cats.begin()) + 1);
      scene_of.push_back(si);
      anchor_of.push_back(fg[i]);
    }
    for (std::size_t i = 0; i < n_bg; ++i) {
      out.targets.push_back(0);
      scene_of.push_back(si);
      anchor_of.push_back(bg[i]);
    }
  }
  const std::size_t d = world.feature_dim();
  out.pooled = Matrix(d, anchor_of.size());
  for (std::size_t i = 0; i < anchor_of.size(); ++i) {
    const std::size_t ids[1] = {anchor_of[i]};
    const Matrix p = pool_features(world, scenes[scene_of[i]].features, ids);
    for (std::size_t r = 0; r < d; ++r) out.pooled(r, i) = p(r, 0);
  }
  return out;
}

namespace {

struct NetVelocity {
  Matrix projection;
  Matrix weights;
  std::vector<double> biases;

  explicit NetVelocity(const ProposalNet& net)
      : projection(net.projection.rows(), net.projection.cols()),
        weights(net.head.weights.rows(), net.head.weights.cols()),
        biases(net.head.biases.size(), 0.0) {}
};

struct ClassifierVelocity {
  Matrix weights;
  std::vector<double> bias;
  explicit ClassifierVelocity(const ClassifierHead& c)
      : weights(c.weights.rows(), c.weights.cols()), bias(c.bias.size(), 0.0) {}
};

void classifier_update(ClassifierHead& cls, ClassifierVelocity& vel, const ClassifierLoss& loss,
                       double lr, double momentum) {
  sgd_step(cls.weights.data(), loss.grad_weights.data(), lr, momentum, vel.weights.data());
  if (cls.variant == ClassifierVariant::Fc) {
    sgd_step(cls.bias, loss.grad_bias, lr, momentum, vel.bias);
  }
}

}  // namespace

TrainState init_state(const World& world, std::size_t n_rpns, const TrainConfig& cfg) {
  const std::size_t d = world.feature_dim();
  TrainState st;
  st.rpn.members.push_back(
      ProposalNet::create(d, CoRpnHead::random(n_rpns, d, cfg.head_init_std, cfg.seed)));
  st.classifier = make_classifier(world.split.base, d, cfg, cfg.seed);
  st.selection_counts.assign(n_rpns, 0);
  return st;
}

void phase1_train(TrainState& state, const World& world, const std::vector<SceneData>& train,
                  const TrainConfig& cfg, const Phase1Options& opts) {
  if (state.rpn.members.size() != 1) {
    throw std::invalid_argument("phase1_train: expects a single CoRPN proposal net");
  }
  ProposalNet& net = state.rpn.members.front();
  cfg.validate(net.head.n_rpns());
  opts.loss.validate();
  if (cfg.phase1_steps == 0) return;
  if (train.empty()) throw std::invalid_argument("phase1_train: base_train is empty");
  if (opts.diversity == DiversityKind::Cosine && net.head.n_rpns() < 2 && opts.loss.lambda_d != 0.0) {
    throw std::invalid_argument("phase1_train: cosine diversity needs at least 2 RPNs");
  }
  state.selection_counts.resize(net.head.n_rpns(), 0);

  NetVelocity vel(net);
  ClassifierVelocity cvel(state.classifier);
  for (std::size_t step = 0; step < cfg.phase1_steps; ++step) {
    const Minibatch mb = sample_minibatch(train, cfg, step);
    const Matrix hidden = net.embed(mb.features);
    const ForwardOutput out = forward(net.head, hidden);
    TotalLoss tl;
    try {
      tl = total_loss(net.head, hidden, out, mb.fg, mb.fg, opts.loss, opts.diversity);
    } catch (const CholeskyError& e) {
      throw TrainingError(step, "div", e.what());
    }
    require_finite(tl.breakdown.ce, step, "ce");
    require_finite(tl.breakdown.div, step, "div");
    require_finite(tl.breakdown.coop, step, "coop");
    require_finite(tl.breakdown.total, step, "total");

    if (opts.observer) opts.observer({step, &out, &tl.grad_ce_raw, &tl.breakdown});

    const Matrix grad_projection = matmul_nt(tl.grads.features, mb.features);
    try {
      sgd_step(net.head.weights.data(), tl.grads.weights.data(), cfg.lr, cfg.momentum,
               vel.weights.data());
      sgd_step(net.head.biases, tl.grads.biases, cfg.lr, cfg.momentum, vel.biases);
      sgd_step(net.projection.data(), grad_projection.data(), cfg.lr, cfg.momentum,
               vel.projection.data());
    } catch (const std::domain_error& e) {
      throw TrainingError(step, "update", e.what());
    }
    for (std::size_t j : out.selected) ++state.selection_counts[j];
    state.history.push_back(tl.breakdown);

    const CropBatch crops = sample_crops(world, train, cfg, step);
    const ClassifierLoss closs = classifier_loss(state.classifier, crops.pooled, crops.targets);
    require_finite(closs.value, step, "classifier");
    classifier_update(state.classifier, cvel, closs, cfg.classifier_lr, cfg.momentum);
  }
}

ClassifierHead train_base_classifier(const World& world, const std::vector<SceneData>& train,
                                     const TrainConfig& cfg) {
  ClassifierHead cls = make_classifier(world.split.base, world.feature_dim(), cfg, cfg.seed);
  ClassifierVelocity cvel(cls);
  for (std::size_t step = 0; step < cfg.phase1_steps; ++step) {
    const CropBatch crops = sample_crops(world, train, cfg, step);
    const ClassifierLoss closs = classifier_loss(cls, crops.pooled, crops.targets);
    require_finite(closs.value, step, "classifier");
    classifier_update(cls, cvel, closs, cfg.classifier_lr, cfg.momentum);
  }
  return cls;
}

ProposalNet train_single_rpn_reference(const World& world, const std::vector<SceneData>& train,
                                       const TrainConfig& cfg, const CoRpnHead& init_head) {
  if (init_head.n_rpns() != 1) {
    throw std::invalid_argument("train_single_rpn_reference: expects a one-classifier head");
  }
  const std::size_t d = world.feature_dim();
  ProposalNet net = ProposalNet::create(d, init_head);
  cfg.validate(1);
  std::vector<double> w_vel(d, 0.0), p_vel(d * d, 0.0), b_vel(1, 0.0);
  std::vector<double> h(d), dh(d);
  for (std::size_t step = 0; step < cfg.phase1_steps; ++step) {
    const Minibatch mb = sample_minibatch(train, cfg, step);
    const std::size_t m = mb.fg.size();
    const double inv_m = 1.0 / static_cast<double>(m);
    std::vector<double> gw(d, 0.0), gp(d * d, 0.0), gb(1, 0.0);
    auto w = net.head.weights.row(0);
    const double b = net.head.biases[0];
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t r = 0; r < d; ++r) {
        double acc = 0.0;
        for (std::size_t k = 0; k < d; ++k) acc += net.projection(r, k) * mb.features(k, i);
        h[r] = acc;
      }
      double acc = 0.0;
      for (std::size_t r = 0; r < d; ++r) acc += w[r] * h[r];
      const double f = sigmoid(acc + b);
      const double g = (f - (mb.fg[i] ? 1.0 : 0.0)) * inv_m;
      for (std::size_t r = 0; r < d; ++r) gw[r] += g * h[r];
      gb[0] += g;
      for (std::size_t r = 0; r < d; ++r) dh[r] = w[r] * g;
      for (std::size_t r = 0; r < d; ++r)
        for (std::size_t c = 0; c < d; ++c) gp[r * d + c] += dh[r] * mb.features(c, i);
    }
    sgd_step(net.head.weights.data(), gw, cfg.lr, cfg.momentum, w_vel);
    sgd_step(net.head.biases, gb, cfg.lr, cfg.momentum, b_vel);
    sgd_step(net.projection.data(), gp, cfg.lr, cfg.momentum, p_vel);
  }
  return net;
}

ProposalGenerator train_naive_ensemble(const World& world, const std::vector<SceneData>& train,
                                       const TrainConfig& cfg, std::size_t n_rpns) {
  if (n_rpns < 1) throw std::invalid_argument("train_naive_ensemble: n_rpns must be >= 1");
  const std::size_t d = world.feature_dim();
  const CoRpnHead init = CoRpnHead::random(n_rpns, d, cfg.head_init_std, cfg.seed);
  ProposalGenerator gen;
  for (std::size_t j = 0; j < n_rpns; ++j) {
    CoRpnHead member(1, d);
    std::copy(init.weights.row(j).begin(), init.weights.row(j).end(), member.weights.row(0).begin());
    member.biases[0] = init.biases[j];
    gen.members.push_back(train_single_rpn_reference(world, train, cfg, member));
  }
  return gen;
}

SceneScores score_scene(const ProposalGenerator& rpn, const Matrix& features) {
  SceneScores s;
  s.probs = rpn.probabilities(features);
  const std::size_t n = s.probs.rows();
  s.score.resize(s.probs.cols());
  s.is_fg.resize(s.probs.cols());
  std::vector<double> col(n);
  for (std::size_t i = 0; i < s.probs.cols(); ++i) {
    for (std::size_t j = 0; j < n; ++j) col[j] = s.probs(j, i);
    const BoxScore bs = score_box(col);
    s.score[i] = bs.score;
    s.is_fg[i] = bs.is_foreground ? 1 : 0;
  }
  return s;
}

std::vector<std::size_t> propose(const World& world, const SceneScores& scores,
                                 const ProposalConfig& cfg) {
  return nms_top_k(world.anchors, scores.score, cfg.nms_iou, cfg.top_k);
}

std::vector<const Scene*> finetune_scenes(const Episode& episode, Phase2Mode mode) {
  std::vector<const Scene*> out;
  for (const auto& s : episode.novel_support) out.push_back(&s);
  if (mode == Phase2Mode::Balanced)
    for (const auto& s : episode.base_support) out.push_back(&s);
  return out;
}

Phase2Report phase2_finetune(TrainState& state, const World& world, const Episode& episode,
                             const TrainConfig& cfg) {
  cfg.validate(state.rpn.n_rpns());
  const std::size_t d = world.feature_dim();
  Phase2Report report;
  report.instances_per_category.assign(world.split.n_categories(), 0);
  report.scenes = finetune_scenes(episode, cfg.phase2_mode);

  // Expand to |C_b| + |C_n| categories; existing rows carry over.
  std::vector<int> cats = world.split.base;
  cats.insert(cats.end(), world.split.novel.begin(), world.split.novel.end());
  ClassifierHead expanded = make_classifier(cats, d, cfg, stream_seed(cfg.seed, Stream::ClassifierInit, {2}));
  expanded.variant = state.classifier.variant;
  expanded.scale = state.classifier.scale;
  for (std::size_t r = 0; r < state.classifier.n_rows(); ++r) {
    const int cat = r == 0 ? -1 : state.classifier.categories[r - 1];
    const auto it = std::find(cats.begin(), cats.end(), cat);
    const std::size_t dst = cat < 0 ? 0 : static_cast<std::size_t>(it - cats.begin()) + 1;
    std::copy(state.classifier.weights.row(r).begin(), state.classifier.weights.row(r).end(),
              expanded.weights.row(dst).begin());
    expanded.bias[dst] = state.classifier.bias[r];
  }

  std::vector<double> staged;
  std::vector<std::size_t> targets;
  for (const Scene* scene : report.scenes) {
    for (const auto& o : scene->objects) ++report.instances_per_category[static_cast<std::size_t>(o.category)];
    const Matrix x = render_features(*scene, world);
    const SceneScores sc = score_scene(state.rpn, x);
    const auto props = propose(world, sc, cfg.proposals);
    const Matrix pooled = pool_features(world, x, props);
    for (std::size_t i = 0; i < props.size(); ++i) {
      std::size_t target = 0;
      double best = 0.0;
      for (const auto& o : scene->objects) {
        const double v = iou(world.anchors[props[i]], o.box);
        if (v >= 0.5 && v > best) {
          best = v;
          const auto it = std::find(cats.begin(), cats.end(), o.category);
          target = static_cast<std::size_t>(it - cats.begin()) + 1;
        }
      }
      if (target != 0) ++report.positive_samples;
      targets.push_back(target);
      for (std::size_t r = 0; r < d; ++r) staged.push_back(pooled(r, i));
    }
  }
  report.samples = targets.size();
  Matrix pooled(d, targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i)
    for (std::size_t r = 0; r < d; ++r) pooled(r, i) = staged[i * d + r];

  ClassifierVelocity vel(expanded);
  for (std::size_t step = 0; step < cfg.phase2_steps && !targets.empty(); ++step) {
    const ClassifierLoss loss = classifier_loss(expanded, pooled, targets);
    require_finite(loss.value, step, "classifier");
    report.loss.push_back(loss.value);
    classifier_update(expanded, vel, loss, cfg.finetune_lr, cfg.momentum);
  }
  state.classifier = std::move(expanded);
  return report;
}

std::string loss_curve_csv(const std::vector<LossBreakdown>& history) {
  std::ostringstream os;
  os << "step,ce,div,coop,total\n";
  for (std::size_t i = 0; i < history.size(); ++i) {
    const auto& h = history[i];
    os << i << ',' << fixed(h.ce) << ',' << fixed(h.div) << ',' << fixed(h.coop) << ','
       << fixed(h.total) << '\n';
  }
  return os.str();
}

std::string serialize_checkpoint(const TrainState& state, std::uint64_t config_hash) {
  std::ostringstream os;
  os << "corpn-checkpoint 1\n";
  os << "config_hash " << config_hash << "\n";
  os << "members " << state.rpn.members.size() << "\n";
  for (const auto& m : state.rpn.members) {
    os << "projection " << m.projection.rows() << " " << m.projection.cols() << " ";
    write_doubles(os, m.projection.data());
    os << "\n" << serialize_head(m.head);
  }
  const auto& c = state.classifier;
  os << "classifier " << to_string(c.variant) << " " << hexfloat(c.scale) << " " << c.n_rows()
     << " " << c.weights.cols() << "\n";
  os << "categories";
  for (int cat : c.categories) os << " " << cat;
  os << "\nclassifier_weights ";
  write_doubles(os, c.weights.data());
  os << "\nclassifier_bias ";
  write_doubles(os, c.bias);
  os << "\n";
  return os.str();
}

TrainState parse_checkpoint(std::string_view text, std::uint64_t* config_hash) {
  TokenReader in(text);
  in.expect("corpn-checkpoint");
  const std::string version = in.next("version");
  if (version != "1") throw FormatError("unsupported checkpoint version " + version);
  in.expect("config_hash");
  const std::string hash = in.next("config_hash");
  if (config_hash) *config_hash = std::stoull(hash);
  in.expect("members");
  const std::size_t n_members = in.next_size("members");
  TrainState st;
  for (std::size_t i = 0; i < n_members; ++i) {
    in.expect("projection");
    const std::size_t r = in.next_size("rows");
    const std::size_t c = in.next_size("cols");
    ProposalNet net;
    net.projection = Matrix(r, c, in.next_doubles(r * c, "projection"));
    // Re-assemble the embedded head record.
    std::ostringstream head;
    head << in.next("corpn-head");
    head << " " << in.next("version");
    for (int k = 0; k < 2; ++k) {
      head << " " << in.next("field") << " " << in.next("value");
    }
    std::istringstream dims(head.str());
    std::string tag, ver, k1, k2;
    std::size_t n = 0, d = 0;
    dims >> tag >> ver >> k1 >> n >> k2 >> d;
    head << " " << in.next("weights");
    for (std::size_t k = 0; k < n * d; ++k) head << " " << in.next("weight");
    head << " " << in.next("biases");
    for (std::size_t k = 0; k < n; ++k) head << " " << in.next("bias");
    net.head = parse_head(head.str());
    st.rpn.members.push_back(std::move(net));
  }
  in.expect("classifier");
  st.classifier.variant = parse_classifier_variant(in.next("variant"));
  st.classifier.scale = in.next_double("scale");
  const std::size_t rows = in.next_size("rows");
  const std::size_t cols = in.next_size("cols");
  if (rows == 0) throw FormatError("checkpoint: classifier has no rows");
  in.expect("categories");
  for (std::size_t k = 0; k + 1 < rows; ++k) {
    st.classifier.categories.push_back(static_cast<int>(parse_int(in.next("category"))));
  }
  in.expect("classifier_weights");
  st.classifier.weights = Matrix(rows, cols, in.next_doubles(rows * cols, "classifier_weights"));
  in.expect("classifier_bias");
  st.classifier.bias = in.next_doubles(rows, "classifier_bias");
  if (!in.done()) throw FormatError("checkpoint: trailing data");
  st.selection_counts.assign(st.rpn.n_rpns(), 0);
  return st;
}

}  // namespace corpn
