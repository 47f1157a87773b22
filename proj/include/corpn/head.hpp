#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "corpn/linalg.hpp"
#include "corpn/rng.hpp"

namespace corpn {

/// N binary foreground/background classifiers over a shared feature space.
/// weights is N x D, biases has N entries.
struct CoRpnHead {
  Matrix weights;
  std::vector<double> biases;

  CoRpnHead() = default;
  CoRpnHead(std::size_t n_rpns, std::size_t feature_dim)
      : weights(n_rpns, feature_dim), biases(n_rpns, 0.0) {}

  std::size_t n_rpns() const { return weights.rows(); }
  std::size_t feature_dim() const { return weights.cols(); }
  bool all_finite() const;

  /// Gaussian init of the weights (stddev init_std), zero biases.
  static CoRpnHead random(std::size_t n_rpns, std::size_t feature_dim, double init_std,
                          std::uint64_t seed);

  friend bool operator==(const CoRpnHead&, const CoRpnHead&) = default;
};

struct ForwardOutput {
  Matrix raw;                          // N x N_A
  Matrix probs;                        // N x N_A, sigmoid(raw)
  std::vector<std::size_t> selected;   // j* per anchor
};

struct LossConfig {
  double phi = 0.3;
  double lambda_d = 0.05;
  double lambda_c = 1.0;
  double ridge = 1e-6;

  /// Throws std::invalid_argument on out-of-range values.
  void validate() const;
  /// Non-fatal remarks, e.g. phi >= 0.5.
  std::vector<std::string> warnings() const;
};

struct LossBreakdown {
  double ce = 0.0;
  double div = 0.0;
  double coop = 0.0;
  double total = 0.0;
};

/// Loss value plus its gradient. The gradient space is documented per
/// function: the cross-entropy term reports d/d(raw scores), the diversity and
/// cooperation terms report d/d(probabilities).
struct LossTerm {
  double value = 0.0;
  Matrix grad;
};

enum class DiversityKind : std::uint8_t { LogDet, Cosine };

double sigmoid(double x);

/// argmin_j min(f_j, 1 - f_j); ties go to the lowest index.
std::size_t select_rpn(std::span<const double> f_col);

/// Per-column selection over a probability matrix.
std::vector<std::size_t> select_columns(const Matrix& probs);

/// raw = W * features + b, probs = sigmoid(raw), j* per column.
ForwardOutput forward(const CoRpnHead& head, const Matrix& features);

/// Mean binary cross-entropy where anchor i only contributes through row
/// j*[i]. Gradient is w.r.t. raw scores and is zero off the selected entries.
/// labels[i] is 1 for foreground, 0 for background.
LossTerm ce_loss_selected(const ForwardOutput& out, std::span<const std::uint8_t> labels);

/// -log det(cov(f) + ridge I). Gradient w.r.t. f, reaching every row.
LossTerm diversity_loss(const Matrix& probs, double ridge);

/// Mean over (foreground anchor, RPN) pairs of max(0, phi - f). Gradient
/// w.r.t. f; the subgradient at f == phi is 0. No foreground anchors gives 0.
LossTerm coop_loss(const Matrix& probs, std::span<const std::uint8_t> fg_mask, double phi);

/// Mean pairwise cosine similarity of the mean-centered rows of f. Pairs with
/// a zero-norm centered row contribute 0. Gradient w.r.t. f.
LossTerm cosine_diversity_loss(const Matrix& probs);

struct HeadGradients {
  Matrix weights;                // N x D
  std::vector<double> biases;    // N
  Matrix features;               // D x N_A, for a trainable extractor below
};

struct TotalLoss {
  LossBreakdown breakdown;
  Matrix grad_raw;     // d total / d raw scores, N x N_A
  Matrix grad_ce_raw;  // routed CE part alone, kept for instrumentation
  HeadGradients grads;
};

/// ce + lambda_d * div + lambda_c * coop with parameter gradients. Terms whose
/// weight is zero are skipped entirely. Selection in `out` is taken as fixed.
TotalLoss total_loss(const CoRpnHead& head, const Matrix& features, const ForwardOutput& out,
                     std::span<const std::uint8_t> labels, std::span<const std::uint8_t> fg_mask,
                     const LossConfig& cfg, DiversityKind diversity = DiversityKind::LogDet);

struct BoxScore {
  double score = 0.0;
  bool is_foreground = false;
};

/// Test-time scoring: the box takes the most certain RPN's probability and is
/// foreground when max f + min f > 1.
BoxScore score_box(std::span<const double> f_col);

/// Text record: "corpn-head 1", then n_rpns, feature_dim, weights (row-major)
/// and biases as hexadecimal floats so the round trip is exact.
std::string serialize_head(const CoRpnHead& head);
CoRpnHead parse_head(std::string_view text);

}  // namespace corpn
