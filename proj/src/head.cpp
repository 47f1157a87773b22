#include "corpn/head.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "corpn/textio.hpp"

namespace corpn {

bool CoRpnHead::all_finite() const {
  if (!weights.all_finite()) return false;
  return std::all_of(biases.begin(), biases.end(), [](double v) { return std::isfinite(v); });
}

CoRpnHead CoRpnHead::random(std::size_t n_rpns, std::size_t feature_dim, double init_std,
                            std::uint64_t seed) {
  if (n_rpns == 0 || feature_dim == 0) {
    throw std::invalid_argument("CoRpnHead: n_rpns and feature_dim must be >= 1");
  }
  CoRpnHead head(n_rpns, feature_dim);
  for (std::size_t j = 0; j < n_rpns; ++j) {
    // One stream per RPN so that head j is the same regardless of N.
    Rng rng = make_rng(seed, Stream::HeadInit, {j});
    for (double& w : head.weights.row(j)) w = normal(rng, 0.0, init_std);
  }
  return head;
}

void LossConfig::validate() const {
  if (!(phi > 0.0 && phi < 1.0)) throw std::invalid_argument("loss.phi must be in (0, 1)");
  if (!(lambda_d >= 0.0) || !std::isfinite(lambda_d))
    throw std::invalid_argument("loss.lambda_d must be >= 0");
  if (!(lambda_c >= 0.0) || !std::isfinite(lambda_c))
    throw std::invalid_argument("loss.lambda_c must be >= 0");
  if (!(ridge >= 0.0) || !std::isfinite(ridge))
    throw std::invalid_argument("loss.ridge must be >= 0");
}

std::vector<std::string> LossConfig::warnings() const {
  std::vector<std::string> out;
  if (phi >= 0.5) {
    out.push_back("loss.phi >= 0.5: every RPN is pushed to call foreground boxes foreground");
  }
  return out;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

namespace {

double certainty_gap(double f) { return std::min(f, 1.0 - f); }

// log(1 + exp(x)) without overflow.
double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

void check_mask(std::span<const std::uint8_t> mask, std::size_t n_anchors, const char* what) {
  if (mask.size() != n_anchors) {
    throw DimensionError(std::string(what) + ": mask length does not match anchor count");
  }
}

}  // namespace

std::size_t select_rpn(std::span<const double> f_col) {
  std::size_t best = 0;
  double best_gap = certainty_gap(f_col.empty() ? 0.5 : f_col[0]);
  for (std::size_t j = 1; j < f_col.size(); ++j) {
    const double gap = certainty_gap(f_col[j]);
    if (gap < best_gap) {
      best_gap = gap;
      best = j;
    }
  }
  return best;
}

std::vector<std::size_t> select_columns(const Matrix& probs) {
  std::vector<std::size_t> sel(probs.cols(), 0);
  std::vector<double> col(probs.rows());
  for (std::size_t i = 0; i < probs.cols(); ++i) {
    for (std::size_t j = 0; j < probs.rows(); ++j) col[j] = probs(j, i);
    sel[i] = select_rpn(col);
  }
  return sel;
}

ForwardOutput forward(const CoRpnHead& head, const Matrix& features) {
  if (features.rows() != head.feature_dim()) {
    throw DimensionError("forward: feature rows do not match head feature_dim");
  }
  ForwardOutput out;
  out.raw = matmul(head.weights, features);
  for (std::size_t j = 0; j < out.raw.rows(); ++j) {
    for (double& v : out.raw.row(j)) v += head.biases[j];
  }
  out.probs = out.raw;
  for (double& v : out.probs.data()) v = sigmoid(v);
  out.selected = select_columns(out.probs);
  return out;
}

LossTerm ce_loss_selected(const ForwardOutput& out, std::span<const std::uint8_t> labels) {
  const std::size_t m = out.raw.cols();
  check_mask(labels, m, "ce_loss_selected");
  LossTerm term{0.0, Matrix(out.raw.rows(), m)};
  if (m == 0) return term;
  const double inv_m = 1.0 / static_cast<double>(m);
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t j = out.selected[i];
    const double y = labels[i] ? 1.0 : 0.0;
    const double r = out.raw(j, i);
    term.value += softplus(r) - y * r;
    term.grad(j, i) = (out.probs(j, i) - y) * inv_m;
  }
  term.value *= inv_m;
  return term;
}

LossTerm diversity_loss(const Matrix& probs, double ridge) {
  const Matrix cov = covariance(probs);
  LossTerm term;
  term.value = -logdet_psd(cov, ridge);
  term.grad = chain_covariance_grad(probs, grad_logdet(cov, ridge));
  for (double& v : term.grad.data()) v = -v;
  return term;
}

LossTerm coop_loss(const Matrix& probs, std::span<const std::uint8_t> fg_mask, double phi) {
  const std::size_t n = probs.rows();
  const std::size_t m = probs.cols();
  check_mask(fg_mask, m, "coop_loss");
  LossTerm term{0.0, Matrix(n, m)};
  const auto n_fg = static_cast<std::size_t>(std::count_if(
      fg_mask.begin(), fg_mask.end(), [](std::uint8_t v) { return v != 0; }));
  if (n_fg == 0 || n == 0) return term;
  const double inv = 1.0 / static_cast<double>(n_fg * n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < m; ++i) {
      if (!fg_mask[i]) continue;
      const double gap = phi - probs(j, i);
      if (gap > 0.0) {
        term.value += gap;
        term.grad(j, i) = -inv;
      }
    }
  }
  term.value *= inv;
  return term;
}

LossTerm cosine_diversity_loss(const Matrix& probs) {
  const std::size_t n = probs.rows();
  const std::size_t m = probs.cols();
  if (n < 2) throw DimensionError("cosine_diversity_loss: need at least 2 RPNs");
  Matrix c = probs;
  std::vector<double> norm(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    auto row = c.row(j);
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(m);
    double sq = 0.0;
    for (double& v : row) {
      v -= mean;
      sq += v * v;
    }
    norm[j] = std::sqrt(sq);
  }

  LossTerm term{0.0, Matrix(n, m)};
  const double n_pairs = 0.5 * static_cast<double>(n * (n - 1));
  constexpr double kTiny = 1e-12;
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = a + 1; b < n; ++b) {
      if (norm[a] < kTiny || norm[b] < kTiny) continue;
      auto ca = c.row(a);
      auto cb = c.row(b);
      double dot = 0.0;
      for (std::size_t i = 0; i < m; ++i) dot += ca[i] * cb[i];
      const double nab = norm[a] * norm[b];
      const double cosv = dot / nab;
      term.value += cosv;
      // Centered rows have zero mean, so the centering Jacobian is a no-op here.
      for (std::size_t i = 0; i < m; ++i) {
        term.grad(a, i) += (cb[i] / nab - cosv * ca[i] / (norm[a] * norm[a])) / n_pairs;
        term.grad(b, i) += (ca[i] / nab - cosv * cb[i] / (norm[b] * norm[b])) / n_pairs;
      }
    }
  }
  term.value /= n_pairs;
  return term;
}

TotalLoss total_loss(const CoRpnHead& head, const Matrix& features, const ForwardOutput& out,
                     std::span<const std::uint8_t> labels, std::span<const std::uint8_t> fg_mask,
                     const LossConfig& cfg, DiversityKind diversity) {
  if (features.rows() != head.feature_dim() || features.cols() != out.raw.cols() ||
      out.raw.rows() != head.n_rpns()) {
    throw DimensionError("total_loss: inconsistent shapes");
  }
  TotalLoss res;
  LossTerm ce = ce_loss_selected(out, labels);
  res.breakdown.ce = ce.value;
  res.grad_ce_raw = ce.grad;
  res.grad_raw = std::move(ce.grad);

  const std::size_t n = out.probs.rows();
  const std::size_t m = out.probs.cols();
  Matrix grad_prob;
  if (cfg.lambda_d != 0.0) {
    LossTerm div = diversity == DiversityKind::LogDet ? diversity_loss(out.probs, cfg.ridge)
                                                      : cosine_diversity_loss(out.probs);
    res.breakdown.div = div.value;
    grad_prob = std::move(div.grad);
    for (double& v : grad_prob.data()) v *= cfg.lambda_d;
  }
  if (cfg.lambda_c != 0.0) {
    LossTerm coop = coop_loss(out.probs, fg_mask, cfg.phi);
    res.breakdown.coop = coop.value;
    if (grad_prob.empty()) grad_prob = Matrix(n, m);
    for (std::size_t k = 0; k < grad_prob.size(); ++k) {
      grad_prob.data()[k] += cfg.lambda_c * coop.grad.data()[k];
    }
  }
  res.breakdown.total =
      res.breakdown.ce + cfg.lambda_d * res.breakdown.div + cfg.lambda_c * res.breakdown.coop;
  if (!grad_prob.empty()) {
    for (std::size_t k = 0; k < grad_prob.size(); ++k) {
      const double f = out.probs.data()[k];
      res.grad_raw.data()[k] += grad_prob.data()[k] * f * (1.0 - f);
    }
  }

  res.grads.weights = matmul_nt(res.grad_raw, features);
  res.grads.biases.assign(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    for (double g : res.grad_raw.row(j)) res.grads.biases[j] += g;
  }
  res.grads.features = matmul_tn(head.weights, res.grad_raw);
  return res;
}

BoxScore score_box(std::span<const double> f_col) {
  BoxScore s;
  if (f_col.empty()) return s;
  s.score = f_col[select_rpn(f_col)];
  const auto [lo, hi] = std::minmax_element(f_col.begin(), f_col.end());
  s.is_foreground = (*hi + *lo) > 1.0;
  return s;
}

std::string serialize_head(const CoRpnHead& head) {
  std::ostringstream os;
  os << "corpn-head 1\n";
  os << "n_rpns " << head.n_rpns() << "\n";
  os << "feature_dim " << head.feature_dim() << "\n";
  os << "weights ";
  write_doubles(os, head.weights.data());
  os << "\nbiases ";
  write_doubles(os, head.biases);
  os << "\n";
  return os.str();
}

CoRpnHead parse_head(std::string_view text) {
  TokenReader in(text);
  in.expect("corpn-head");
  const std::string version = in.next("version");
  if (version != "1") throw FormatError("unsupported corpn-head version " + version);
  in.expect("n_rpns");
  const std::size_t n = in.next_size("n_rpns");
  in.expect("feature_dim");
  const std::size_t d = in.next_size("feature_dim");
  if (n == 0 || d == 0) throw FormatError("corpn-head: empty head");
  CoRpnHead head;
  in.expect("weights");
  head.weights = Matrix(n, d, in.next_doubles(n * d, "weights"));
  in.expect("biases");
  head.biases = in.next_doubles(n, "biases");
  if (!in.done()) throw FormatError("corpn-head: trailing data");
  return head;
}

}  // namespace corpn
