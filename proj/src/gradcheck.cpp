#include "corpn/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <sstream>
#include <stdexcept>

#include "corpn/head.hpp"
#include "corpn/linalg.hpp"
#include "corpn/rng.hpp"
#include "corpn/textio.hpp"

namespace corpn {

double rel_err(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / denom;
}

bool GradcheckReport::pass() const {
  return std::all_of(terms.begin(), terms.end(), [](const TermReport& t) { return t.pass; });
}

std::string GradcheckReport::text() const {
  std::ostringstream os;
  std::vector<std::string> failed;
  for (const auto& t : terms) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-7s instances=%zu max_rel_err=%.3e worst_seed=%llu %s\n",
                  t.term.c_str(), t.instances, t.max_rel_err,
                  static_cast<unsigned long long>(t.worst_seed), t.pass ? "ok" : "FAIL");
    os << buf;
    if (!t.pass) failed.push_back(t.term);
  }
  if (failed.empty()) {
    os << "gradcheck: PASS\n";
  } else {
    os << "gradcheck: FAIL";
    for (const auto& f : failed) os << ' ' << f;
    os << '\n';
  }
  return os.str();
}

std::vector<std::string> gradcheck_terms() {
  return {"logdet", "ce", "div", "coop", "cosine", "total"};
}

namespace {

constexpr double kPhi = 0.3;
// Instances with a probability this close to phi sit in the hinge's kink
// neighborhood and are redrawn.
constexpr double kKinkGap = 1e-3;

struct Instance {
  std::size_t n = 0, m = 0, d = 0;
  CoRpnHead head;
  Matrix proj;      // d x d
  Matrix x;         // d x m
  std::vector<std::uint8_t> labels;
  std::vector<std::uint8_t> fg;
};

Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c, double sd) {
  Matrix out(r, c);
  for (double& v : out.data()) v = normal(rng, 0.0, sd);
  return out;
}

Matrix random_probs(Rng& rng, std::size_t n, std::size_t m) {
  Matrix f(n, m);
  for (double& v : f.data()) {
    do {
      v = uniform(rng, 0.02, 0.98);
    } while (std::abs(v - kPhi) < kKinkGap);
  }
  return f;
}

std::vector<std::uint8_t> random_mask(Rng& rng, std::size_t m) {
  std::vector<std::uint8_t> mask(m);
  for (auto& v : mask) v = uniform01(rng) < 0.4 ? 1 : 0;
  mask[0] = 1;
  return mask;
}

// Max entrywise rel-err of an analytic gradient against central differences
// of `loss` over the entries of `params`.
double compare(std::vector<double>& params, const std::vector<double>& analytic,
               const std::function<double()>& loss, double h, bool flip) {
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    const double saved = params[k];
    params[k] = saved + h;
    const double up = loss();
    params[k] = saved - h;
    const double down = loss();
    params[k] = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double a = flip ? -analytic[k] : analytic[k];
    worst = std::max(worst, rel_err(a, numeric));
  }
  return worst;
}

std::vector<double> to_vec(const Matrix& m) { return {m.data().begin(), m.data().end()}; }

Matrix from_vec(const std::vector<double>& v, std::size_t r, std::size_t c) {
  Matrix out(r, c);
  std::copy(v.begin(), v.end(), out.data().begin());
  return out;
}

double check_logdet(Rng& rng, std::size_t n, std::size_t m, double h, bool flip) {
  // Through the covariance: d/dF of log det(cov(F) + eps I).
  const Matrix f0 = random_probs(rng, n, m);
  const double ridge = 1e-6;
  const Matrix g = chain_covariance_grad(f0, grad_logdet(covariance(f0), ridge));
  std::vector<double> p = to_vec(f0);
  return compare(p, to_vec(g),
                 [&] { return logdet_psd(covariance(from_vec(p, n, m)), ridge); }, h, flip);
}

double check_prob_term(Rng& rng, std::size_t n, std::size_t m, double h, bool flip,
                       const std::string& term) {
  const Matrix f0 = random_probs(rng, n, m);
  const auto fg = random_mask(rng, m);
  auto eval = [&](const Matrix& f) {
    if (term == "div") return diversity_loss(f, 1e-6);
    if (term == "coop") return coop_loss(f, fg, kPhi);
    return cosine_diversity_loss(f);
  };
  const LossTerm t = eval(f0);
  std::vector<double> p = to_vec(f0);
  return compare(p, to_vec(t.grad), [&] { return eval(from_vec(p, n, m)).value; }, h, flip);
}

double check_ce(Rng& rng, std::size_t n, std::size_t m, double h, bool flip) {
  // Gradient w.r.t. raw scores with the selection held fixed.
  Matrix raw = random_matrix(rng, n, m, 2.0);
  const auto labels = random_mask(rng, m);
  auto make_out = [&](const Matrix& r) {
    ForwardOutput out;
    out.raw = r;
    out.probs = Matrix(n, m);
    for (std::size_t k = 0; k < r.size(); ++k) out.probs.data()[k] = sigmoid(r.data()[k]);
    return out;
  };
  ForwardOutput out0 = make_out(raw);
  out0.selected = select_columns(out0.probs);
  const LossTerm t = ce_loss_selected(out0, labels);
  std::vector<double> p = to_vec(raw);
  return compare(
      p, to_vec(t.grad),
      [&] {
        ForwardOutput o = make_out(from_vec(p, n, m));
        o.selected = out0.selected;
        return ce_loss_selected(o, labels).value;
      },
      h, flip);
}

Instance make_instance(Rng& rng, std::size_t n, std::size_t m) {
  Instance in;
  in.n = n;
  in.m = m;
  in.d = 6;
  // Redraw until no probability is near the hinge kink.
  for (int attempt = 0; attempt < 1000; ++attempt) {
    in.head.weights = random_matrix(rng, n, in.d, 0.5);
    in.head.biases.assign(n, 0.0);
    for (double& b : in.head.biases) b = normal(rng, 0.0, 0.3);
    in.proj = random_matrix(rng, in.d, in.d, 0.4);
    in.x = random_matrix(rng, in.d, m, 1.0);
    const auto out = forward(in.head, matmul(in.proj, in.x));
    bool clear = true;
    for (double f : out.probs.data()) clear = clear && std::abs(f - kPhi) >= kKinkGap;
    if (clear) break;
  }
  in.labels = random_mask(rng, m);
  in.fg = in.labels;
  return in;
}

double check_total(Rng& rng, std::size_t n, std::size_t m, double h, bool flip) {
  Instance in = make_instance(rng, n, m);
  LossConfig cfg;
  cfg.phi = kPhi;
  cfg.lambda_d = 0.05;
  cfg.lambda_c = 1.0;
  const Matrix emb0 = matmul(in.proj, in.x);
  const ForwardOutput out0 = forward(in.head, emb0);
  const TotalLoss tl = total_loss(in.head, emb0, out0, in.labels, in.fg, cfg);
  const Matrix grad_proj = matmul_nt(tl.grads.features, in.x);

  std::vector<double> w = to_vec(in.head.weights);
  std::vector<double> b = in.head.biases;
  std::vector<double> p = to_vec(in.proj);
  auto loss = [&] {
    CoRpnHead head;
    head.weights = from_vec(w, in.n, in.d);
    head.biases = b;
    const Matrix emb = matmul(from_vec(p, in.d, in.d), in.x);
    ForwardOutput out = forward(head, emb);
    out.selected = out0.selected;  // selection is not differentiated
    return total_loss(head, emb, out, in.labels, in.fg, cfg).breakdown.total;
  };
  double worst = compare(w, to_vec(tl.grads.weights), loss, h, flip);
  worst = std::max(worst, compare(b, tl.grads.biases, loss, h, flip));
  worst = std::max(worst, compare(p, to_vec(grad_proj), loss, h, flip));
  return worst;
}

}  // namespace

GradcheckReport run_gradcheck(const GradcheckConfig& cfg) {
  const auto terms = gradcheck_terms();
  if (!cfg.inject_fault.empty() &&
      std::find(terms.begin(), terms.end(), cfg.inject_fault) == terms.end()) {
    throw std::invalid_argument("gradcheck: unknown term '" + cfg.inject_fault + "'");
  }
  const auto start = std::chrono::steady_clock::now();
  GradcheckReport report;
  for (std::size_t t = 0; t < terms.size(); ++t) {
    const std::string& term = terms[t];
    const bool flip = term == cfg.inject_fault;
    TermReport tr;
    tr.term = term;
    for (std::size_t n : cfg.ns) {
      for (std::size_t m : cfg.nas) {
        for (std::size_t i = 0; i < cfg.per_combo; ++i) {
          const std::uint64_t seed = stream_seed(cfg.seed, Stream::Gradcheck, {t, n, m, i});
          Rng rng(seed);
          double e = 0.0;
          if (term == "logdet") {
            e = check_logdet(rng, n, m, cfg.step, flip);
          } else if (term == "ce") {
            e = check_ce(rng, n, m, cfg.step, flip);
          } else if (term == "total") {
            e = check_total(rng, n, m, cfg.step, flip);
          } else {
            e = check_prob_term(rng, n, m, cfg.step, flip, term);
          }
          ++tr.instances;
          if (!(e <= tr.max_rel_err)) {
            tr.max_rel_err = e;
            tr.worst_seed = seed;
          }
        }
      }
    }
    tr.pass = tr.max_rel_err <= cfg.tol;
    report.terms.push_back(tr);
  }
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace corpn
