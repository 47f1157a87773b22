#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace corpn {

/// Central finite-difference checks of every analytic gradient.
struct GradcheckConfig {
  std::uint64_t seed = 1;
  /// Instances per (N, N_A) combination.
  std::size_t per_combo = 12;
  std::vector<std::size_t> ns{2, 3, 5};
  std::vector<std::size_t> nas{8, 16, 64};
  double tol = 1e-4;
  double step = 1e-6;
  /// Term whose analytic gradient gets its sign flipped ("" for none).
  std::string inject_fault;
};

struct TermReport {
  std::string term;
  std::size_t instances = 0;
  double max_rel_err = 0.0;
  /// Seed of the instance that produced max_rel_err.
  std::uint64_t worst_seed = 0;
  bool pass = true;
};

struct GradcheckReport {
  std::vector<TermReport> terms;
  double seconds = 0.0;

  bool pass() const;
  /// One line per term, then "gradcheck: PASS" or "gradcheck: FAIL <terms>".
  std::string text() const;
};

/// Term names: logdet, ce, div, coop, cosine, total.
std::vector<std::string> gradcheck_terms();

GradcheckReport run_gradcheck(const GradcheckConfig& cfg);

/// Entrywise |a - n| / max(|a|, |n|, 1e-6).
double rel_err(double analytic, double numeric);

}  // namespace corpn
