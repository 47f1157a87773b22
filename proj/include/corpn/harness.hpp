#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "corpn/eval.hpp"
#include "corpn/head.hpp"
#include "corpn/simworld.hpp"
#include "corpn/train.hpp"

namespace corpn {

enum class Method : std::uint8_t { Single, CoRpn, NaiveEnsemble, CosineDiv };

std::string to_string(Method m);
Method parse_method(std::string_view s);

struct ExperimentSpec {
  Method method = Method::CoRpn;
  std::size_t n_rpns = 5;
  LossConfig loss;
  std::size_t shots = 1;
  std::vector<std::uint64_t> seeds;
  WorldConfig world;
  EpisodeConfig episode;
  TrainConfig train;
  EvalConfig eval;
  /// Parallel seeds; 0 means hardware concurrency.
  std::size_t jobs = 0;
  /// Prefix for run ids.
  std::string tag = "run";

  /// Applies method constraints: single forces one RPN with no extra loss
  /// terms, naive ensembles carry no extra loss terms either.
  ExperimentSpec normalized() const;
  void validate() const;
};

struct RunResult {
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  MetricsRecord metrics;
  std::vector<std::size_t> selection_counts;
  /// Relative drop of the CE term from step 0 to the mean of the last tenth
  /// of phase 1.
  double ce_drop = 0.0;
};

struct ExperimentResult {
  ExperimentSpec spec;
  std::vector<RunResult> runs;  // seed order
  std::size_t failures = 0;
  /// More than 10% of seeds failed.
  bool failed = false;

  std::vector<MetricsRecord> ok_metrics() const;
};

/// Seeds derived per run; identical across methods so comparisons pair.
struct RunSeeds {
  std::uint64_t world;
  std::uint64_t episode;
  std::uint64_t train;
};
RunSeeds derive_seeds(std::uint64_t seed);

/// Everything one pipeline run produces.
struct RunOutput {
  TrainState state;
  Phase2Report phase2;
  MetricsRecord metrics;
};

/// World, episode, phase 1, optional phase 2 and evaluation for one seed.
/// Throws on failure.
RunOutput run_pipeline(const ExperimentSpec& spec, std::uint64_t seed, bool phase2 = true);

/// Full two-phase pipeline for one seed. Never throws; failures are recorded.
RunResult run_seed(const ExperimentSpec& spec, std::uint64_t seed);

/// Runs every seed (concurrently up to spec.jobs) and returns results in
/// seed order.
ExperimentResult run_experiment(const ExperimentSpec& spec);

struct Stats {
  double mean = 0.0;
  double stddev = 0.0;
  double stderr_ = 0.0;
  std::size_t n = 0;
};

/// Mean, unbiased stddev and standard error. Spread needs n >= 2 (else 0).
Stats summarize(std::span<const double> values);

/// Per-seed differences a - b and their statistics.
struct PairedStats {
  std::vector<double> differences;
  Stats stats;
};
PairedStats paired_difference(std::span<const double> a, std::span<const double> b);

enum class Field : std::uint8_t { NovelAp50, BaseAp50, AvgFn, AvgFg, ProposalRecall, LogdetCov };
double field_of(const MetricsRecord& r, Field f);
std::vector<double> column(const std::vector<MetricsRecord>& records, Field f);

/// Aggregate statistics of every metric across records.
struct Aggregate {
  Stats novel_ap50, base_ap50, avg_fn, avg_fg, proposal_recall, logdet_cov;
};
Aggregate aggregate(const std::vector<MetricsRecord>& records);

/// Paired metric differences of `records` against `reference`, per seed.
PairedStats paired_against(const ExperimentResult& records, const ExperimentResult& reference,
                           Field f);

struct PhiRow {
  double phi = 0.0;
  Stats novel_ap50, avg_fn, avg_fg;
  ExperimentResult result;
};

/// One row per phi; phase 2 runs in novel_only mode.
std::vector<PhiRow> sweep_phi(const ExperimentSpec& base, const std::vector<double>& phis);

struct NRow {
  std::size_t n_rpns = 0;
  Stats novel_ap50, base_ap50;
  ExperimentResult result;
};

struct NSweep {
  std::vector<NRow> rows;
  /// "interior" when novel AP50 peaks strictly inside the swept range,
  /// "boundary" otherwise.
  std::string shape;
  std::size_t argmax_n = 0;
};

NSweep sweep_n_rpns(const ExperimentSpec& base, const std::vector<std::size_t>& ns);

/// Runs each method on the same seeds.
std::vector<ExperimentResult> compare_methods(const ExperimentSpec& base,
                                              const std::vector<Method>& methods);

/// Harness CSV schema (header included, 6 fractional digits).
inline constexpr std::string_view kRunsCsvHeader =
    "run_id,method,n_rpn,phi,lambda_d,lambda_c,shot,seed,novel_ap50,base_ap50,avg_fn,avg_fg,"
    "proposal_recall,logdet_cov";

std::string runs_csv(const std::vector<ExperimentResult>& results);

struct CsvRow {
  std::string run_id;
  std::string method;
  std::size_t n_rpn = 0;
  double phi = 0.0, lambda_d = 0.0, lambda_c = 0.0;
  std::size_t shot = 0;
  std::uint64_t seed = 0;
  MetricsRecord metrics;
};

/// Strict parser: exact header, 14 fields per row, fixed 6-digit decimals.
std::vector<CsvRow> parse_runs_csv(std::string_view text);

}  // namespace corpn
