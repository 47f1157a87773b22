#include "corpn/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "corpn/rng.hpp"
#include "corpn/textio.hpp"

namespace corpn {

std::string to_string(Method m) {
  switch (m) {
    case Method::Single: return "single";
    case Method::CoRpn: return "corpn";
    case Method::NaiveEnsemble: return "naive_ensemble";
    case Method::CosineDiv: return "cosine_div";
  }
  return "?";
}

Method parse_method(std::string_view s) {
  if (s == "single") return Method::Single;
  if (s == "corpn") return Method::CoRpn;
  if (s == "naive_ensemble") return Method::NaiveEnsemble;
  if (s == "cosine_div") return Method::CosineDiv;
  throw std::invalid_argument("unknown method '" + std::string(s) +
                              "' (expected single, corpn, naive_ensemble or cosine_div)");
}

ExperimentSpec ExperimentSpec::normalized() const {
  ExperimentSpec out = *this;
  if (out.method == Method::Single) {
    out.n_rpns = 1;
    out.loss.lambda_d = 0.0;
    out.loss.lambda_c = 0.0;
  } else if (out.method == Method::NaiveEnsemble) {
    out.loss.lambda_d = 0.0;
    out.loss.lambda_c = 0.0;
  }
  out.episode.shots = out.shots;
  return out;
}

void ExperimentSpec::validate() const {
  if (n_rpns == 0) throw std::invalid_argument("n_rpns must be >= 1");
  if (shots == 0) throw std::invalid_argument("shots must be >= 1");
  if (seeds.empty()) throw std::invalid_argument("seed list is empty");
  loss.validate();
  world.validate();
  train.validate(method == Method::Single ? 1 : n_rpns);
}

std::vector<MetricsRecord> ExperimentResult::ok_metrics() const {
  std::vector<MetricsRecord> out;
  for (const auto& r : runs)
    if (r.ok) out.push_back(r.metrics);
  return out;
}

RunSeeds derive_seeds(std::uint64_t seed) {
  return {stream_seed(seed, Stream::World), stream_seed(seed, Stream::Scene),
          stream_seed(seed, Stream::Minibatch)};
}

namespace {

double ce_drop_of(const std::vector<LossBreakdown>& history) {
  // Initial CE against the mean of the final tenth (minibatch noise smoothed).
  if (history.size() < 10) return 0.0;
  const std::size_t w = history.size() / 10;
  double last = 0.0;
  for (std::size_t i = history.size() - w; i < history.size(); ++i) last += history[i].ce;
  last /= static_cast<double>(w);
  const double first = history.front().ce;
  return first > 0.0 ? (first - last) / first : 0.0;
}

bool finite(const MetricsRecord& m) {
  return std::isfinite(m.novel_ap50) && std::isfinite(m.base_ap50) && std::isfinite(m.avg_fn) &&
         std::isfinite(m.avg_fg) && std::isfinite(m.proposal_recall) &&
         std::isfinite(m.logdet_cov);
}

std::size_t resolve_jobs(std::size_t jobs) {
  if (jobs != 0) return jobs;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

// Runs every (spec, seed) pair on a shared pool; results land at fixed slots.
std::vector<ExperimentResult> run_all(const std::vector<ExperimentSpec>& specs,
                                      std::size_t jobs) {
  std::vector<ExperimentResult> results(specs.size());
  std::vector<std::pair<std::size_t, std::size_t>> tasks;
  for (std::size_t s = 0; s < specs.size(); ++s) {
    specs[s].validate();
    results[s].spec = specs[s].normalized();
    results[s].runs.resize(specs[s].seeds.size());
    for (std::size_t k = 0; k < specs[s].seeds.size(); ++k) tasks.emplace_back(s, k);
  }
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t t = next++; t < tasks.size(); t = next++) {
      const auto [s, k] = tasks[t];
      results[s].runs[k] = run_seed(results[s].spec, results[s].spec.seeds[k]);
    }
  };
  const std::size_t n_threads = std::min(resolve_jobs(jobs), tasks.size());
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t i = 0; i < n_threads; ++i) pool.emplace_back(worker);
  }
  for (auto& r : results) {
    r.failures = static_cast<std::size_t>(
        std::count_if(r.runs.begin(), r.runs.end(), [](const RunResult& x) { return !x.ok; }));
    r.failed = 10 * r.failures > r.runs.size();
  }
  return results;
}

}  // namespace

RunOutput run_pipeline(const ExperimentSpec& spec_in, std::uint64_t seed, bool phase2) {
  const ExperimentSpec spec = spec_in.normalized();
  const RunSeeds rs = derive_seeds(seed);
  WorldConfig wc = spec.world;
  wc.seed = rs.world;
  const World world = make_world(wc);
  EpisodeConfig ec = spec.episode;
  ec.seed = rs.episode;
  const Episode episode = make_episode(world, ec);
  TrainConfig tc = spec.train;
  tc.seed = rs.train;
  const auto train = prepare_scenes(episode.base_train, world, tc.labels);

  RunOutput out;
  if (spec.method == Method::NaiveEnsemble) {
    out.state.rpn = train_naive_ensemble(world, train, tc, spec.n_rpns);
    out.state.classifier = train_base_classifier(world, train, tc);
  } else {
    out.state = init_state(world, spec.n_rpns, tc);
    Phase1Options opts;
    opts.loss = spec.loss;
    opts.diversity =
        spec.method == Method::CosineDiv ? DiversityKind::Cosine : DiversityKind::LogDet;
    phase1_train(out.state, world, train, tc, opts);
  }
  if (phase2) {
    out.phase2 = phase2_finetune(out.state, world, episode, tc);
  } else {
    out.phase2.scenes = finetune_scenes(episode, tc.phase2_mode);
  }
  out.metrics = evaluate(out.state, world, episode, out.phase2.scenes, tc, spec.eval);
  out.phase2.scenes.clear();  // they point into this call's episode
  return out;
}

RunResult run_seed(const ExperimentSpec& spec, std::uint64_t seed) {
  RunResult res;
  res.seed = seed;
  try {
    const RunOutput out = run_pipeline(spec, seed);
    res.metrics = out.metrics;
    res.selection_counts = out.state.selection_counts;
    res.ce_drop = ce_drop_of(out.state.history);
    if (!finite(res.metrics)) throw std::runtime_error("non-finite metric");
    res.ok = true;
  } catch (const std::exception& e) {
    res.ok = false;
    res.error = e.what();
  }
  return res;
}

ExperimentResult run_experiment(const ExperimentSpec& spec) {
  return std::move(run_all({spec}, spec.jobs).front());
}

Stats summarize(std::span<const double> values) {
  Stats st;
  st.n = values.size();
  if (st.n == 0) return st;
  double sum = 0.0;
  for (double v : values) sum += v;
  st.mean = sum / static_cast<double>(st.n);
  if (st.n < 2) return st;
  double ss = 0.0;
  for (double v : values) ss += (v - st.mean) * (v - st.mean);
  st.stddev = std::sqrt(ss / static_cast<double>(st.n - 1));
  st.stderr_ = st.stddev / std::sqrt(static_cast<double>(st.n));
  return st;
}

PairedStats paired_difference(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("paired_difference: length mismatch");
  PairedStats out;
  out.differences.resize(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out.differences[i] = a[i] - b[i];
  out.stats = summarize(out.differences);
  return out;
}

double field_of(const MetricsRecord& r, Field f) {
  switch (f) {
    case Field::NovelAp50: return r.novel_ap50;
    case Field::BaseAp50: return r.base_ap50;
    case Field::AvgFn: return r.avg_fn;
    case Field::AvgFg: return r.avg_fg;
    case Field::ProposalRecall: return r.proposal_recall;
    case Field::LogdetCov: return r.logdet_cov;
  }
  return 0.0;
}

std::vector<double> column(const std::vector<MetricsRecord>& records, Field f) {
  std::vector<double> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(field_of(r, f));
  return out;
}

Aggregate aggregate(const std::vector<MetricsRecord>& records) {
  Aggregate a;
  a.novel_ap50 = summarize(column(records, Field::NovelAp50));
  a.base_ap50 = summarize(column(records, Field::BaseAp50));
  a.avg_fn = summarize(column(records, Field::AvgFn));
  a.avg_fg = summarize(column(records, Field::AvgFg));
  a.proposal_recall = summarize(column(records, Field::ProposalRecall));
  a.logdet_cov = summarize(column(records, Field::LogdetCov));
  return a;
}

PairedStats paired_against(const ExperimentResult& records, const ExperimentResult& reference,
                           Field f) {
  if (records.runs.size() != reference.runs.size()) {
    throw std::invalid_argument("paired_against: different seed counts");
  }
  std::vector<double> a, b;
  for (std::size_t i = 0; i < records.runs.size(); ++i) {
    if (records.runs[i].seed != reference.runs[i].seed) {
      throw std::invalid_argument("paired_against: seeds are not paired");
    }
    // A pair is usable only when both sides succeeded.
    if (!records.runs[i].ok || !reference.runs[i].ok) continue;
    a.push_back(field_of(records.runs[i].metrics, f));
    b.push_back(field_of(reference.runs[i].metrics, f));
  }
  return paired_difference(a, b);
}

std::vector<PhiRow> sweep_phi(const ExperimentSpec& base, const std::vector<double>& phis) {
  if (phis.empty()) throw std::invalid_argument("sweep_phi: empty phi list");
  std::vector<ExperimentSpec> specs;
  for (double phi : phis) {
    if (!(phi > 0.0 && phi < 1.0)) throw std::invalid_argument("sweep_phi: phi must be in (0, 1)");
    ExperimentSpec s = base;
    s.loss.phi = phi;
    s.train.phase2_mode = Phase2Mode::NovelOnly;
    s.tag = base.tag + "/phi" + fixed(phi, 2);
    specs.push_back(std::move(s));
  }
  auto results = run_all(specs, base.jobs);
  std::vector<PhiRow> rows;
  for (std::size_t i = 0; i < phis.size(); ++i) {
    PhiRow row;
    row.phi = phis[i];
    const auto ok = results[i].ok_metrics();
    row.novel_ap50 = summarize(column(ok, Field::NovelAp50));
    row.avg_fn = summarize(column(ok, Field::AvgFn));
    row.avg_fg = summarize(column(ok, Field::AvgFg));
    row.result = std::move(results[i]);
    rows.push_back(std::move(row));
  }
  return rows;
}

NSweep sweep_n_rpns(const ExperimentSpec& base, const std::vector<std::size_t>& ns) {
  if (ns.empty()) throw std::invalid_argument("sweep_n_rpns: empty list");
  std::vector<ExperimentSpec> specs;
  for (std::size_t n : ns) {
    if (n == 0) throw std::invalid_argument("sweep_n_rpns: N must be >= 1");
    ExperimentSpec s = base;
    s.n_rpns = n;
    // One RPN is the single baseline.
    if (n == 1) s.method = Method::Single;
    s.tag = base.tag + "/n" + std::to_string(n);
    specs.push_back(std::move(s));
  }
  auto results = run_all(specs, base.jobs);
  NSweep sweep;
  std::size_t best = 0;
  for (std::size_t i = 0; i < ns.size(); ++i) {
    NRow row;
    row.n_rpns = ns[i];
    const auto ok = results[i].ok_metrics();
    row.novel_ap50 = summarize(column(ok, Field::NovelAp50));
    row.base_ap50 = summarize(column(ok, Field::BaseAp50));
    row.result = std::move(results[i]);
    sweep.rows.push_back(std::move(row));
    if (sweep.rows[i].novel_ap50.mean > sweep.rows[best].novel_ap50.mean) best = i;
  }
  sweep.argmax_n = ns[best];
  const auto [lo, hi] = std::minmax_element(ns.begin(), ns.end());
  sweep.shape = (ns[best] != *lo && ns[best] != *hi) ? "interior" : "boundary";
  return sweep;
}

std::vector<ExperimentResult> compare_methods(const ExperimentSpec& base,
                                              const std::vector<Method>& methods) {
  if (methods.empty()) throw std::invalid_argument("compare_methods: empty method list");
  std::vector<ExperimentSpec> specs;
  for (Method m : methods) {
    ExperimentSpec s = base;
    s.method = m;
    s.tag = base.tag + "/" + to_string(m);
    specs.push_back(std::move(s));
  }
  return run_all(specs, base.jobs);
}

std::string runs_csv(const std::vector<ExperimentResult>& results) {
  std::ostringstream os;
  os << kRunsCsvHeader << '\n';
  for (const auto& r : results) {
    const ExperimentSpec& s = r.spec;
    for (const auto& run : r.runs) {
      if (!run.ok) continue;
      const MetricsRecord& m = run.metrics;
      os << s.tag << "/s" << run.seed << ',' << to_string(s.method) << ',' << s.n_rpns << ','
         << fixed(s.loss.phi) << ',' << fixed(s.loss.lambda_d) << ',' << fixed(s.loss.lambda_c)
         << ',' << s.shots << ',' << run.seed << ',' << fixed(m.novel_ap50) << ','
         << fixed(m.base_ap50) << ',' << fixed(m.avg_fn) << ',' << fixed(m.avg_fg) << ','
         << fixed(m.proposal_recall) << ',' << fixed(m.logdet_cov) << '\n';
    }
  }
  return os.str();
}

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string_view::npos ? comma : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

double strict_fixed(std::string_view tok, std::size_t line_no) {
  // [-]digits.dddddd
  const std::size_t dot = tok.find('.');
  bool ok = dot != std::string_view::npos && tok.size() - dot - 1 == 6 && dot > 0;
  for (std::size_t i = 0; ok && i < tok.size(); ++i) {
    const char c = tok[i];
    if (i == dot) continue;
    if (i == 0 && c == '-' && dot > 1) continue;
    ok = c >= '0' && c <= '9';
  }
  if (!ok) {
    throw FormatError("runs csv line " + std::to_string(line_no) + ": '" + std::string(tok) +
                      "' is not a 6-digit fixed decimal");
  }
  return parse_double(tok);
}

std::uint64_t strict_uint(std::string_view tok, std::size_t line_no) {
  if (tok.empty() || !std::all_of(tok.begin(), tok.end(), [](char c) { return c >= '0' && c <= '9'; })) {
    throw FormatError("runs csv line " + std::to_string(line_no) + ": '" + std::string(tok) +
                      "' is not an unsigned integer");
  }
  return std::stoull(std::string(tok));
}

}  // namespace

std::vector<CsvRow> parse_runs_csv(std::string_view text) {
  std::vector<CsvRow> rows;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  bool header = false;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!header) {
      if (line != kRunsCsvHeader) throw FormatError("runs csv: header mismatch");
      header = true;
      continue;
    }
    const auto f = split_fields(line);
    if (f.size() != 14) {
      throw FormatError("runs csv line " + std::to_string(line_no) + ": expected 14 fields, got " +
                        std::to_string(f.size()));
    }
    CsvRow row;
    row.run_id = std::string(f[0]);
    if (row.run_id.empty()) throw FormatError("runs csv line " + std::to_string(line_no) + ": empty run_id");
    row.method = std::string(f[1]);
    (void)parse_method(row.method);
    row.n_rpn = strict_uint(f[2], line_no);
    row.phi = strict_fixed(f[3], line_no);
    row.lambda_d = strict_fixed(f[4], line_no);
    row.lambda_c = strict_fixed(f[5], line_no);
    row.shot = strict_uint(f[6], line_no);
    row.seed = strict_uint(f[7], line_no);
    row.metrics.novel_ap50 = strict_fixed(f[8], line_no);
    row.metrics.base_ap50 = strict_fixed(f[9], line_no);
    row.metrics.avg_fn = strict_fixed(f[10], line_no);
    row.metrics.avg_fg = strict_fixed(f[11], line_no);
    row.metrics.proposal_recall = strict_fixed(f[12], line_no);
    row.metrics.logdet_cov = strict_fixed(f[13], line_no);
    rows.push_back(std::move(row));
  }
  if (!header) throw FormatError("runs csv: missing header");
  return rows;
}

}  // namespace corpn
