// corpn: train, ablate, gradcheck and rerun from the command line.
#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "corpn/config.hpp"
#include "corpn/gradcheck.hpp"
#include "corpn/harness.hpp"
#include "corpn/textio.hpp"

namespace fs = std::filesystem;
using namespace corpn;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailed = 1;
constexpr int kExitUsage = 2;

struct CommonArgs {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::size_t jobs = 0;
  std::string out = "out";
  std::vector<std::string> sets;
};

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot read file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write '" + path.string() + "'");
  out << text;
}

RunConfig load_config(const CommonArgs& args) {
  RunConfig cfg;
  if (!args.config_path.empty()) cfg = parse_config(read_file(args.config_path));
  for (const auto& s : args.sets) apply_override(cfg, s);
  if (args.seed) cfg.seed = *args.seed;
  cfg.validate();
  return cfg;
}

std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

struct Manifest {
  std::string command;
  std::vector<std::string> artifacts;
  std::vector<std::pair<std::string, std::string>> extra;
};

void write_manifest(const fs::path& dir, const Manifest& m, const RunConfig& cfg,
                    std::size_t jobs, double seconds) {
  std::ostringstream os;
  os << "# corpn run manifest; feed back with `corpn rerun`\n[manifest]\n";
  os << "command = " << m.command << "\n";
  os << "config_hash = " << hex64(config_hash(cfg)) << "\n";
  os << "artifacts = ";
  for (std::size_t i = 0; i < m.artifacts.size(); ++i) os << (i ? ", " : "") << m.artifacts[i];
  os << "\n";
  os << "jobs = " << jobs << "\n";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", seconds);
  os << "wall_clock_seconds = " << buf << "\n";
  for (const auto& [k, v] : m.extra) os << k << " = " << v << "\n";
  os << "\n" << canonical_config(cfg);
  write_file(dir / "manifest.ini", os.str());
}

std::string stats_cells(const Stats& s) { return fixed(s.mean) + "," + fixed(s.stderr_); }

// Failed runs go to stderr, one line each.
std::size_t report_failures(const std::vector<ExperimentResult>& results, bool& experiment_failed) {
  std::size_t n = 0;
  for (const auto& r : results) {
    for (const auto& run : r.runs) {
      if (run.ok) continue;
      ++n;
      std::cerr << "FAILED " << r.spec.tag << "/s" << run.seed << ": " << run.error << "\n";
    }
    if (r.failed) {
      experiment_failed = true;
      std::cerr << "EXPERIMENT FAILED " << r.spec.tag << ": " << r.failures << " of "
                << r.runs.size() << " seeds failed\n";
    }
  }
  return n;
}

int cmd_train(const RunConfig& cfg, const fs::path& out, std::size_t jobs,
              Manifest& manifest) {
  ExperimentSpec spec = cfg.spec();
  spec.tag = "train";
  const RunOutput run = run_pipeline(spec, cfg.seed, cfg.phase2);
  for (const auto& w : spec.loss.warnings()) std::cerr << "warning: " << w << "\n";
  write_file(out / "checkpoint.txt", serialize_checkpoint(run.state, config_hash(cfg)));
  write_file(out / "loss_curve.csv", loss_curve_csv(run.state.history));

  ExperimentResult er;
  er.spec = spec.normalized();
  RunResult rr;
  rr.seed = cfg.seed;
  rr.ok = true;
  rr.metrics = run.metrics;
  er.runs.push_back(rr);
  write_file(out / "metrics.csv", runs_csv({er}));
  manifest.artifacts = {"checkpoint.txt", "loss_curve.csv", "metrics.csv"};
  (void)jobs;

  const auto& m = run.metrics;
  std::printf("novel_ap50=%s base_ap50=%s avg_fn=%s avg_fg=%s proposal_recall=%s logdet_cov=%s\n",
              fixed(m.novel_ap50).c_str(), fixed(m.base_ap50).c_str(), fixed(m.avg_fn).c_str(),
              fixed(m.avg_fg).c_str(), fixed(m.proposal_recall).c_str(),
              fixed(m.logdet_cov).c_str());
  return kExitOk;
}

int cmd_ablate(const std::string& what, const RunConfig& cfg, const fs::path& out,
               std::size_t jobs, Manifest& manifest) {
  ExperimentSpec spec = cfg.spec();
  spec.jobs = jobs;
  spec.tag = what;
  std::vector<ExperimentResult> results;
  std::ostringstream summary;

  if (what == "phi") {
    const auto rows = sweep_phi(spec, cfg.phis);
    summary << "phi,n_ok,n_failed,novel_ap50_mean,novel_ap50_stderr,avg_fn_mean,avg_fn_stderr,"
               "avg_fg_mean,avg_fg_stderr\n";
    for (const auto& r : rows) {
      summary << fixed(r.phi) << ',' << r.novel_ap50.n << ',' << r.result.failures << ','
              << stats_cells(r.novel_ap50) << ',' << stats_cells(r.avg_fn) << ','
              << stats_cells(r.avg_fg) << '\n';
      results.push_back(r.result);
    }
  } else if (what == "nrpn") {
    const NSweep sweep = sweep_n_rpns(spec, cfg.ns);
    summary << "n_rpn,n_ok,n_failed,novel_ap50_mean,novel_ap50_stderr,base_ap50_mean,"
               "base_ap50_stderr\n";
    for (const auto& r : sweep.rows) {
      summary << r.n_rpns << ',' << r.novel_ap50.n << ',' << r.result.failures << ','
              << stats_cells(r.novel_ap50) << ',' << stats_cells(r.base_ap50) << '\n';
      results.push_back(r.result);
    }
    manifest.extra.emplace_back("nrpn_shape", sweep.shape);
    manifest.extra.emplace_back("nrpn_argmax", std::to_string(sweep.argmax_n));
    std::printf("novel AP50 peaks at N=%zu (%s)\n", sweep.argmax_n, sweep.shape.c_str());
  } else {
    results = compare_methods(spec, cfg.methods);
    summary << "method,n_rpn,n_ok,n_failed,novel_ap50_mean,novel_ap50_stderr,base_ap50_mean,"
               "base_ap50_stderr,avg_fn_mean,avg_fn_stderr,avg_fg_mean,avg_fg_stderr,"
               "proposal_recall_mean,proposal_recall_stderr,logdet_cov_mean,logdet_cov_stderr,"
               "paired_novel_ap50_diff,paired_novel_ap50_diff_stderr\n";
    for (const auto& r : results) {
      const Aggregate a = aggregate(r.ok_metrics());
      const PairedStats d = paired_against(r, results.front(), Field::NovelAp50);
      summary << to_string(r.spec.method) << ',' << r.spec.n_rpns << ',' << a.novel_ap50.n << ','
              << r.failures << ',' << stats_cells(a.novel_ap50) << ','
              << stats_cells(a.base_ap50) << ',' << stats_cells(a.avg_fn) << ','
              << stats_cells(a.avg_fg) << ',' << stats_cells(a.proposal_recall) << ','
              << stats_cells(a.logdet_cov) << ',' << stats_cells(d.stats) << '\n';
    }
  }
  write_file(out / "runs.csv", runs_csv(results));
  write_file(out / "summary.csv", summary.str());
  manifest.artifacts = {"runs.csv", "summary.csv"};
  std::cout << summary.str();

  bool failed = false;
  const std::size_t n_failed = report_failures(results, failed);
  manifest.extra.emplace_back("failed_runs", std::to_string(n_failed));
  return failed ? kExitFailed : kExitOk;
}

int dispatch(const std::string& command, const RunConfig& cfg, const fs::path& out,
             std::size_t jobs) {
  fs::create_directories(out);
  const auto start = std::chrono::steady_clock::now();
  Manifest manifest;
  manifest.command = command;
  int rc = kExitOk;
  if (command == "train") {
    rc = cmd_train(cfg, out, jobs, manifest);
  } else if (command == "export-episode") {
    const RunSeeds rs = derive_seeds(cfg.seed);
    WorldConfig wc = cfg.experiment.world;
    wc.seed = rs.world;
    EpisodeConfig ec = cfg.experiment.episode;
    ec.shots = cfg.experiment.shots;
    ec.seed = rs.episode;
    write_file(out / "episode.csv", export_episode(make_episode(make_world(wc), ec)));
    manifest.artifacts = {"episode.csv"};
  } else if (command.rfind("ablate ", 0) == 0) {
    const std::string what = command.substr(7);
    if (what != "phi" && what != "nrpn" && what != "methods") {
      throw UsageError("unknown ablation '" + what + "'");
    }
    rc = cmd_ablate(what, cfg, out, jobs, manifest);
  } else {
    throw UsageError("unknown command '" + command + "'");
  }
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_manifest(out, manifest, cfg, jobs, seconds);
  return rc;
}

void add_common(CLI::App* app, CommonArgs& args, bool with_config = true) {
  if (with_config) {
    app->add_option("--config", args.config_path, "Config file (key = value with [sections])");
    app->add_option("--set", args.sets, "Override, section.key=value (repeatable)");
    app->add_option("--seed", args.seed, "Root seed (overrides run.seed)");
  }
  app->add_option("--jobs", args.jobs, "Parallel seeds (default: all cores)");
  app->add_option("--out", args.out, "Output directory")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cooperating RPN few-shot detection laboratory"};
  app.require_subcommand(1);

  CommonArgs train_args;
  auto* train = app.add_subcommand("train", "Phase 1 (+ phase 2) on one seed; writes a checkpoint");
  add_common(train, train_args);

  CommonArgs ablate_args;
  std::string ablation;
  auto* ablate = app.add_subcommand("ablate", "Run an ablation sweep over seeds");
  ablate->add_option("kind", ablation, "phi, nrpn or methods")
      ->required()
      ->check(CLI::IsMember({"phi", "nrpn", "methods"}));
  add_common(ablate, ablate_args);

  CommonArgs export_args;
  auto* exporter = app.add_subcommand("export-episode", "Write the episode's scenes as CSV");
  add_common(exporter, export_args);

  std::uint64_t gc_seed = 1;
  std::string fault;
  std::string gc_out;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every gradient");
  gradcheck->add_option("--seed", gc_seed, "Instance seed");
  gradcheck->add_option("--inject-fault", fault, "Flip the sign of one term's gradient")
      ->check(CLI::IsMember(gradcheck_terms()));
  gradcheck->add_option("--out", gc_out, "Also write the report to DIR/gradcheck.txt");

  std::string manifest_path;
  CommonArgs rerun_args;
  auto* rerun = app.add_subcommand("rerun", "Repeat a recorded command from its manifest");
  rerun->add_option("manifest", manifest_path, "manifest.ini")->required();
  add_common(rerun, rerun_args, false);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gradcheck) {
      GradcheckConfig gc;
      gc.seed = gc_seed;
      gc.inject_fault = fault;
      const GradcheckReport report = run_gradcheck(gc);
      std::cout << report.text();
      if (!gc_out.empty()) {
        fs::create_directories(gc_out);
        write_file(fs::path(gc_out) / "gradcheck.txt", report.text());
      }
      return report.pass() ? kExitOk : kExitFailed;
    }
    if (*train) return dispatch("train", load_config(train_args), train_args.out, train_args.jobs);
    if (*exporter) {
      return dispatch("export-episode", load_config(export_args), export_args.out,
                      export_args.jobs);
    }
    if (*ablate) {
      return dispatch("ablate " + ablation, load_config(ablate_args), ablate_args.out,
                      ablate_args.jobs);
    }
    if (*rerun) {
      const std::string text = read_file(manifest_path);
      std::string command, hash;
      for (const auto& [k, v] : read_section(text, "manifest")) {
        if (k == "command") command = v;
        if (k == "config_hash") hash = v;
      }
      if (command.empty()) throw UsageError("'" + manifest_path + "' has no manifest command");
      RunConfig cfg = parse_config(text);
      cfg.validate();
      if (hash != hex64(config_hash(cfg))) {
        throw UsageError("'" + manifest_path + "': config does not match its recorded hash");
      }
      return dispatch(command, cfg, rerun_args.out, rerun_args.jobs);
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailed;
  }
  return kExitOk;
}
