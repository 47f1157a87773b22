#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "corpn/harness.hpp"
#include "corpn/textio.hpp"

using namespace corpn;

namespace {

ExperimentSpec quick_spec() {
  ExperimentSpec s;
  s.seeds = {4, 5, 6};
  s.episode.n_train_scenes = 24;
  s.episode.n_test_scenes = 12;
  s.train.phase1_steps = 40;
  s.train.phase2_steps = 20;
  s.jobs = 2;
  return s;
}

MetricsRecord record(double v) {
  return {v, 2 * v, 3 * v, 4 * v, v / 2, -v};
}

}  // namespace

TEST(Harness, SameSeedSameMetrics) {
  const ExperimentSpec s = quick_spec();
  const RunResult a = run_seed(s, 9), b = run_seed(s, 9);
  ASSERT_TRUE(a.ok) << a.error;
  EXPECT_EQ(a.metrics, b.metrics);
  EXPECT_EQ(a.selection_counts, b.selection_counts);
  EXPECT_EQ(a.ce_drop, b.ce_drop);
}

TEST(Harness, ResultsFollowSeedOrderRegardlessOfJobs) {
  ExperimentSpec s = quick_spec();
  s.seeds = {6, 4, 5};
  const ExperimentResult par = run_experiment(s);
  s.jobs = 1;
  const ExperimentResult ser = run_experiment(s);
  ASSERT_EQ(par.runs.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(par.runs[i].seed, s.seeds[i]);
    EXPECT_EQ(par.runs[i].metrics, ser.runs[i].metrics);
  }
  EXPECT_EQ(par.failures, 0u);
  EXPECT_FALSE(par.failed);
}

TEST(Harness, SeedsAreDerivedIndependentlyOfMethod) {
  const RunSeeds a = derive_seeds(3), b = derive_seeds(3), c = derive_seeds(4);
  EXPECT_EQ(a.world, b.world);
  EXPECT_EQ(a.episode, b.episode);
  EXPECT_EQ(a.train, b.train);
  EXPECT_NE(a.world, c.world);
  EXPECT_NE(a.world, a.episode);
}

TEST(Summarize, MatchesDirectFormulas) {
  const std::vector<double> same(7, 0.42);
  const Stats s = summarize(same);
  EXPECT_DOUBLE_EQ(s.mean, 0.42);
  EXPECT_EQ(s.stddev, 0.0);
  EXPECT_EQ(s.n, 7u);

  const Stats two = summarize(std::vector<double>{1.0, 3.0});
  EXPECT_EQ(two.mean, 2.0);
  EXPECT_DOUBLE_EQ(two.stddev, std::sqrt(2.0));
  EXPECT_DOUBLE_EQ(two.stderr_, 1.0);

  EXPECT_EQ(summarize(std::vector<double>{5.0}).stddev, 0.0);

  std::mt19937_64 rng(5);
  std::normal_distribution<double> g(1.0, 2.0);
  std::vector<double> v(50);
  for (double& x : v) x = g(rng);
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / 50.0;
  double ss = 0;
  for (double x : v) ss += (x - m) * (x - m);
  const Stats r = summarize(v);
  EXPECT_NEAR(r.mean, m, 1e-12);
  EXPECT_NEAR(r.stddev, std::sqrt(ss / 49.0), 1e-12);
  EXPECT_NEAR(r.stderr_, std::sqrt(ss / 49.0 / 50.0), 1e-12);
}

TEST(Summarize, PairedDifference) {
  const std::vector<double> a{3, 5, 7}, b{1, 1, 1};
  const PairedStats p = paired_difference(a, b);
  EXPECT_EQ(p.differences, (std::vector<double>{2, 4, 6}));
  EXPECT_EQ(p.stats.mean, 4.0);
  EXPECT_THROW(paired_difference(a, std::vector<double>{1, 2}), std::invalid_argument);
}

TEST(Summarize, AggregateIgnoresOrder) {
  std::vector<MetricsRecord> recs;
  for (int i = 1; i <= 6; ++i) recs.push_back(record(0.1 * i));
  const Aggregate a = aggregate(recs);
  std::reverse(recs.begin(), recs.end());
  std::swap(recs[1], recs[4]);
  const Aggregate b = aggregate(recs);
  EXPECT_NEAR(a.novel_ap50.mean, b.novel_ap50.mean, 1e-15);
  EXPECT_NEAR(a.avg_fg.stddev, b.avg_fg.stddev, 1e-14);
  EXPECT_NEAR(a.logdet_cov.mean, -0.35, 1e-15);
  EXPECT_DOUBLE_EQ(column(recs, Field::AvgFn)[0], 3 * 0.6);
}

TEST(Csv, RoundTripsAndRejectsMalformed) {
  ExperimentResult r;
  r.spec = quick_spec().normalized();
  r.spec.tag = "t";
  for (std::uint64_t s : {4u, 5u}) {
    RunResult run;
    run.seed = s;
    run.ok = true;
    run.metrics = record(0.125 * static_cast<double>(s));
    r.runs.push_back(run);
  }
  RunResult failed;
  failed.seed = 6;
  r.runs.push_back(failed);
  const std::string text = runs_csv({r});
  EXPECT_EQ(text.substr(0, kRunsCsvHeader.size()), kRunsCsvHeader);
  const auto rows = parse_runs_csv(text);
  ASSERT_EQ(rows.size(), 2u);  // failed seeds are not written
  EXPECT_EQ(rows[0].run_id, "t/s4");
  EXPECT_EQ(rows[0].method, "corpn");
  EXPECT_EQ(rows[0].n_rpn, 5u);
  EXPECT_EQ(rows[1].seed, 5u);
  EXPECT_EQ(rows[1].metrics, record(0.625));

  EXPECT_THROW(parse_runs_csv(""), FormatError);
  EXPECT_THROW(parse_runs_csv("run_id,method\n"), FormatError);
  const std::string head = std::string(kRunsCsvHeader) + "\n";
  EXPECT_THROW(parse_runs_csv(head + "a,corpn,5,0.3,0.05,1.0,1,4,0.1,0.1,0.1,0.1,0.1,0.1\n"),
               FormatError);
  EXPECT_THROW(parse_runs_csv(head + "a,corpn,5,0.300000,0.050000,1.000000,1,4,0.1\n"), FormatError);
  EXPECT_THROW(parse_runs_csv(head +
                              "a,bogus,5,0.300000,0.050000,1.000000,1,4,0.100000,0.100000,"
                              "0.100000,0.100000,0.100000,0.100000\n"),
               std::invalid_argument);
}

TEST(Spec, NormalizationRules) {
  ExperimentSpec s = quick_spec();
  s.method = Method::Single;
  const ExperimentSpec a = s.normalized();
  EXPECT_EQ(a.n_rpns, 1u);
  EXPECT_EQ(a.loss.lambda_c, 0.0);
  EXPECT_EQ(a.loss.lambda_d, 0.0);
  s.method = Method::NaiveEnsemble;
  const ExperimentSpec b = s.normalized();
  EXPECT_EQ(b.n_rpns, 5u);
  EXPECT_EQ(b.loss.lambda_d, 0.0);
  s.method = Method::CoRpn;
  s.shots = 3;
  const ExperimentSpec c = s.normalized();
  EXPECT_EQ(c.loss.lambda_d, s.loss.lambda_d);
  EXPECT_EQ(c.episode.shots, 3u);

  s.seeds.clear();
  EXPECT_THROW(s.validate(), std::invalid_argument);
  EXPECT_EQ(parse_method(to_string(Method::CosineDiv)), Method::CosineDiv);
  EXPECT_THROW(parse_method("ensemble"), std::invalid_argument);
}

TEST(Sweeps, RejectBadArguments) {
  const ExperimentSpec s = quick_spec();
  EXPECT_THROW(sweep_phi(s, {}), std::invalid_argument);
  EXPECT_THROW(sweep_phi(s, {0.3, 1.0}), std::invalid_argument);
  EXPECT_THROW(sweep_phi(s, {0.0}), std::invalid_argument);
  EXPECT_THROW(sweep_n_rpns(s, {}), std::invalid_argument);
  EXPECT_THROW(sweep_n_rpns(s, {2, 0}), std::invalid_argument);
  EXPECT_THROW(compare_methods(s, {}), std::invalid_argument);
}

TEST(Sweeps, OneRpnIsTheSingleBaseline) {
  ExperimentSpec s = quick_spec();
  s.seeds = {4};
  const NSweep sw = sweep_n_rpns(s, {1});
  ASSERT_EQ(sw.rows.size(), 1u);
  EXPECT_EQ(sw.rows[0].result.spec.method, Method::Single);
  EXPECT_EQ(sw.shape, "boundary");
  ExperimentSpec single = s;
  single.method = Method::Single;
  EXPECT_EQ(sw.rows[0].result.runs[0].metrics, run_seed(single, 4).metrics);
}

TEST(Sweeps, PairedAgainstChecksSeeds) {
  ExperimentResult a, b;
  for (std::uint64_t s : {1u, 2u, 3u}) {
    RunResult r;
    r.seed = s;
    r.ok = s != 2;
    r.metrics = record(static_cast<double>(s));
    a.runs.push_back(r);
    r.ok = true;
    r.metrics = record(0.5);
    b.runs.push_back(r);
  }
  const PairedStats p = paired_against(a, b, Field::NovelAp50);
  EXPECT_EQ(p.differences, (std::vector<double>{0.5, 2.5}));
  b.runs[1].seed = 9;
  EXPECT_THROW(paired_against(a, b, Field::NovelAp50), std::invalid_argument);
  b.runs.pop_back();
  EXPECT_THROW(paired_against(a, b, Field::NovelAp50), std::invalid_argument);
}
