#include <gtest/gtest.h>

#include <set>

#include "corpn/config.hpp"

using namespace corpn;

namespace {

std::string error_of(std::string_view text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Config, DefaultsRoundTripThroughCanonicalText) {
  const RunConfig d;
  const std::string text = canonical_config(d);
  const RunConfig back = parse_config(text);
  EXPECT_EQ(canonical_config(back), text);
  EXPECT_EQ(config_hash(back), config_hash(d));
  EXPECT_EQ(back.experiment.loss.phi, 0.3);
  EXPECT_EQ(back.experiment.loss.lambda_d, 0.05);
  EXPECT_EQ(back.experiment.loss.lambda_c, 1.0);
  EXPECT_EQ(back.experiment.n_rpns, 5u);
}

TEST(Config, UnknownKeyNamesLineAndKey) {
  const std::string e = error_of("[run]\nseed = 2\n\n[loss]\nphy = 0.4\n");
  EXPECT_NE(e.find("line 5"), std::string::npos) << e;
  EXPECT_NE(e.find("loss.phy"), std::string::npos) << e;
  EXPECT_NE(error_of("[nope]\n").find("unknown section [nope]"), std::string::npos);
  EXPECT_NE(error_of("seed = 2\n").find("outside any section"), std::string::npos);
  EXPECT_NE(error_of("[run]\nseed\n").find("line 2"), std::string::npos);
  EXPECT_NE(error_of("[run]\nseed = -3\n").find("run.seed"), std::string::npos);
}

TEST(Config, HashChangesExactlyWhenAValueChanges) {
  const RunConfig d;
  const std::uint64_t h = config_hash(d);
  // Comments and spacing don't matter.
  EXPECT_EQ(config_hash(parse_config("# hi\n[loss]\n  phi=0.3  ; same\n")), h);
  std::set<std::uint64_t> seen{h};
  for (const char* o : {"loss.phi=0.31", "run.seed=2", "train.lr=0.04", "world.novel_shift=0.3",
                        "sweep.ns=1,2"}) {
    RunConfig c = d;
    apply_override(c, o);
    EXPECT_TRUE(seen.insert(config_hash(c)).second) << o;
  }
}

TEST(Config, OverridesAndErrors) {
  RunConfig c;
  apply_override(c, "loss.phi=0.2");
  apply_override(c, "run.method=single");
  EXPECT_EQ(c.experiment.loss.phi, 0.2);
  EXPECT_EQ(c.experiment.method, Method::Single);
  EXPECT_THROW(apply_override(c, "phi=0.2"), ConfigError);
  EXPECT_THROW(apply_override(c, "loss.phi"), ConfigError);
  EXPECT_THROW(apply_override(c, "loss.nope=1"), ConfigError);
}

TEST(Config, ManifestSectionIsSkipped) {
  const RunConfig c = parse_config("[manifest]\ncommand = train\nwhatever = 3\n[run]\nseed = 9\n");
  EXPECT_EQ(c.seed, 9u);
  const auto kv = read_section("[manifest]\ncommand = train\n[run]\nseed = 9\n", "manifest");
  ASSERT_EQ(kv.size(), 1u);
  EXPECT_EQ(kv[0].first, "command");
  EXPECT_EQ(kv[0].second, "train");
}

TEST(Config, SeedListAndSweepValidation) {
  RunConfig c;
  c.seed = 10;
  c.n_seeds = 3;
  EXPECT_EQ(c.spec().seeds, (std::vector<std::uint64_t>{10, 11, 12}));
  EXPECT_THROW(parse_config("[sweep]\nphis =\n").validate(), ConfigError);
  EXPECT_THROW(parse_config("[sweep]\nns =\n").validate(), ConfigError);
  EXPECT_THROW(parse_config("[sweep]\nphis = 0.3, 1.2\n").validate(), ConfigError);
  EXPECT_THROW(parse_config("[run]\nn_seeds = 0\n").validate(), ConfigError);
}

TEST(Config, EveryKeyAppearsInCanonicalText) {
  const std::string text = canonical_config(RunConfig{});
  for (const std::string& k : config_keys()) {
    const auto dot = k.find('.');
    ASSERT_NE(dot, std::string::npos);
    EXPECT_NE(text.find("\n" + k.substr(dot + 1) + " = "), std::string::npos) << k;
  }
}
