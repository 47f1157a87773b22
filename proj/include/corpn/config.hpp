#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "corpn/harness.hpp"

namespace corpn {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Everything a command needs, with every default materialized.
struct RunConfig {
  std::uint64_t seed = 1;
  std::size_t n_seeds = 20;
  bool phase2 = true;
  std::vector<double> phis{0.1, 0.3, 0.5, 0.7, 0.9};
  std::vector<std::size_t> ns{1, 2, 3, 5, 8};
  std::vector<Method> methods{Method::Single, Method::CoRpn, Method::NaiveEnsemble,
                              Method::CosineDiv};
  ExperimentSpec experiment;

  /// Experiment over seeds seed, seed + 1, ..., seed + n_seeds - 1.
  ExperimentSpec spec() const;
  void validate() const;
};

/// Parses `[section]` / `key = value` text over the defaults. '#' and ';'
/// start comments. A `[manifest]` section is skipped so manifests can be fed
/// back as configs. Unknown sections or keys throw ConfigError naming the line.
RunConfig parse_config(std::string_view text, const RunConfig& base = RunConfig{});

/// Applies "section.key=value".
void apply_override(RunConfig& cfg, std::string_view assignment);

/// Canonical resolved text: every key, fixed order, round-trippable values.
std::string canonical_config(const RunConfig& cfg);

/// FNV-1a of the canonical text.
std::uint64_t config_hash(const RunConfig& cfg);

/// Raw key/value pairs of one section in file order (empty if absent).
std::vector<std::pair<std::string, std::string>> read_section(std::string_view text,
                                                              std::string_view section);

/// All "section.key" names in canonical order.
std::vector<std::string> config_keys();

}  // namespace corpn
