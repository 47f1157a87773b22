#include "corpn/config.hpp"

#include <charconv>
#include <functional>
#include <sstream>

#include "corpn/textio.hpp"

namespace corpn {

namespace {

std::string fmt_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);  // shortest round trip
  return std::string(buf, r.ptr);
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto comma = s.find(',', start);
    const auto piece = trim(s.substr(start, comma == std::string_view::npos ? s.size() - start
                                                                            : comma - start));
    if (!piece.empty()) out.push_back(piece);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

double to_double(const std::string& v) { return parse_double(v); }

std::size_t to_size(const std::string& v) {
  const long long x = parse_int(v);
  if (x < 0) throw FormatError("expected a non-negative integer, got '" + v + "'");
  return static_cast<std::size_t>(x);
}

std::uint64_t to_u64(const std::string& v) {
  std::uint64_t x = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), x);
  if (v.empty() || r.ec != std::errc{} || r.ptr != v.data() + v.size()) {
    throw FormatError("expected an unsigned 64-bit integer, got '" + v + "'");
  }
  return x;
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw FormatError("expected true or false, got '" + v + "'");
}

template <class T, class F>
std::string join(const std::vector<T>& xs, F f) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ", ";
    out += f(xs[i]);
  }
  return out;
}

struct Key {
  std::string section;
  std::string name;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

#define CORPN_DOUBLE(sec, key, field)                                          \
  Key{sec, key, [](const RunConfig& c) { return fmt_double(c.field); },       \
      [](RunConfig& c, const std::string& v) { c.field = to_double(v); }}
#define CORPN_SIZE(sec, key, field)                                            \
  Key{sec, key, [](const RunConfig& c) { return std::to_string(c.field); },   \
      [](RunConfig& c, const std::string& v) { c.field = to_size(v); }}

const std::vector<Key>& registry() {
  static const std::vector<Key> keys = {
      Key{"run", "seed", [](const RunConfig& c) { return std::to_string(c.seed); },
          [](RunConfig& c, const std::string& v) { c.seed = to_u64(v); }},
      CORPN_SIZE("run", "n_seeds", n_seeds),
      Key{"run", "method", [](const RunConfig& c) { return to_string(c.experiment.method); },
          [](RunConfig& c, const std::string& v) { c.experiment.method = parse_method(v); }},
      CORPN_SIZE("run", "n_rpns", experiment.n_rpns),
      CORPN_SIZE("run", "shots", experiment.shots),
      Key{"run", "phase2", [](const RunConfig& c) { return std::string(c.phase2 ? "true" : "false"); },
          [](RunConfig& c, const std::string& v) { c.phase2 = to_bool(v); }},

      CORPN_DOUBLE("loss", "phi", experiment.loss.phi),
      CORPN_DOUBLE("loss", "lambda_d", experiment.loss.lambda_d),
      CORPN_DOUBLE("loss", "lambda_c", experiment.loss.lambda_c),
      CORPN_DOUBLE("loss", "ridge", experiment.loss.ridge),

      CORPN_SIZE("world", "n_base", experiment.world.n_base),
      CORPN_SIZE("world", "n_novel", experiment.world.n_novel),
      CORPN_SIZE("world", "feature_dim", experiment.world.feature_dim),
      CORPN_DOUBLE("world", "novel_shift", experiment.world.novel_shift),
      CORPN_DOUBLE("world", "objectness", experiment.world.objectness),
      CORPN_DOUBLE("world", "noise_sigma", experiment.world.noise_sigma),
      CORPN_DOUBLE("world", "image_size", experiment.world.image_size),
      CORPN_DOUBLE("world", "stride", experiment.world.stride),
      Key{"world", "anchor_scales",
          [](const RunConfig& c) { return join(c.experiment.world.anchor_scales, fmt_double); },
          [](RunConfig& c, const std::string& v) {
            c.experiment.world.anchor_scales.clear();
            for (const auto& p : split_list(v)) c.experiment.world.anchor_scales.push_back(to_double(p));
          }},
      Key{"world", "anchor_ratios",
          [](const RunConfig& c) { return join(c.experiment.world.anchor_ratios, fmt_double); },
          [](RunConfig& c, const std::string& v) {
            c.experiment.world.anchor_ratios.clear();
            for (const auto& p : split_list(v)) c.experiment.world.anchor_ratios.push_back(to_double(p));
          }},
      CORPN_DOUBLE("world", "size_jitter", experiment.world.size_jitter),
      CORPN_DOUBLE("world", "max_object_overlap", experiment.world.max_object_overlap),
      CORPN_SIZE("world", "train_objects_min", experiment.world.train_objects_min),
      CORPN_SIZE("world", "train_objects_max", experiment.world.train_objects_max),
      CORPN_SIZE("world", "test_objects_min", experiment.world.test_objects_min),
      CORPN_SIZE("world", "test_objects_max", experiment.world.test_objects_max),
      CORPN_DOUBLE("world", "test_novel_fraction", experiment.world.test_novel_fraction),
      CORPN_SIZE("world", "clutter_min", experiment.world.clutter_min),
      CORPN_SIZE("world", "clutter_max", experiment.world.clutter_max),
      CORPN_DOUBLE("world", "clutter_gain", experiment.world.clutter_gain),

      CORPN_SIZE("episode", "n_train_scenes", experiment.episode.n_train_scenes),
      CORPN_SIZE("episode", "n_test_scenes", experiment.episode.n_test_scenes),
      CORPN_SIZE("episode", "n_holdout_scenes", experiment.episode.n_holdout_scenes),

      CORPN_DOUBLE("train", "lr", experiment.train.lr),
      CORPN_DOUBLE("train", "momentum", experiment.train.momentum),
      CORPN_SIZE("train", "batch_scenes", experiment.train.batch_scenes),
      CORPN_SIZE("train", "phase1_steps", experiment.train.phase1_steps),
      CORPN_SIZE("train", "phase2_steps", experiment.train.phase2_steps),
      CORPN_SIZE("train", "anchors_per_scene", experiment.train.anchors_per_scene),
      CORPN_DOUBLE("train", "fg_fraction", experiment.train.fg_fraction),
      Key{"train", "phase2_mode",
          [](const RunConfig& c) { return to_string(c.experiment.train.phase2_mode); },
          [](RunConfig& c, const std::string& v) {
            c.experiment.train.phase2_mode = parse_phase2_mode(v);
          }},
      CORPN_DOUBLE("train", "head_init_std", experiment.train.head_init_std),
      Key{"train", "classifier",
          [](const RunConfig& c) { return to_string(c.experiment.train.classifier); },
          [](RunConfig& c, const std::string& v) {
            c.experiment.train.classifier = parse_classifier_variant(v);
          }},
      CORPN_DOUBLE("train", "cosine_scale", experiment.train.cosine_scale),
      CORPN_DOUBLE("train", "classifier_lr", experiment.train.classifier_lr),
      CORPN_DOUBLE("train", "finetune_lr", experiment.train.finetune_lr),
      CORPN_DOUBLE("train", "fg_iou", experiment.train.labels.fg),
      CORPN_DOUBLE("train", "bg_iou", experiment.train.labels.bg),
      CORPN_DOUBLE("train", "proposal_nms_iou", experiment.train.proposals.nms_iou),
      CORPN_SIZE("train", "proposal_top_k", experiment.train.proposals.top_k),

      CORPN_DOUBLE("eval", "fn_thresh", experiment.eval.fn_thresh),
      CORPN_DOUBLE("eval", "recall_iou", experiment.eval.recall_iou),
      CORPN_SIZE("eval", "recall_top_k", experiment.eval.recall_top_k),
      CORPN_DOUBLE("eval", "detection_min_score", experiment.eval.detection_min_score),
      CORPN_DOUBLE("eval", "detection_nms_iou", experiment.eval.detection_nms_iou),
      CORPN_DOUBLE("eval", "ridge", experiment.eval.ridge),

      Key{"sweep", "phis", [](const RunConfig& c) { return join(c.phis, fmt_double); },
          [](RunConfig& c, const std::string& v) {
            c.phis.clear();
            for (const auto& p : split_list(v)) c.phis.push_back(to_double(p));
          }},
      Key{"sweep", "ns",
          [](const RunConfig& c) {
            return join(c.ns, [](std::size_t n) { return std::to_string(n); });
          },
          [](RunConfig& c, const std::string& v) {
            c.ns.clear();
            for (const auto& p : split_list(v)) c.ns.push_back(to_size(p));
          }},
      Key{"sweep", "methods",
          [](const RunConfig& c) {
            return join(c.methods, [](Method m) { return to_string(m); });
          },
          [](RunConfig& c, const std::string& v) {
            c.methods.clear();
            for (const auto& p : split_list(v)) c.methods.push_back(parse_method(p));
          }},
  };
  return keys;
}

#undef CORPN_DOUBLE
#undef CORPN_SIZE

const Key* find_key(std::string_view section, std::string_view name) {
  for (const auto& k : registry())
    if (k.section == section && k.name == name) return &k;
  return nullptr;
}

bool known_section(std::string_view section) {
  for (const auto& k : registry())
    if (k.section == section) return true;
  return false;
}

void assign(RunConfig& cfg, const Key& key, const std::string& value, const std::string& where) {
  try {
    key.set(cfg, value);
  } catch (const std::exception& e) {
    throw ConfigError(where + ": bad value for " + key.section + "." + key.name + ": " + e.what());
  }
}

}  // namespace

ExperimentSpec RunConfig::spec() const {
  ExperimentSpec s = experiment;
  s.seeds.clear();
  for (std::size_t i = 0; i < n_seeds; ++i) s.seeds.push_back(seed + i);
  return s;
}

void RunConfig::validate() const {
  if (n_seeds == 0) throw ConfigError("run.n_seeds must be >= 1");
  if (phis.empty()) throw ConfigError("sweep.phis is empty");
  if (ns.empty()) throw ConfigError("sweep.ns is empty");
  if (methods.empty()) throw ConfigError("sweep.methods is empty");
  for (double p : phis)
    if (!(p > 0.0 && p < 1.0)) throw ConfigError("sweep.phis values must lie in (0, 1)");
  for (std::size_t n : ns)
    if (n == 0) throw ConfigError("sweep.ns values must be >= 1");
  try {
    spec().validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
}

RunConfig parse_config(std::string_view text, const RunConfig& base) {
  RunConfig cfg = base;
  std::string section;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view raw = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    const auto hash = raw.find_first_of("#;");
    const std::string line = trim(raw.substr(0, hash));
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(line_no);
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + ": malformed section header");
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      if (section != "manifest" && !known_section(section)) {
        throw ConfigError(where + ": unknown section [" + section + "]");
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    const std::string name = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    if (section == "manifest") continue;
    if (section.empty()) throw ConfigError(where + ": key '" + name + "' outside any section");
    const Key* key = find_key(section, name);
    if (!key) throw ConfigError(where + ": unknown key '" + section + "." + name + "'");
    assign(cfg, *key, value, where);
  }
  return cfg;
}

void apply_override(RunConfig& cfg, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) {
    throw ConfigError("override '" + std::string(assignment) + "': expected section.key=value");
  }
  const std::string lhs = trim(assignment.substr(0, eq));
  const std::string value = trim(assignment.substr(eq + 1));
  const auto dot = lhs.find('.');
  if (dot == std::string::npos) {
    throw ConfigError("override '" + std::string(assignment) + "': key needs a section prefix");
  }
  const Key* key = find_key(lhs.substr(0, dot), lhs.substr(dot + 1));
  if (!key) throw ConfigError("override: unknown key '" + lhs + "'");
  assign(cfg, *key, value, "override");
}

std::string canonical_config(const RunConfig& cfg) {
  std::ostringstream os;
  std::string section;
  for (const auto& k : registry()) {
    if (k.section != section) {
      if (!section.empty()) os << '\n';
      section = k.section;
      os << '[' << section << "]\n";
    }
    os << k.name << " = " << k.get(cfg) << '\n';
  }
  return os.str();
}

std::uint64_t config_hash(const RunConfig& cfg) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : canonical_config(cfg)) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

std::vector<std::pair<std::string, std::string>> read_section(std::string_view text,
                                                              std::string_view section) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream is{std::string(text)};
  std::string raw;
  bool inside = false;
  while (std::getline(is, raw)) {
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[' && line.back() == ']') {
      inside = trim(std::string_view(line).substr(1, line.size() - 2)) == section;
      continue;
    }
    const auto eq = line.find('=');
    if (!inside || eq == std::string::npos) continue;
    out.emplace_back(trim(std::string_view(line).substr(0, eq)),
                     trim(std::string_view(line).substr(eq + 1)));
  }
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& k : registry()) out.push_back(k.section + "." + k.name);
  return out;
}

}  // namespace corpn
