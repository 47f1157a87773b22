#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <array>

#include "corpn/config.hpp"
#include "corpn/geometry.hpp"
#include "corpn/gradcheck.hpp"
#include "corpn/harness.hpp"
#include "corpn/head.hpp"

namespace py = pybind11;
using namespace corpn;

namespace {

using BoxTuple = std::array<double, 4>;

Box to_box(const BoxTuple& b) { return {b[0], b[1], b[2], b[3]}; }

RunConfig load(const std::string& text, const std::vector<std::string>& overrides) {
  RunConfig cfg = parse_config(text);
  for (const auto& o : overrides) apply_override(cfg, o);
  cfg.validate();
  return cfg;
}

py::dict metrics_dict(const MetricsRecord& m) {
  py::dict d;
  d["novel_ap50"] = m.novel_ap50;
  d["base_ap50"] = m.base_ap50;
  d["avg_fn"] = m.avg_fn;
  d["avg_fg"] = m.avg_fg;
  d["proposal_recall"] = m.proposal_recall;
  d["logdet_cov"] = m.logdet_cov;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Cooperating RPN few-shot detection laboratory";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

  m.def("iou", [](const BoxTuple& a, const BoxTuple& b) { return iou(to_box(a), to_box(b)); },
        "IOU of two (x1, y1, x2, y2) boxes.");
  m.def(
      "nms",
      [](const std::vector<BoxTuple>& boxes, const std::vector<double>& scores, double thresh) {
        std::vector<Box> bs;
        for (const auto& b : boxes) bs.push_back(to_box(b));
        return nms(bs, scores, thresh);
      },
      py::arg("boxes"), py::arg("scores"), py::arg("iou_thresh"),
      "Indices kept by greedy NMS, in descending score order.");
  m.def("select_rpn", [](const std::vector<double>& f) { return select_rpn(f); },
        "Index of the most certain RPN for one anchor's probabilities.");
  m.def(
      "score_box",
      [](const std::vector<double>& f) {
        const BoxScore s = score_box(f);
        return py::make_tuple(s.score, s.is_foreground);
      },
      "(score, is_foreground) for one anchor's probabilities.");

  m.def(
      "gradcheck",
      [](std::uint64_t seed, const std::string& fault) {
        GradcheckConfig c;
        c.seed = seed;
        c.inject_fault = fault;
        const GradcheckReport r = run_gradcheck(c);
        return py::make_tuple(r.pass(), r.text());
      },
      py::arg("seed") = 1, py::arg("inject_fault") = "");

  m.def(
      "canonical_config",
      [](const std::string& text, const std::vector<std::string>& overrides) {
        return canonical_config(load(text, overrides));
      },
      py::arg("text") = "", py::arg("overrides") = std::vector<std::string>{});
  m.def(
      "config_hash",
      [](const std::string& text, const std::vector<std::string>& overrides) {
        return config_hash(load(text, overrides));
      },
      py::arg("text") = "", py::arg("overrides") = std::vector<std::string>{});

  m.def(
      "run_seed",
      [](std::uint64_t seed, const std::string& text, const std::vector<std::string>& overrides) {
        const RunConfig cfg = load(text, overrides);
        RunResult r;
        {
          py::gil_scoped_release release;
          r = run_seed(cfg.spec(), seed);
        }
        py::dict d;
        d["seed"] = r.seed;
        d["ok"] = r.ok;
        d["error"] = r.error;
        d["metrics"] = metrics_dict(r.metrics);
        d["selection_counts"] = r.selection_counts;
        d["ce_drop"] = r.ce_drop;
        return d;
      },
      py::arg("seed"), py::arg("config") = "", py::arg("overrides") = std::vector<std::string>{},
      "Full two-phase pipeline for one seed; returns metrics and diagnostics.");

  m.def(
      "runs_csv",
      [](const std::string& text, const std::vector<std::string>& overrides) {
        const RunConfig cfg = load(text, overrides);
        ExperimentResult r;
        {
          py::gil_scoped_release release;
          r = run_experiment(cfg.spec());
        }
        return runs_csv({r});
      },
      py::arg("config") = "", py::arg("overrides") = std::vector<std::string>{},
      "Runs every configured seed and returns the runs CSV.");
}
