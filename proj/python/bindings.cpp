// Python bindings. JSON-shaped values cross the boundary as strings; the package
// __init__ converts them with the json module.

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "nilmal/acquisition.hpp"
#include "nilmal/config.hpp"
#include "nilmal/errors.hpp"
#include "nilmal/experiment.hpp"
#include "nilmal/results.hpp"
#include "nilmal/synth.hpp"
#include "nilmal/uncertainty.hpp"
#include "nilmal/verify.hpp"

namespace py = pybind11;
using namespace nilmal;

namespace {

GaussianMixture mixture(std::vector<double> mean, std::vector<double> stddev) {
  GaussianMixture m{std::move(mean), std::move(stddev)};
  m.validate();
  return m;
}

ScoreTable table(std::vector<int> houses, std::vector<std::string> appliances, const Eigen::MatrixXd& values) {
  ScoreTable t(std::move(houses), std::move(appliances));
  if (values.rows() != t.values.rows() || values.cols() != t.values.cols()) {
    throw ShapeError("values must have one row per house and one column per appliance");
  }
  t.values = values;
  t.validate();
  return t;
}

py::dict selection_dict(const Selection& s) {
  py::dict d;
  d["house_id"] = s.house_id;
  d["combined"] = s.combined;
  d["ranks"] = Eigen::MatrixXi(s.ranks);
  d["active_appliance"] = s.active_appliance;
  return d;
}

struct Prepared {
  ExperimentConfig config;
  Dataset dataset;
  Timeline timeline;
};

Prepared prepare(const std::string& config_json) {
  Prepared p;
  p.config = parse_config(Json::parse(config_json));
  p.dataset = load_dataset(p.config.data);
  p.timeline = resolve(p.config, p.dataset);
  return p;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Active-learning experiments for load disaggregation";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<LeakageError>(m, "LeakageError", PyExc_RuntimeError);

  m.def("synthesize", [](const std::string& synth_json, std::uint64_t seed) {
    const Dataset d = synthesize(synth_config_from_json(Json::parse(synth_json)), seed);
    py::dict houses;
    for (const auto& s : d.series()) {
      py::dict h;
      h["start"] = s.start;
      h["mains"] = s.mains;
      h["appliances"] = s.appliances;
      houses[py::int_(s.house_id)] = h;
    }
    return houses;
  }, py::arg("synth_json") = "{}", py::arg("seed") = 7);

  m.def("ensemble_moments", [](std::vector<double> mean, std::vector<double> stddev) {
    const auto e = ensemble_moments(mixture(std::move(mean), std::move(stddev)));
    return std::make_pair(e.mean, e.stddev);
  });
  m.def("entropy_score", [](std::vector<double> mean, std::vector<double> stddev, double scale) {
    return entropy_score(mixture(std::move(mean), std::move(stddev)), scale);
  }, py::arg("mean"), py::arg("stddev"), py::arg("scale_watts") = 1.0);
  m.def("mutual_information", [](std::vector<double> mean, std::vector<double> stddev, int samples,
                                 std::uint64_t seed, const std::string& formula) {
    Rng rng = keyed_rng({seed});
    return mutual_information_score(mixture(std::move(mean), std::move(stddev)), samples, rng,
                                    parse_mi_formula(formula));
  }, py::arg("mean"), py::arg("stddev"), py::arg("samples") = 1000, py::arg("seed") = 0,
     py::arg("formula") = "corrected");

  m.def("window_weight", [](Minute day, Minute today, int half_width, bool causal_only, const std::string& kernel) {
    AggregationWindow w;
    w.half_width = half_width;
    w.causal_only = causal_only;
    w.kernel = parse_kernel(kernel);
    return w.weight(day, today);
  }, py::arg("day"), py::arg("today"), py::arg("half_width") = 7, py::arg("causal_only") = false,
     py::arg("kernel") = "triangle");

  m.def("select", [](const std::string& strategy, std::vector<int> houses, std::vector<std::string> appliances,
                     const Eigen::MatrixXd& values, const std::string& appliance, int query_index,
                     std::vector<std::string> order) {
    const ScoreTable t = table(std::move(houses), std::move(appliances), values);
    switch (parse_strategy(strategy)) {
      case Strategy::singly: return selection_dict(query_singly(t, appliance));
      case Strategy::uniform: return selection_dict(combine_uniform(t));
      case Strategy::rank: return selection_dict(combine_rank(t));
      case Strategy::round_robin:
        return selection_dict(combine_round_robin(t, query_index, order.empty() ? t.appliances : order));
    }
    throw ConfigError("unknown strategy");
  }, py::arg("strategy"), py::arg("houses"), py::arg("appliances"), py::arg("values"), py::arg("appliance") = "",
     py::arg("query_index") = 0, py::arg("order") = std::vector<std::string>{});

  m.def("verify", [](const std::string& fault) {
    py::list out;
    for (const auto& r : run_verify(parse_fault(fault))) {
      py::dict d;
      d["name"] = r.name;
      d["passed"] = r.passed;
      d["detail"] = r.detail;
      out.append(d);
    }
    return out;
  }, py::arg("fault") = "none");

  m.def("resolve_config", [](const std::string& config_json) { return to_json(prepare(config_json).config).dump(); });

  m.def("run_experiment", [](const std::string& config_json, std::optional<std::uint64_t> seed) {
    const Prepared p = prepare(config_json);
    ExperimentResult r;
    {
      py::gil_scoped_release release;
      r = run_experiment(p.config, p.dataset, p.timeline, seed.value_or(p.config.loop.seed));
    }
    std::vector<std::string> records;
    for (const auto& rec : r.records) records.push_back(record_json(r, rec).dump());
    return records;
  }, py::arg("config_json"), py::arg("seed") = py::none());

  m.def("run_total_baseline", [](const std::string& config_json, std::optional<std::uint64_t> seed) {
    const Prepared p = prepare(config_json);
    BaselineResult b;
    {
      py::gil_scoped_release release;
      b = run_total_baseline(p.config, p.dataset, p.timeline, seed.value_or(p.config.loop.seed));
    }
    return b.rmse;
  }, py::arg("config_json"), py::arg("seed") = py::none());
}
