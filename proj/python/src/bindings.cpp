#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "milo/datasets.hpp"
#include "milo/diagnostics.hpp"
#include "milo/envs.hpp"
#include "milo/experiment.hpp"
#include "milo/mdp.hpp"
#include "milo/models.hpp"
#include "milo/policy_opt.hpp"
#include "milo/solver.hpp"

namespace py = pybind11;

namespace {

using namespace milo;

/// Tabular triples from integer index arrays.
OfflineDataset offline_from_indices(const std::vector<int>& states, const std::vector<int>& actions,
                                    const std::vector<int>& next_states) {
  require(states.size() == actions.size() && states.size() == next_states.size(),
          "states, actions and next_states must have equal length");
  OfflineDataset data;
  for (std::size_t i = 0; i < states.size(); ++i) {
    data.states.push_back(Vec::Constant(1, states[i]));
    data.actions.push_back(Vec::Constant(1, actions[i]));
    data.next_states.push_back(Vec::Constant(1, next_states[i]));
  }
  return data;
}

ExperimentConfig config_from_string(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return ExperimentConfig::from_json(doc);
}

}  // namespace

PYBIND11_MODULE(_milo, m) {
  m.doc() = "Pessimistic model-based offline imitation learning";

  auto config_error = py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_RuntimeError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);
  (void)config_error;

  py::class_<TabularPolicy>(m, "TabularPolicy")
      .def(py::init<Mat>(), py::arg("probs"))
      .def_static("uniform", &TabularPolicy::uniform, py::arg("n_states"), py::arg("n_actions"))
      .def_static("deterministic", &TabularPolicy::deterministic, py::arg("actions"),
                  py::arg("n_actions"))
      .def_property_readonly("probs", &TabularPolicy::probs)
      .def_property_readonly("n_states", &TabularPolicy::n_states)
      .def_property_readonly("n_actions", &TabularPolicy::n_actions);

  py::class_<FiniteMDP>(m, "FiniteMDP")
      .def(py::init<int, int, int, Vec, Mat, Mat>(), py::arg("n_states"), py::arg("n_actions"),
           py::arg("horizon"), py::arg("d0"), py::arg("transition"), py::arg("cost"))
      .def_property_readonly("n_states", &FiniteMDP::n_states)
      .def_property_readonly("n_actions", &FiniteMDP::n_actions)
      .def_property_readonly("horizon", &FiniteMDP::horizon)
      .def_property_readonly("d0", &FiniteMDP::d0)
      .def_property_readonly("transition", &FiniteMDP::transition)
      .def_property_readonly("cost", &FiniteMDP::cost);

  m.def(
      "make_gridworld",
      [](int width, int height, int horizon, double slip) {
        GridworldSpec spec;
        spec.width = width;
        spec.height = height;
        spec.horizon = horizon;
        spec.slip = slip;
        return make_gridworld(spec);
      },
      py::arg("width") = 8, py::arg("height") = 8, py::arg("horizon") = 50, py::arg("slip") = 0.1);
  m.def(
      "make_trap_chain",
      [](int length, int horizon, double step_cost) {
        TrapChainSpec spec;
        spec.length = length;
        spec.horizon = horizon;
        spec.step_cost = step_cost;
        return make_trap_chain(spec);
      },
      py::arg("length") = 6, py::arg("horizon") = 20, py::arg("step_cost") = 0.5);
  m.def(
      "make_random_mdp",
      [](int n_states, int n_actions, int horizon, std::uint64_t seed) {
        Rng rng(seed);
        return make_random_mdp(n_states, n_actions, horizon, rng);
      },
      py::arg("n_states"), py::arg("n_actions"), py::arg("horizon"), py::arg("seed"));

  m.def(
      "value", [](const FiniteMDP& mdp, const TabularPolicy& pi) { return value(mdp, pi); },
      py::arg("mdp"), py::arg("policy"));
  m.def(
      "value_with_cost",
      [](const FiniteMDP& mdp, const TabularPolicy& pi, const Mat& cost) {
        return value(mdp, pi, cost);
      },
      py::arg("mdp"), py::arg("policy"), py::arg("cost"));
  m.def(
      "occupancy",
      [](const FiniteMDP& mdp, const TabularPolicy& pi) { return occupancy(mdp, pi); },
      py::arg("mdp"), py::arg("policy"));
  m.def(
      "optimal_policy",
      [](const FiniteMDP& mdp) {
        const PlanResult plan = exact_value_iteration(mdp.dynamics(), mdp.cost());
        return py::make_tuple(plan.policy, plan.value);
      },
      py::arg("mdp"), "Returns (first-step greedy policy, optimal H-step value).");
  m.def("normalized_score", &normalized_score, py::arg("value"), py::arg("random_value"),
        py::arg("expert_value"));

  py::class_<TabularModel>(m, "TabularModel")
      .def_static(
          "fit",
          [](const std::vector<int>& s, const std::vector<int>& a, const std::vector<int>& sp,
             int n_states, int n_actions, double lambda) {
            return TabularModel::fit(offline_from_indices(s, a, sp), n_states, n_actions, lambda);
          },
          py::arg("states"), py::arg("actions"), py::arg("next_states"), py::arg("n_states"),
          py::arg("n_actions"), py::arg("lam") = 1.0)
      .def_property_readonly("counts", &TabularModel::counts)
      .def_property_readonly("p_hat", &TabularModel::p_hat)
      .def("sigma_table", &TabularModel::sigma_table, py::arg("delta"));
  m.def("sigma_tabular", &sigma_tabular, py::arg("n_states"), py::arg("n_actions"),
        py::arg("count"), py::arg("lam"), py::arg("delta"));
  m.def("total_variation_table", &total_variation_table, py::arg("p_hat"), py::arg("p"),
        py::arg("n_states"), py::arg("n_actions"));

  auto maybe = [](const MaybeInfinite& v) -> double {
    return v.infinite ? std::numeric_limits<double>::infinity() : v.value;
  };
  m.def(
      "concentrability",
      [maybe](const Mat& d_expert, const Mat& rho) { return maybe(concentrability(d_expert, rho)); },
      py::arg("d_expert"), py::arg("rho"), "Returns inf when coverage fails.");
  m.def(
      "relative_condition_number",
      [maybe](const Mat& sigma_expert, const Mat& sigma_rho) {
        return maybe(relative_condition_number(sigma_expert, sigma_rho));
      },
      py::arg("sigma_expert"), py::arg("sigma_rho"), "Returns inf when coverage fails.");
  m.def("one_hot_covariance", &one_hot_covariance, py::arg("d"));
  m.def("effective_dimension", &effective_dimension, py::arg("eigenvalues"), py::arg("n_o"),
        py::arg("zeta"));

  m.def(
      "_cmd_generate",
      [](const std::string& config, const std::string& out_dir) {
        return cmd_generate(config_from_string(config), out_dir).dump();
      },
      py::arg("config"), py::arg("out_dir"));
  m.def(
      "_cmd_run",
      [](const std::string& config, const std::string& out_dir,
         const std::optional<std::string>& method) {
        return cmd_run(config_from_string(config), out_dir, method).dump();
      },
      py::arg("config"), py::arg("out_dir"), py::arg("method") = std::nullopt);
  m.def(
      "_cmd_diagnose",
      [](const std::string& config, const std::string& out_dir) {
        return cmd_diagnose(config_from_string(config), out_dir).dump();
      },
      py::arg("config"), py::arg("out_dir"));
  m.def(
      "_cmd_report",
      [](const std::string& dir) {
        const auto [scores, tiers] = cmd_report(dir);
        return py::make_tuple(to_markdown(scores), to_markdown(tiers));
      },
      py::arg("dir"));
  m.def(
      "_validate_config",
      [](const std::string& config) { return config_from_string(config).to_json().dump(); },
      py::arg("config"));
  m.attr("known_methods") = known_methods();
}
