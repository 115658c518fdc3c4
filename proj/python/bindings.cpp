#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>
#include <string>
#include <vector>

#include "mtpc/circuit.hpp"
#include "mtpc/cli.hpp"
#include "mtpc/engine.hpp"
#include "mtpc/error.hpp"
#include "mtpc/inference.hpp"

namespace py = pybind11;
using namespace pybind11::literals;

namespace {

using mtpc::Circuit;
using mtpc::CircuitParams;

py::dict report_dict(const mtpc::ValidationReport& r) {
  return py::dict("ok"_a = r.ok(), "acyclic"_a = r.acyclic, "scopes_consistent"_a = r.scopes_consistent,
                  "smooth"_a = r.smooth, "decomposable"_a = r.decomposable, "single_output"_a = r.single_output,
                  "param_shapes"_a = r.param_shapes, "failures"_a = r.failures);
}

// Runs the command-line entry point in-process; returns (code, stdout, stderr).
py::tuple cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv{"mtpc"};
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  int code;
  {
    py::gil_scoped_release release;
    code = mtpc::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  }
  return py::make_tuple(code, out.str(), err.str());
}

}  // namespace

PYBIND11_MODULE(_mtpc, m) {
  m.doc() = "Probabilistic-circuit multi-token heads";

  py::register_exception<mtpc::SpecError>(m, "SpecError", PyExc_ValueError);
  py::register_exception<mtpc::ContractError>(m, "ContractError", PyExc_ValueError);
  py::register_exception<mtpc::GuardError>(m, "GuardError", PyExc_RuntimeError);
  py::register_exception<mtpc::ConfigError>(m, "ConfigError", PyExc_RuntimeError);
  py::register_exception<mtpc::DivergenceError>(m, "DivergenceError", PyExc_RuntimeError);

  py::enum_<mtpc::ArchKind>(m, "ArchKind")
      .value("FF", mtpc::ArchKind::kFF)
      .value("CP", mtpc::ArchKind::kCP)
      .value("HMM", mtpc::ArchKind::kHMM)
      .value("BTREE", mtpc::ArchKind::kBTree);

  py::class_<mtpc::ArchitectureSpec>(m, "ArchitectureSpec")
      .def(py::init([](mtpc::ArchKind kind, int n, int r, int v) { return mtpc::ArchitectureSpec{kind, n, r, v}; }),
           "kind"_a, "n"_a, "r"_a, "v"_a)
      .def_readwrite("kind", &mtpc::ArchitectureSpec::kind)
      .def_readwrite("n", &mtpc::ArchitectureSpec::n)
      .def_readwrite("r", &mtpc::ArchitectureSpec::r)
      .def_readwrite("v", &mtpc::ArchitectureSpec::v)
      .def("__repr__", [](const mtpc::ArchitectureSpec& s) {
        return "ArchitectureSpec(" + std::string(mtpc::to_string(s.kind)) + ", n=" + std::to_string(s.n) +
               ", r=" + std::to_string(s.r) + ", v=" + std::to_string(s.v) + ")";
      });

  py::class_<Circuit>(m, "Circuit")
      .def_readonly("spec", &Circuit::spec)
      .def_property_readonly("num_layers", [](const Circuit& c) { return c.layers.size(); })
      .def("validate", [](const Circuit& c) { return report_dict(mtpc::validate(c)); })
      .def("to_json", [](const Circuit& c) { return mtpc::to_json(c).dump(); })
      .def_static("from_json", [](const std::string& s) {
        nlohmann::json doc;
        try {
          doc = nlohmann::json::parse(s);
        } catch (const nlohmann::json::exception& e) {
          throw mtpc::ConfigError(e.what());
        }
        return mtpc::circuit_from_json(doc);
      });

  m.def("build_circuit", &mtpc::build_circuit, "spec"_a);

  py::class_<CircuitParams>(m, "CircuitParams")
      .def_static("uniform", &CircuitParams::uniform, "circuit"_a)
      .def_static(
          "random",
          [](const Circuit& c, std::uint64_t seed, double logit_scale) {
            mtpc::Rng rng(seed);
            return CircuitParams::random(c, rng, logit_scale);
          },
          "circuit"_a, "seed"_a, "logit_scale"_a = 1.0)
      .def_readwrite("phi", &CircuitParams::phi)
      .def_readwrite("omega", &CircuitParams::omega)
      .def("check", [](const CircuitParams& p, const Circuit& c) { mtpc::check_params(c, p); }, "circuit"_a);

  m.def(
      "evaluate",
      [](const Circuit& c, const CircuitParams& p, const std::vector<int>& w) { return mtpc::evaluate(c, p, w); },
      "circuit"_a, "params"_a, "window"_a, "Log-probability of a full window.");
  m.def("partition", &mtpc::partition, "circuit"_a, "params"_a, "Log of the total mass.");
  m.def(
      "prefix_marginals",
      [](const Circuit& c, const CircuitParams& p, const std::vector<int>& w) {
        return mtpc::prefix_marginals(c, p, w);
      },
      "circuit"_a, "params"_a, "window"_a);
  m.def(
      "conditional_distribution",
      [](const Circuit& c, const CircuitParams& p, const std::vector<int>& prefix) {
        return mtpc::conditional_distribution(c, mtpc::LogParams::from(c, p), prefix);
      },
      "circuit"_a, "params"_a, "prefix"_a);
  m.def(
      "sample_window",
      [](const Circuit& c, const CircuitParams& p, std::uint64_t seed) {
        mtpc::Rng rng(seed);
        return mtpc::sample_window(c, p, rng);
      },
      "circuit"_a, "params"_a, "seed"_a);
  m.def("greedy_window", &mtpc::greedy_window, "circuit"_a, "params"_a);
  m.def("enumerate_joint", &mtpc::enumerate_joint, "circuit"_a, "params"_a);
  m.def("window_from_index", &mtpc::window_from_index, "index"_a, "n"_a, "v"_a);

  m.def("cli", &cli, "args"_a);
}
