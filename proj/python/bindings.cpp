#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "tirelearn/pipeline.hpp"

namespace py = pybind11;
using namespace tirelearn;

namespace {

ExpTanhParams<double> params(double a1, double a2, double a3, double a4, double a5) { return {a1, a2, a3, a4, a5}; }

Feat feat_of(const TireModel& m, double r, double v, double beta, double mu_fz_bar) {
  const auto* learned = dynamic_cast<const LearnedTire*>(&m);
  const Axle axle = learned != nullptr ? learned->axle() : Axle::front;
  return Feat{axle, r, v, beta, mu_fz_bar};
}

}  // namespace

PYBIND11_MODULE(_tirelearn, m) {
  m.doc() = "Tire model learning and drift control";
  m.attr("__version__") = TIRELEARN_VERSION;

  py::register_exception<Error>(m, "TirelearnError");

  m.def(
      "exptanh_eval", [](double z, double a1, double a2, double a3, double a4, double a5) {
        return exptanh_eval(z, params(a1, a2, a3, a4, a5));
      },
      py::arg("z"), py::arg("a1"), py::arg("a2"), py::arg("a3"), py::arg("a4"), py::arg("a5"));
  m.def(
      "exptanh_extrema",
      [](double a1, double a2, double a3, double a4, double a5) {
        const auto ex = exptanh_extrema(params(a1, a2, a3, a4, a5));
        return py::make_tuple(ex.z_plus, ex.z_minus);
      },
      py::arg("a1"), py::arg("a2"), py::arg("a3"), py::arg("a4"), py::arg("a5"));
  m.def(
      "extrema_on_branch",
      [](double a1, double a2, double a3, double a4, double a5) {
        return extrema_on_branch(params(a1, a2, a3, a4, a5));
      },
      py::arg("a1"), py::arg("a2"), py::arg("a3"), py::arg("a4"), py::arg("a5"));
  m.def(
      "magic_formula_force",
      [](double slip, double b, double c, double d, double e, bool lateral) {
        return magic_formula_force(slip, MagicFormulaParams{b, c, d, e},
                                   lateral ? SlipDirection::lateral : SlipDirection::longitudinal);
      },
      py::arg("slip"), py::arg("b"), py::arg("c"), py::arg("d"), py::arg("e"), py::arg("lateral") = true);
  m.def(
      "fiala_force",
      [](double slip, double stiffness, double mu, double f_z, bool lateral) {
        return fiala_force(slip, FialaParams{stiffness, mu, f_z},
                           lateral ? SlipDirection::lateral : SlipDirection::longitudinal);
      },
      py::arg("slip"), py::arg("stiffness"), py::arg("mu"), py::arg("f_z"), py::arg("lateral") = true);

  py::class_<TireModel, std::shared_ptr<TireModel>>(m, "TireModel")
      .def_property_readonly("kind", [](const TireModel& t) { return std::string(to_string(t.kind())); })
      .def_property_readonly("regime", [](const TireModel& t) { return std::string(to_string(t.regime())); })
      .def(
          "evaluate",
          [](const TireModel& t, double alpha, double sigma, double r, double v, double beta, double mu_fz_bar) {
            const TireForce<double> f = t.evaluate(TireInput<double>{alpha, sigma, feat_of(t, r, v, beta, mu_fz_bar)});
            return py::make_tuple(f.fx, f.fy);
          },
          py::arg("alpha"), py::arg("sigma") = 0.0, py::arg("r") = 0.0, py::arg("v") = 10.0, py::arg("beta") = 0.0,
          py::arg("mu_fz_bar") = 7000.0)
      .def(
          "peak_force",
          [](const TireModel& t, double r, double v, double beta, double mu_fz_bar) {
            return t.peak_force(feat_of(t, r, v, beta, mu_fz_bar));
          },
          py::arg("r") = 0.0, py::arg("v") = 10.0, py::arg("beta") = 0.0, py::arg("mu_fz_bar") = 7000.0)
      .def("to_json", [](const TireModel& t) { return t.to_json().dump(); });

  m.def(
      "load_model", [](const std::string& path) { return std::shared_ptr<TireModel>(load_model(path)); },
      py::arg("path"));
  m.def(
      "plant_tires",
      [](const std::string& name) {
        const TireSet t = plant_tires(name);
        return py::make_tuple(std::const_pointer_cast<TireModel>(t.front), std::const_pointer_cast<TireModel>(t.rear));
      },
      py::arg("name"));

  m.def(
      "drift_equilibrium",
      [](double kappa, double v, const std::string& plant, const std::string& branch) {
        const Equilibrium eq = drift_equilibrium(kappa, v, plant_tires(plant), VehicleParams{},
                                                 branch == "drift" ? Branch::drift : Branch::grip);
        py::dict d;
        d["kappa"] = eq.kappa;
        d["v"] = eq.v;
        d["r"] = eq.r;
        d["beta"] = eq.beta;
        d["delta"] = eq.delta;
        d["sigma_r"] = eq.sigma_r;
        d["tau_r"] = eq.tau_r;
        d["residual"] = eq.residual;
        return d;
      },
      py::arg("kappa"), py::arg("v"), py::arg("plant") = "a", py::arg("branch") = "drift");

  m.def("default_config", [] { return default_config().dump(); });
  m.def(
      "merge_config", [](const std::string& user) { return merge_config(json::parse(user)).dump(); },
      py::arg("user"));
  m.def(
      "run_command",
      [](const std::string& name, const std::string& config, const std::string& out) {
        const json cfg = merge_config(json::parse(config));
        py::gil_scoped_release release;
        return run_command(name, cfg, out).summary.dump();
      },
      py::arg("name"), py::arg("config"), py::arg("out"));
}
