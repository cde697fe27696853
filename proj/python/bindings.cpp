#include <sstream>

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "iclmol/baselines.hpp"
#include "iclmol/cli.hpp"
#include "iclmol/error.hpp"
#include "iclmol/experiment.hpp"
#include "iclmol/mining.hpp"
#include "iclmol/molgraph.hpp"
#include "iclmol/training.hpp"

namespace py = pybind11;
using namespace iclmol;

namespace {

py::dict split_scores(const experiment::SplitScores& s) {
  py::dict d;
  d["split"] = s.split;
  d["n_contexts"] = s.n_contexts;
  d["context_free_mev"] = s.context_free_mev;
  d["selection_llm_mev"] = s.selection_llm_mev;
  d["selection_regression_mev"] = s.selection_regression_mev;
  d["regression_mev"] = s.full_regression_mev;
  d["position_mev"] = s.position_mev;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "In-context property prediction on molecular graphs";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<DimensionError>(m, "DimensionError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());
  auto data = py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<ParseError>(m, "ParseError", data.ptr());
  py::register_exception<ValidationError>(m, "ValidationError", data.ptr());

  py::class_<mol::Molecule>(m, "Molecule")
      .def_static(
          "from_json", [](const std::string& line) { return mol::parse_molecule_line(line, "<python>", 1); },
          py::arg("line"))
      .def("to_json", [](const mol::Molecule& mo) { return mol::to_json_line(mo); })
      .def_readonly("id", &mol::Molecule::id)
      .def_readonly("label_u0", &mol::Molecule::label_u0)
      .def_property_readonly("elements",
                             [](const mol::Molecule& mo) {
                               std::vector<int> z;
                               for (const auto& a : mo.atoms) z.push_back(a.element);
                               return z;
                             })
      .def_property_readonly("positions",
                             [](const mol::Molecule& mo) {
                               py::array_t<double> out({mo.atoms.size(), std::size_t{3}});
                               auto v = out.mutable_unchecked<2>();
                               for (std::size_t i = 0; i < mo.atoms.size(); ++i)
                                 for (std::size_t c = 0; c < 3; ++c) v(i, c) = mo.atoms[i].position[c];
                               return out;
                             })
      .def_property_readonly("heavy_atom_count", &mol::Molecule::heavy_atom_count)
      .def("__repr__", [](const mol::Molecule& mo) { return "<Molecule " + mo.id + ">"; });

  m.def("read_dataset", py::overload_cast<const std::filesystem::path&>(&mol::parse_dataset), py::arg("path"));
  m.def("write_dataset",
        py::overload_cast<const std::filesystem::path&, std::span<const mol::Molecule>>(&mol::write_dataset),
        py::arg("path"), py::arg("molecules"));
  m.def(
      "classify_ood", [](const mol::Molecule& mo) { return std::string(mol::to_string(mol::classify_ood(mo))); },
      py::arg("molecule"), "Split of a molecule: 'base', 'ester' or 'oxime'.");

  m.def(
      "mine_patterns",
      [](const std::vector<mol::Molecule>& molecules, std::size_t min_support, std::size_t max_nodes,
         unsigned threads) {
        mining::MiningOptions opts;
        opts.min_support = min_support;
        opts.constraints.max_nodes = max_nodes;
        opts.threads = threads;
        py::list out;
        for (const auto& p : mining::mine_patterns(molecules, opts)) {
          py::dict d;
          d["id"] = p.id;
          d["n_nodes"] = p.graph.node_count();
          d["support"] = p.support;
          out.append(d);
        }
        return out;
      },
      py::arg("molecules"), py::arg("min_support") = 10, py::arg("max_nodes") = 0, py::arg("threads") = 1);

  m.def(
      "fit_minnorm",
      [](py::array_t<double, py::array::c_style | py::array::forcecast> x,
         py::array_t<double, py::array::c_style | py::array::forcecast> y, double ridge, double rcond) {
        if (x.ndim() != 2 || y.ndim() != 1) throw DimensionError("fit_minnorm expects a 2-D x and a 1-D y");
        num::Tensor<double> t({static_cast<std::size_t>(x.shape(0)), static_cast<std::size_t>(x.shape(1))});
        std::copy(x.data(), x.data() + x.size(), t.ptr());
        const auto fit = baselines::fit_minnorm(t, std::span<const double>(y.data(), y.size()), ridge, rcond);
        return py::make_tuple(py::array_t<double>(fit.weights.size(), fit.weights.data()), fit.intercept);
      },
      py::arg("x"), py::arg("y"), py::arg("ridge") = 0.0, py::arg("rcond") = 1e-10,
      "Minimum-norm least squares with intercept. Returns (weights, intercept).");

  m.def(
      "curriculum_weights",
      [](std::size_t step, std::size_t k, std::size_t period) {
        train::CurriculumState s;
        s.step = step;
        s.period = period;
        return train::curriculum_weights(s, k);
      },
      py::arg("step"), py::arg("k"), py::arg("period") = 600);

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code = 0;
        {
          py::gil_scoped_release release;
          code = cli::run(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs a command-line invocation. Returns (exit_code, stdout, stderr).");

  m.def(
      "run_desk",
      [](std::uint64_t seed, std::size_t n_patterns, std::size_t molecules_per_pattern, std::size_t pretrain_epochs,
         std::size_t icl_epochs) {
        auto cfg = experiment::DeskConfig::defaults();
        cfg.seed = seed;
        cfg.n_patterns = n_patterns;
        cfg.molecules_per_pattern = molecules_per_pattern;
        cfg.pretrain.epochs = pretrain_epochs;
        cfg.icl_train.epochs = icl_epochs;
        experiment::DeskResult r;
        {
          py::gil_scoped_release release;
          r = experiment::run_desk(cfg);
        }
        py::dict d;
        py::list splits;
        for (const auto& s : r.splits) splits.append(split_scores(s));
        d["splits"] = splits;
        d["holdout"] = split_scores(r.holdout);
        d["best_epoch"] = r.best_epoch;
        d["seconds"] = r.seconds;
        return d;
      },
      py::arg("seed") = 1, py::arg("n_patterns") = 40, py::arg("molecules_per_pattern") = 120,
      py::arg("pretrain_epochs") = 40, py::arg("icl_epochs") = 100,
      "End-to-end desk-scale experiment on a generated corpus.");
}
