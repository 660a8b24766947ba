// Python bindings. Arrays cross the boundary as float64 numpy copies.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "recl/error.hpp"
#include "recl/harness.hpp"
#include "recl/metrics.hpp"
#include "recl/model.hpp"
#include "recl/reconstruction.hpp"
#include "recl/tuning.hpp"

namespace py = pybind11;
using namespace recl;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor::from_input(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

ParamVector to_params(const std::vector<Array>& layers) {
  std::vector<Tensor> m;
  for (const auto& a : layers) m.push_back(to_tensor(a));
  return ParamVector(std::move(m));
}

std::vector<Array> from_params(const ParamVector& p) {
  std::vector<Array> out;
  for (const auto& t : p.matrices()) out.push_back(to_array(t));
  return out;
}

std::vector<std::size_t> to_labels(const py::array_t<long long>& a) {
  std::vector<std::size_t> out;
  for (py::ssize_t i = 0; i < a.size(); ++i) {
    const long long v = a.data()[i];
    if (v < 0) throw ContractError("labels must be non-negative");
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

py::dict components(const LossComponents& c) {
  py::dict d;
  d["rec"] = c.rec;
  d["lambda"] = c.lambda;
  d["prior"] = c.prior;
  d["full"] = c.full;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Continual learning with data reconstruction from trained models";

  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<ContractError>(m, "ContractError", PyExc_ValueError);
  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  m.def(
      "init_mlp",
      [](std::vector<std::size_t> sizes, std::uint64_t seed, double first_layer_scale) {
        return from_params(init_mlp(MlpSpec{std::move(sizes), first_layer_scale}, seed));
      },
      py::arg("layer_sizes"), py::arg("seed"), py::arg("first_layer_scale") = 1e-4,
      "Weight matrices [out x in] of a bias-free ReLU MLP.");

  m.def(
      "forward", [](const std::vector<Array>& params, const Array& x) {
        return to_array(forward(to_params(params), to_tensor(x)));
      },
      py::arg("params"), py::arg("x"));

  m.def(
      "save_checkpoint",
      [](const std::filesystem::path& path, const std::vector<Array>& params, double first_layer_scale) {
        ParamVector p = to_params(params);
        save_checkpoint(path, MlpSpec{p.layer_sizes(), first_layer_scale}, p);
      },
      py::arg("path"), py::arg("params"), py::arg("first_layer_scale") = 1e-4);

  m.def(
      "load_checkpoint", [](const std::filesystem::path& path) { return from_params(load_checkpoint(path).second); },
      py::arg("path"));

  m.def(
      "loss_prior", [](const Array& xs) { return loss_prior(ad::Var::constant(to_tensor(xs))).value().item(); },
      py::arg("xs"));
  m.def(
      "loss_lambda",
      [](const Array& lambdas, double lambda_min) {
        return loss_lambda(ad::Var::constant(to_tensor(lambdas)), lambda_min).value().item();
      },
      py::arg("lambdas"), py::arg("lambda_min") = 0.1);
  m.def(
      "loss_full",
      [](const std::vector<Array>& params, const Array& xs, const Array& lambdas, const py::array_t<long long>& labels,
         double lambda_min, double alpha) {
        ReconHyperparams hp;
        hp.lambda_min = lambda_min;
        hp.alpha = alpha;
        ad::GradModeGuard no_graph(false);
        auto f = loss_full(to_params(params), ad::Var::constant(to_tensor(xs)), ad::Var::constant(to_tensor(lambdas)),
                           to_labels(labels), hp);
        return components(f.values());
      },
      py::arg("params"), py::arg("xs"), py::arg("lambdas"), py::arg("labels"), py::arg("lambda_min") = 0.1,
      py::arg("alpha") = 100.0, "Loss terms of the reconstruction objective as a dict.");

  m.def(
      "reconstruct",
      [](const std::vector<Array>& params, std::size_t m_candidates, std::vector<std::size_t> classes,
         std::uint64_t seed, std::size_t n_rec, double lambda_min, double sigma_x, double lr_x, double lr_lambda) {
        ReconHyperparams hp;
        hp.m = m_candidates;
        hp.n_rec = n_rec;
        hp.lambda_min = lambda_min;
        hp.sigma_x = sigma_x;
        hp.lr_x = lr_x;
        hp.lr_lambda = lr_lambda;
        ReconResult r;
        {
          py::gil_scoped_release release;
          r = reconstruct(to_params(params), hp, classes, seed);
        }
        py::dict out;
        out["xs"] = to_array(r.candidates.xs);
        out["labels"] = r.candidates.labels;
        out["lambdas"] = to_array(r.candidates.lambdas);
        py::list traj;
        for (const auto& c : r.trajectory) traj.append(components(c));
        out["trajectory"] = traj;
        return out;
      },
      py::arg("params"), py::arg("m"), py::arg("classes"), py::arg("seed") = 0, py::arg("n_rec") = 1000,
      py::arg("lambda_min") = 0.1, py::arg("sigma_x") = 1e-3, py::arg("lr_x") = 0.01, py::arg("lr_lambda") = 0.01);

  m.def(
      "ssim", [](const Array& a, const Array& b) { return ssim(to_tensor(a), to_tensor(b)); }, py::arg("a"),
      py::arg("b"));
  m.def(
      "match_nearest",
      [](const Array& refs, const Array& cands) { return match_nearest(to_tensor(refs), to_tensor(cands)); },
      py::arg("references"), py::arg("candidates"));

  m.def(
      "acc_bwt",
      [](const Array& matrix) {
        Tensor t = to_tensor(matrix);
        if (t.rank() != 2 || t.rows() != t.cols()) throw ShapeError("acc_bwt expects a square T x T matrix");
        const std::size_t T = t.rows();
        AccuracyMatrix a(T);
        for (std::size_t i = 0; i < T; ++i)
          for (std::size_t j = 0; j <= i; ++j) a.record(i + 1, j + 1, t.at(i, j));
        py::object bwt = T >= 2 ? py::cast(compute_bwt(a, T)) : py::none();
        return py::make_tuple(compute_acc(a, T), bwt);
      },
      py::arg("matrix"), "ACC and BWT from the lower triangle of acc[T-1][tau-1].");

  m.def(
      "parse_config", [](const std::string& text) { return serialize_config(parse_config(text)); }, py::arg("text"),
      "Validate a config and return its canonical form.");
  m.def(
      "config_fingerprint", [](const std::string& text) { return config_fingerprint(parse_config(text)); },
      py::arg("text"));
  m.def(
      "run_experiment",
      [](const std::string& text) {
        ExperimentConfig cfg = parse_config(text);
        RunResult r;
        {
          py::gil_scoped_release release;
          r = run_experiment(cfg);
        }
        return summary_json(r);
      },
      py::arg("text"), "Run every seed of a config and return summary.json text.");
}
