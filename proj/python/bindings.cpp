#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "jnflow/pipeline.hpp"

namespace py = pybind11;
using namespace jnflow;

namespace {

py::array_t<double> to_numpy(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> out(shape);
  std::copy(t.storage().begin(), t.storage().end(), out.mutable_data());
  return out;
}

Tensor from_numpy(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

py::object json_to_py(const nlohmann::ordered_json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

py::dict manifest_dict(const Manifest& m) { return json_to_py(m.to_json()); }

RunConfig config_from(const py::dict& overrides) {
  RunConfig cfg;
  for (const auto& [k, v] : overrides) cfg.set(py::str(k), py::str(v));
  return cfg;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Two-stage multimodal VAE with flow-based unimodal posteriors";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<PipelineOrderError>(m, "PipelineOrderError", PyExc_RuntimeError);
  py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_RuntimeError);
  py::register_exception<ContractViolation>(m, "ContractViolation", PyExc_ValueError);

  m.def("config_defaults", [] {
    py::dict d;
    for (const auto& k : config_keys()) d[py::str(k.name)] = k.default_value;
    return d;
  });
  m.def(
      "config_text", [](const py::dict& overrides) { return config_from(overrides).text(); },
      py::arg("overrides") = py::dict());

  m.def(
      "generate_dataset",
      [](std::size_t n, std::uint64_t seed) {
        const ToyDataset d = generate_dataset({n, seed});
        const auto idx = all_indices(d);
        std::vector<int> labels = class_labels(d), widths;
        for (const auto& s : d.samples) widths.push_back(s.square_width);
        py::dict out;
        out["square"] = to_numpy(modality_matrix(d, 0, idx));
        out["circle"] = to_numpy(modality_matrix(d, 1, idx));
        out["label"] = labels;
        out["square_width"] = widths;
        return out;
      },
      py::arg("n"), py::arg("seed"), "Images as (n, 1024) arrays; label 0 = full, 1 = empty.");

  m.def(
      "kl_diag_gaussians",
      [](const py::array_t<double>& mu_a, const py::array_t<double>& lv_a, const py::array_t<double>& mu_b,
         const py::array_t<double>& lv_b) {
        Tape tape(Tape::Params::Frozen);
        DiagGaussian a{tape.constant(from_numpy(mu_a)), tape.constant(from_numpy(lv_a))};
        DiagGaussian b{tape.constant(from_numpy(mu_b)), tape.constant(from_numpy(lv_b))};
        return to_numpy(kl_diag_gaussians(a, b).value());
      },
      "Per-row KL(a || b) for (batch, d) means and log-variances.");

  m.def(
      "frechet_distance",
      [](const py::array_t<double>& a, const py::array_t<double>& b) {
        return frechet_distance(frechet_stats(from_numpy(a)), frechet_stats(from_numpy(b)));
      },
      "Frechet distance between Gaussian summaries of two (n, k) feature sets.");

  m.def(
      "infonce_loss",
      [](const std::vector<py::array_t<double>>& embeddings, double tau) {
        Tape tape(Tape::Params::Frozen);
        std::vector<Var> vs;
        for (const auto& e : embeddings) vs.push_back(tape.constant(from_numpy(e)));
        return infonce_loss(vs, tau).value().item();
      },
      py::arg("embeddings"), py::arg("tau") = kDefaultTemperature);

  m.def(
      "canonical_correlations",
      [](const py::array_t<double>& a, const py::array_t<double>& b, double eps) {
        return canonical_correlations(from_numpy(a), from_numpy(b), eps);
      },
      py::arg("a"), py::arg("b"), py::arg("eps_cov") = kDefaultCovEps);

  m.def(
      "hmc_gaussian_product",
      [](const std::vector<std::pair<std::vector<double>, std::vector<double>>>& experts, std::size_t n,
         std::uint64_t seed) {
        std::vector<std::shared_ptr<const Expert>> ex;
        for (const auto& [mu, lv] : experts) ex.push_back(std::make_shared<GaussianExpert>(mu, lv));
        HmcConfig cfg;
        cfg.seed = seed;
        const HmcResult r = sample_subset_posterior(SubsetPosteriorTarget(std::move(ex)), cfg, n);
        py::dict out;
        out["samples"] = to_numpy(r.samples);
        out["acceptance_rate"] = r.acceptance_rate;
        out["mean_step_size"] = r.mean_step_size;
        return out;
      },
      py::arg("experts"), py::arg("n"), py::arg("seed") = 0,
      "HMC on the product of diagonal Gaussian experts divided by (|S| - 1) standard-normal priors.");

  m.def("load_checkpoint", [](const std::filesystem::path& path) {
    const Checkpoint c = load_checkpoint(path);
    py::dict records;
    for (const auto& [name, t] : c.records) records[py::str(name)] = to_numpy(t);
    py::dict out;
    out["meta"] = json_to_py(c.meta);
    out["records"] = records;
    return out;
  });
  m.def("file_sha256", &file_sha256);

  m.def(
      "gen_data",
      [](const std::filesystem::path& out, const std::string& split, std::optional<std::size_t> n,
         std::optional<std::uint64_t> seed, const py::dict& config) {
        return manifest_dict(stage_gen_data(config_from(config), {split, n, seed, out}));
      },
      py::arg("out"), py::arg("split") = "train", py::arg("n") = py::none(), py::arg("seed") = py::none(),
      py::arg("config") = py::dict());
  m.def(
      "train_joint",
      [](const std::filesystem::path& data, const std::filesystem::path& out, const std::vector<double>& betas,
         const py::dict& config) {
        return manifest_dict(stage_train_joint(config_from(config), {data, out, betas}));
      },
      py::arg("data"), py::arg("out"), py::arg("betas") = std::vector<double>{}, py::arg("config") = py::dict());
  m.def(
      "train_projectors",
      [](const std::filesystem::path& data, const std::filesystem::path& out, const std::string& method,
         const py::dict& config) {
        return manifest_dict(stage_train_projectors(config_from(config), {data, out, projector_method_from_string(method)}));
      },
      py::arg("data"), py::arg("out"), py::arg("method") = "cl", py::arg("config") = py::dict());
  m.def(
      "train_flows",
      [](const std::filesystem::path& data, std::optional<std::filesystem::path> joint, const std::filesystem::path& out,
         std::optional<std::filesystem::path> projectors, const py::dict& config) {
        return manifest_dict(stage_train_flows(config_from(config), {data, joint, projectors, out}));
      },
      py::arg("data"), py::arg("joint"), py::arg("out"), py::arg("projectors") = py::none(),
      py::arg("config") = py::dict());
  m.def(
      "sample",
      [](std::optional<std::filesystem::path> joint, const std::filesystem::path& out,
         std::vector<std::string> condition_on, std::optional<std::filesystem::path> flows,
         std::optional<std::filesystem::path> projectors, std::optional<std::filesystem::path> data, std::size_t index,
         std::size_t n, const std::string& sampler, const py::dict& config) {
        SampleArgs a;
        a.joint = joint;
        a.flows = flows;
        a.projectors = projectors;
        a.data = data;
        a.condition_on = std::move(condition_on);
        a.index = index;
        a.n = n;
        a.sampler = sampler_from_string(sampler);
        a.out = out;
        return manifest_dict(stage_sample(config_from(config), a));
      },
      py::arg("joint"), py::arg("out"), py::arg("condition_on") = std::vector<std::string>{},
      py::arg("flows") = py::none(), py::arg("projectors") = py::none(), py::arg("data") = py::none(),
      py::arg("index") = 0, py::arg("n") = 64, py::arg("sampler") = "hmc", py::arg("config") = py::dict());
  m.def(
      "evaluate",
      [](std::optional<std::filesystem::path> joint, std::optional<std::filesystem::path> flows,
         const std::filesystem::path& data, const std::filesystem::path& out,
         std::optional<std::filesystem::path> projectors, const py::dict& config) {
        return manifest_dict(stage_eval(config_from(config), {joint, flows, projectors, data, out}));
      },
      py::arg("joint"), py::arg("flows"), py::arg("data"), py::arg("out"), py::arg("projectors") = py::none(),
      py::arg("config") = py::dict());
}
