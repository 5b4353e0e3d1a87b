#include "jnflow/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "jnflow/parallel.hpp"

namespace jnflow {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

constexpr std::size_t kGridSamples = 32;
constexpr std::size_t kGridCols = 8;

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

ojson seeds_of(const RunConfig& cfg) {
  ojson s = ojson::object();
  for (const auto& k : config_keys())
    if (k.name.ends_with(".seed")) s[k.name] = cfg.seed(k.name);
  return s;
}

void require_file(const fs::path& p, const std::string& role) {
  if (!fs::exists(p)) throw ConfigError(role + " file " + p.string() + " does not exist");
}

Tensor decode_grid(const JointVae& joint, std::size_t modality, const Tensor& z) {
  return decode_probs(joint, modality, row_range(z, 0, std::min(z.rows(), kGridSamples)));
}

Tensor gaussian_rows(const Tensor& mu, const Tensor& log_var, std::size_t n, Rng& rng) {
  const std::size_t d = mu.cols();
  Tensor z = normal_tensor({n, d}, rng);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) z(r, c) = mu(0, c) + std::exp(0.5 * log_var(0, c)) * z(r, c);
  return z;
}

}  // namespace

void Manifest::add_input(const std::string& role, const fs::path& path) {
  inputs[role] = {{"path", path.string()}, {"sha256", file_sha256(path)}};
}

void Manifest::add_output(const fs::path& path) { outputs[path.string()] = file_sha256(path); }

ojson Manifest::to_json() const {
  ojson j;
  j["command"] = command;
  j["config"] = config.values();
  j["config_text"] = config.text();
  j["seeds"] = seeds_of(config);
  j["threads"] = worker_count();
  j["inputs"] = inputs;
  j["outputs"] = outputs;
  j["summary"] = summary;
  return j;
}

fs::path manifest_path(const fs::path& primary_output) {
  fs::path p = primary_output;
  p += ".manifest.json";
  return p;
}

fs::path sibling(const fs::path& primary_output, const std::string& suffix) {
  return primary_output.parent_path() / (primary_output.stem().string() + suffix);
}

fs::path Manifest::write(const fs::path& primary_output) const {
  const fs::path p = manifest_path(primary_output);
  write_text(p, to_json().dump(2) + "\n");
  return p;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::string joint_trace_csv(const std::vector<JointEpochLoss>& trace) {
  std::string out = "epoch";
  const std::size_t m = trace.empty() ? 2 : trace.front().neg_recon.size();
  for (std::size_t j = 0; j < m; ++j) out += ",recon_" + std::to_string(j);
  out += ",kl,total\n";
  for (const auto& e : trace) {
    out += std::to_string(e.epoch);
    for (double r : e.neg_recon) out += "," + fmt(r);
    out += "," + fmt(e.kl) + "," + fmt(e.total) + "\n";
  }
  return out;
}

std::string stage2_trace_csv(const std::vector<Stage2EpochLoss>& trace) {
  std::string out = "epoch,total\n";
  for (const auto& e : trace) out += std::to_string(e.epoch) + "," + fmt(e.total) + "\n";
  return out;
}

std::string projector_trace_csv(const std::vector<double>& trace) {
  std::string out = "epoch,loss\n";
  for (std::size_t e = 0; e < trace.size(); ++e) out += std::to_string(e) + "," + fmt(trace[e]) + "\n";
  return out;
}

std::string latent_scatter_csv(const JointVae& joint, const ToyDataset& data) {
  if (joint.latent_dim() != 2) throw ContractViolation("latent_scatter_csv: needs a two-dimensional latent space");
  const Tensor mu = encode_means(joint, data);
  std::string out = "z1,z2,class,square_width\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& s = data.samples[i];
    out += fmt(mu(i, 0)) + "," + fmt(mu(i, 1)) + "," + (s.shape_class == ShapeClass::Full ? "full" : "empty") + "," +
           std::to_string(s.square_width) + "\n";
  }
  return out;
}

std::string latent_rows_csv(const Tensor& z) {
  std::string out;
  for (std::size_t c = 0; c < z.cols(); ++c) out += (c ? ",z" : "z") + std::to_string(c + 1);
  out += "\n";
  for (std::size_t r = 0; r < z.rows(); ++r) {
    for (std::size_t c = 0; c < z.cols(); ++c) out += (c ? "," : "") + fmt(z(r, c));
    out += "\n";
  }
  return out;
}

Manifest stage_gen_data(const RunConfig& cfg, const GenDataArgs& args) {
  ToyDatasetConfig dc;
  if (args.split == "train")
    dc = cfg.train_data();
  else if (args.split == "test")
    dc = cfg.test_data();
  else
    throw ConfigError("unknown split '" + args.split + "' (expected train or test)");
  if (args.n) dc.n_samples = *args.n;
  if (args.seed) dc.seed = *args.seed;
  if (dc.n_samples == 0 || dc.n_samples % 2) throw ConfigError("sample count must be positive and even");
  const ToyDataset data = generate_dataset(dc);
  write_dataset(args.out, data);

  Manifest m{"gen-data", cfg};
  m.add_output(args.out);
  m.summary = {{"split", args.split}, {"n", dc.n_samples}, {"seed", dc.seed}};
  m.write(args.out);
  return m;
}

fs::path beta_output(const fs::path& out, double beta) {
  return out.parent_path() / (out.stem().string() + ".beta" + fmt(beta) + out.extension().string());
}

Manifest stage_train_joint(const RunConfig& cfg, const TrainJointArgs& args) {
  require_file(args.data, "data");
  const ToyDataset data = read_dataset(args.data);
  const std::string data_hash = file_sha256(args.data);
  std::vector<double> betas = args.betas;
  if (betas.empty()) betas.push_back(cfg.number("joint.beta"));

  Manifest m{"train-joint", cfg};
  m.add_input("data", args.data);
  m.summary["runs"] = ojson::array();
  for (double beta : betas) {
    RunConfig run = cfg;
    run.set("joint.beta", fmt(beta));
    const JointTrainConfig jc = run.joint();
    const fs::path out = betas.size() == 1 ? args.out : beta_output(args.out, beta);

    std::optional<JointVae> last_valid;
    JointTrainResult result;
    try {
      result = train_joint(data, jc, [&](const JointEpochLoss&, const JointVae& model) { last_valid = model; });
    } catch (const TrainingError&) {
      if (last_valid) {
        Checkpoint c = joint_checkpoint(*last_valid, jc.seed);
        c.meta["parents"]["data"] = data_hash;
        fs::path partial = out;
        partial += ".partial";
        save_checkpoint(partial, c);
      }
      throw;
    }
    Checkpoint c = joint_checkpoint(result.model, jc.seed);
    c.meta["parents"]["data"] = data_hash;
    save_checkpoint(out, c);
    m.add_output(out);

    const fs::path trace = sibling(out, ".loss.csv");
    write_text(trace, joint_trace_csv(result.trace));
    m.add_output(trace);
    if (result.model.latent_dim() == 2) {
      const fs::path scatter = sibling(out, ".latent.csv");
      write_text(scatter, latent_scatter_csv(result.model, data));
      m.add_output(scatter);
    }
    ojson run_summary = {{"beta", beta}, {"checkpoint", out.string()}};
    if (!result.trace.empty()) {
      run_summary["first_epoch_loss"] = result.trace.front().total;
      run_summary["final_epoch_loss"] = result.trace.back().total;
    }
    m.summary["runs"].push_back(run_summary);
  }
  m.write(args.out);
  return m;
}

Manifest stage_train_projectors(const RunConfig& cfg, const TrainProjectorsArgs& args) {
  require_file(args.data, "data");
  const ToyDataset data = read_dataset(args.data);
  const ProjectorTrainResult result = train_projectors(data, cfg.projectors(args.method));
  ProjectorSet g = result.projectors;
  Checkpoint c = projector_checkpoint(g);
  c.meta["parents"]["data"] = file_sha256(args.data);
  save_checkpoint(args.out, c);

  Manifest m{"train-projectors", cfg};
  m.add_input("data", args.data);
  m.add_output(args.out);
  const fs::path trace = sibling(args.out, ".loss.csv");
  write_text(trace, projector_trace_csv(result.trace));
  m.add_output(trace);

  const std::size_t n = std::min<std::size_t>(data.size(), 5000);
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  const MultimodalBatch x = make_batch(data, rows);
  nlohmann::ordered_json pairs = nlohmann::ordered_json::array();
  for (std::size_t a = 0; a < g.modalities(); ++a)
    for (std::size_t b = a + 1; b < g.modalities(); ++b) {
      const auto rho = canonical_correlations(g.project(a, x.modalities[a]), g.project(b, x.modalities[b]),
                                              g.config().eps_cov);
      pairs.push_back({{"from", kModalityNames[a]}, {"to", kModalityNames[b]}, {"n", n}, {"canonical_correlations", rho}});
    }
  const fs::path report = sibling(args.out, ".report.json");
  write_text(report, nlohmann::ordered_json{{"method", to_string(args.method)}, {"pairs", pairs}}.dump(2) + "\n");
  m.add_output(report);
  m.summary = {{"method", to_string(args.method)},
               {"final_epoch_loss", result.trace.empty() ? 0.0 : result.trace.back()},
               {"canonical_correlations", pairs}};
  m.write(args.out);
  return m;
}

LoadedModels load_models(const std::optional<fs::path>& joint, const std::optional<fs::path>& flows,
                         const std::optional<fs::path>& projectors) {
  if (!joint) throw PipelineOrderError("joint", "missing prerequisite: joint checkpoint (--joint)");
  if (!fs::exists(*joint)) throw PipelineOrderError("joint", "joint checkpoint " + joint->string() + " not found");
  LoadedModels out;
  const Checkpoint jc = load_checkpoint(*joint);
  out.joint = joint_from_checkpoint(jc);
  out.joint_hash = file_sha256(*joint);

  if (projectors) {
    if (!fs::exists(*projectors))
      throw PipelineOrderError("projectors", "projector checkpoint " + projectors->string() + " not found");
    out.projectors = projectors_from_checkpoint(load_checkpoint(*projectors));
    out.projectors_hash = file_sha256(*projectors);
  }
  if (flows) {
    if (!fs::exists(*flows)) throw PipelineOrderError("flows", "flows checkpoint " + flows->string() + " not found");
    const Checkpoint fc = load_checkpoint(*flows);
    require_kind(fc, "unimodal");
    verify_parent(fc, "joint", out.joint_hash);
    const bool shared = fc.meta["parents"].contains("projectors");
    if (shared) {
      if (!out.projectors)
        throw PipelineOrderError("projectors", "flows checkpoint conditions on projectors; pass --projectors");
      verify_parent(fc, "projectors", out.projectors_hash);
    }
    out.flows = unimodal_from_checkpoint(fc, shared ? &*out.projectors : nullptr);
    out.flows_hash = file_sha256(*flows);
  }
  return out;
}

Manifest stage_train_flows(const RunConfig& cfg, const TrainFlowsArgs& args) {
  if (!args.joint) throw PipelineOrderError("joint", "missing prerequisite: joint checkpoint (--joint)");
  const Stage2Config sc = cfg.stage2();
  if (is_shared(sc.mode) && !args.projectors)
    throw PipelineOrderError("projectors", "flows.mode " + to_string(sc.mode) + " needs a projector checkpoint (--projectors)");
  const LoadedModels models = load_models(args.joint, std::nullopt, is_shared(sc.mode) ? args.projectors : std::nullopt);
  require_file(args.data, "data");
  const ToyDataset data = read_dataset(args.data);

  const Stage2Result result =
      train_unimodal(models.joint, data, sc, models.projectors ? &*models.projectors : nullptr);
  UnimodalSet set = result.set;
  std::vector<std::pair<std::string, std::string>> parents{{"joint", models.joint_hash}};
  if (is_shared(sc.mode)) parents.emplace_back("projectors", models.projectors_hash);
  parents.emplace_back("data", file_sha256(args.data));
  save_checkpoint(args.out, unimodal_checkpoint(set, models.joint.latent_dim(), parents));

  Manifest m{"train-flows", cfg};
  m.add_input("data", args.data);
  m.add_input("joint", *args.joint);
  if (is_shared(sc.mode)) m.add_input("projectors", *args.projectors);
  m.add_output(args.out);
  const fs::path trace = sibling(args.out, ".loss.csv");
  write_text(trace, stage2_trace_csv(result.trace));
  m.add_output(trace);
  m.summary = {{"mode", to_string(sc.mode)},
               {"n_flows", sc.n_flows},
               {"final_epoch_loss", result.trace.empty() ? 0.0 : result.trace.back().total}};
  m.write(args.out);
  return m;
}

SamplerKind sampler_from_string(const std::string& name) {
  if (name == "hmc") return SamplerKind::Hmc;
  if (name == "flow") return SamplerKind::Flow;
  throw ConfigError("unknown sampler '" + name + "' (expected hmc or flow)");
}

Manifest stage_sample(const RunConfig& cfg, const SampleArgs& args) {
  if (args.n == 0) throw ConfigError("sample count must be positive");
  std::vector<std::size_t> subset;
  for (const auto& name : args.condition_on) {
    const auto j = static_cast<std::size_t>(modality_from_name(name));
    if (std::find(subset.begin(), subset.end(), j) != subset.end())
      throw ConfigError("modality '" + name + "' listed twice in --condition-on");
    subset.push_back(j);
  }
  std::sort(subset.begin(), subset.end());

  const bool needs_flows = !subset.empty() && subset.size() < 2;
  if (needs_flows && !args.flows)
    throw PipelineOrderError("flows", "conditioning on a modality subset needs a flows checkpoint (--flows)");
  const LoadedModels models = load_models(args.joint, needs_flows ? args.flows : std::nullopt, args.projectors);
  const std::size_t m_count = models.joint.modalities();

  Manifest m{"sample", cfg};
  m.add_input("joint", *args.joint);
  if (needs_flows) m.add_input("flows", *args.flows);
  if (args.projectors) m.add_input("projectors", *args.projectors);

  ToyDataset data;
  if (!subset.empty()) {
    if (!args.data) throw ConfigError("--data is required with --condition-on");
    require_file(*args.data, "data");
    data = read_dataset(*args.data);
    if (args.index >= data.size())
      throw ConfigError("--index " + std::to_string(args.index) + " out of range for " + std::to_string(data.size()) +
                        " samples");
    m.add_input("data", *args.data);
  }
  const std::vector<std::size_t> row{args.index};

  Tensor z;
  ojson report;
  std::vector<std::string> names;
  for (std::size_t j : subset) names.emplace_back(kModalityNames[j]);
  report["subset"] = names;
  report["n"] = args.n;
  if (subset.empty()) {
    Rng rng = make_rng(cfg.seed("hmc.seed"), 0x9A10);
    z = normal_tensor({args.n, models.joint.latent_dim()}, rng);
    report["route"] = "prior";
  } else if (subset.size() == m_count) {
    Tape tape(Tape::Params::Frozen);
    const DiagGaussian q = joint_encode(tape, models.joint, make_batch(data, row));
    Rng rng = make_rng(cfg.seed("hmc.seed"), 0x7017);
    z = gaussian_rows(q.mu.value(), q.log_var.value(), args.n, rng);
    report["route"] = "joint_encode";
    report["index"] = args.index;
  } else {
    const UnimodalSet& set = *models.flows;
    report["index"] = args.index;
    if (args.sampler == SamplerKind::Flow) {
      if (subset.size() != 1) throw ConfigError("the flow sampler handles a single conditioning modality; use hmc");
      const std::size_t j = subset.front();
      const Tensor input = set.conditioning(j, modality_matrix(data, static_cast<int>(j), row));
      std::vector<Tensor> reps(args.n, input);
      Rng rng = make_rng(cfg.seed("hmc.seed"), 0xF10);
      z = set.posteriors.at(j).sample_rows(stack_rows(reps), rng);
      report["route"] = "flow";
    } else {
      std::vector<std::shared_ptr<const Expert>> experts;
      for (std::size_t j : subset)
        experts.push_back(std::make_shared<FlowExpert>(
            set.posteriors.at(j), set.conditioning(j, modality_matrix(data, static_cast<int>(j), row))));
      const SubsetPosteriorTarget target(std::move(experts));
      const HmcResult r = sample_subset_posterior(target, cfg.hmc(), args.n);
      z = r.samples;
      report["route"] = "hmc";
      report["acceptance_rate"] = r.acceptance_rate;
      report["mean_step_size"] = r.mean_step_size;
      report["low_acceptance_chains"] = r.low_acceptance_chains;
      if (r.low_acceptance_chains > 0)
        report["warning"] = std::to_string(r.low_acceptance_chains) +
                            " chains accepted under 10% of proposals; the step size is likely too large";
    }
  }

  write_text(args.out, latent_rows_csv(z));
  m.add_output(args.out);
  const fs::path rp = sibling(args.out, ".report.json");
  write_text(rp, report.dump(2) + "\n");
  m.add_output(rp);
  for (std::size_t j = 0; j < m_count; ++j) {
    const fs::path grid = sibling(args.out, std::string(".") + kModalityNames[j] + ".pgm");
    write_pgm_grid(grid, decode_grid(models.joint, j, z), kGridCols);
    m.add_output(grid);
  }
  m.summary = report;
  m.write(args.out);
  return m;
}

Manifest stage_eval(const RunConfig& cfg, const EvalArgs& args) {
  if (!args.flows) throw PipelineOrderError("flows", "missing prerequisite: flows checkpoint (--flows)");
  const LoadedModels models = load_models(args.joint, args.flows, args.projectors);
  require_file(args.data, "data");
  const ToyDataset test = read_dataset(args.data);

  const ClassifierConfig cc = cfg.classifier();
  const ToyClassifier classifier = train_toy_classifier(cc);
  require_fit(classifier, cc.min_accuracy);
  const EvalConfig ec = cfg.eval();
  CoherenceReport report = evaluate_pipeline(models.joint, *models.flows, test, classifier, ec);
  report.checkpoints["joint"] = models.joint_hash;
  report.checkpoints["flows"] = models.flows_hash;
  if (models.projectors) report.checkpoints["projectors"] = models.projectors_hash;
  report.checkpoints["test_data"] = file_sha256(args.data);
  write_text(args.out, report.to_json().dump(2) + "\n");

  Manifest m{"eval", cfg};
  m.add_input("joint", *args.joint);
  m.add_input("flows", *args.flows);
  if (args.projectors) m.add_input("projectors", *args.projectors);
  m.add_input("data", args.data);
  m.add_output(args.out);

  // Image panels: conditioning inputs, their cross-modal generations,
  // and prior samples in every modality.
  const std::size_t k = std::min(test.size(), kGridSamples);
  std::vector<std::size_t> idx(k);
  for (std::size_t i = 0; i < k; ++i) idx[i] = i;
  for (std::size_t from = 0; from < 2; ++from) {
    const std::size_t to = 1 - from;
    const Tensor x = modality_matrix(test, static_cast<int>(from), idx);
    const Tensor z = conditional_latents(*models.flows, from, x, ec.seed ^ 0x6D1D);
    const std::string dir = std::string(".") + kModalityNames[from] + "_to_" + kModalityNames[to];
    const fs::path input_grid = sibling(args.out, dir + ".input.pgm");
    const fs::path output_grid = sibling(args.out, dir + ".pgm");
    write_pgm_grid(input_grid, x, kGridCols);
    write_pgm_grid(output_grid, decode_probs(models.joint, to, z), kGridCols);
    m.add_output(input_grid);
    m.add_output(output_grid);
  }
  Rng rng = make_rng(ec.seed, 0x6D1E);
  const Tensor zp = normal_tensor({kGridSamples, models.joint.latent_dim()}, rng);
  for (std::size_t j = 0; j < 2; ++j) {
    const fs::path grid = sibling(args.out, std::string(".prior.") + kModalityNames[j] + ".pgm");
    write_pgm_grid(grid, decode_probs(models.joint, j, zp), kGridCols);
    m.add_output(grid);
  }
  m.summary = report.to_json();
  m.write(args.out);
  return m;
}

PipelineArtifacts run_pipeline(const RunConfig& cfg) {
  std::random_device rd;
  const fs::path dir = fs::temp_directory_path() / ("jnf-run-" + std::to_string(rd()) + std::to_string(rd()));
  fs::create_directories(dir);
  struct Cleanup {
    fs::path p;
    ~Cleanup() {
      std::error_code ec;
      fs::remove_all(p, ec);
    }
  } cleanup{dir};

  const Stage2Config sc = cfg.stage2();
  stage_gen_data(cfg, {"train", std::nullopt, std::nullopt, dir / "train.txt"});
  stage_gen_data(cfg, {"test", std::nullopt, std::nullopt, dir / "test.txt"});
  stage_train_joint(cfg, {dir / "train.txt", dir / "joint.ckpt", {}});
  std::optional<fs::path> proj;
  if (is_shared(sc.mode)) {
    proj = dir / "projectors.ckpt";
    const ProjectorMethod method = sc.mode == ContextMode::SharedDcca ? ProjectorMethod::Dcca : ProjectorMethod::Cl;
    stage_train_projectors(cfg, {dir / "train.txt", *proj, method});
  }
  stage_train_flows(cfg, {dir / "train.txt", dir / "joint.ckpt", proj, dir / "flows.ckpt"});
  stage_eval(cfg, {dir / "joint.ckpt", dir / "flows.ckpt", proj, dir / "test.txt", dir / "report.json"});

  PipelineArtifacts out;
  out.joint = read_file_bytes(dir / "joint.ckpt");
  if (proj) out.projectors = read_file_bytes(*proj);
  out.flows = read_file_bytes(dir / "flows.ckpt");
  const auto rb = read_file_bytes(dir / "report.json");
  out.report.assign(rb.begin(), rb.end());
  const ojson rj = ojson::parse(out.report);
  for (const auto& d : rj["conditional"]) {
    DirectionReport r;
    const std::string dirn = d["direction"].get<std::string>();
    const auto arrow = dirn.find("->");
    r.from = dirn.substr(0, arrow);
    r.to = dirn.substr(arrow + 2);
    r.coherence = d["coherence"].get<double>();
    r.frechet = d["frechet"].get<double>();
    r.n = d["n"].get<std::size_t>();
    out.coherence.conditional.push_back(r);
  }
  out.coherence.joint_coherence = rj["joint"]["coherence"].get<double>();
  out.coherence.n_joint = rj["joint"]["n"].get<std::size_t>();
  for (const auto& [k, v] : rj["joint"]["frechet"].items()) out.coherence.joint_frechet.push_back(v.get<double>());
  out.coherence.classifier_accuracy = rj["classifier_accuracy"].get<std::vector<double>>();
  out.coherence.seed = rj["seed"].get<std::uint64_t>();
  out.coherence.checkpoints = rj["checkpoint_hashes"].get<std::map<std::string, std::string>>();
  return out;
}

}  // namespace jnflow
