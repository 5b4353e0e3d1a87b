#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "jnflow/pipeline.hpp"

namespace {

using namespace jnflow;
namespace fs = std::filesystem;

enum Exit { kOk = 0, kRuntime = 1, kUsage = 2, kOrder = 3 };

struct Common {
  std::string config;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "flat key = value config file")->check(CLI::ExistingFile);
  cmd->add_option("--set", c.overrides, "override one config key (key=value), repeatable");
}

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig() : RunConfig::load(c.config);
  for (const auto& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return cfg;
}

std::optional<fs::path> opt_path(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return fs::path(s);
}

std::vector<std::string> split_names(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string part;
  while (std::getline(in, part, ','))
    if (!part.empty()) out.push_back(part);
  return out;
}

void print_config_keys() {
  for (const auto& k : config_keys()) std::cout << k.name << " = " << k.default_value << "    # " << k.doc << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-stage multimodal VAE with flow-based unimodal posteriors"};
  app.require_subcommand(0, 1);
  bool list_keys = false;
  app.add_flag("--list-config", list_keys, "print every config key with its default");

  Common gen_c, joint_c, proj_c, flows_c, sample_c, eval_c;

  GenDataArgs gen;
  std::string gen_out;
  std::size_t gen_n = 0;
  std::uint64_t gen_seed = 0;
  auto* gen_cmd = app.add_subcommand("gen-data", "generate a squares-and-circles dataset");
  add_common(gen_cmd, gen_c);
  auto* gen_n_opt = gen_cmd->add_option("--n", gen_n, "sample count (even)");
  auto* gen_seed_opt = gen_cmd->add_option("--seed", gen_seed, "dataset seed");
  gen_cmd->add_option("--split", gen.split, "train or test: which config defaults to use")
      ->check(CLI::IsMember({"train", "test"}));
  gen_cmd->add_option("--out", gen_out, "dataset file")->required();

  std::string j_data, j_out;
  std::vector<double> betas;
  auto* joint_cmd = app.add_subcommand("train-joint", "stage 1: train the joint VAE");
  add_common(joint_cmd, joint_c);
  joint_cmd->add_option("--data", j_data, "training dataset")->required();
  joint_cmd->add_option("--out", j_out, "checkpoint path")->required();
  joint_cmd->add_option("--beta", betas, "KL weight; repeat to train one model per value")->allow_extra_args(false);

  std::string p_data, p_out, p_method = "cl";
  auto* proj_cmd = app.add_subcommand("train-projectors", "train shared-information projectors");
  add_common(proj_cmd, proj_c);
  proj_cmd->add_option("--data", p_data, "training dataset")->required();
  proj_cmd->add_option("--method", p_method, "dcca or cl")->check(CLI::IsMember({"dcca", "cl"}));
  proj_cmd->add_option("--out", p_out, "checkpoint path")->required();

  std::string f_data, f_joint, f_proj, f_out, f_mode;
  auto* flows_cmd = app.add_subcommand("train-flows", "stage 2: train the unimodal flow posteriors");
  add_common(flows_cmd, flows_c);
  flows_cmd->add_option("--data", f_data, "training dataset")->required();
  flows_cmd->add_option("--joint", f_joint, "stage-1 checkpoint");
  flows_cmd->add_option("--projectors", f_proj, "projector checkpoint (shared modes)");
  flows_cmd->add_option("--mode", f_mode, "raw, shared-dcca or shared-cl (overrides flows.mode)")
      ->check(CLI::IsMember({"raw", "shared-dcca", "shared-cl"}));
  flows_cmd->add_option("--out", f_out, "checkpoint path")->required();

  std::string s_joint, s_flows, s_proj, s_data, s_out, s_cond, s_sampler = "hmc";
  SampleArgs sample;
  auto* sample_cmd = app.add_subcommand("sample", "draw latent samples and decoded images");
  add_common(sample_cmd, sample_c);
  sample_cmd->add_option("--joint", s_joint, "stage-1 checkpoint");
  sample_cmd->add_option("--flows", s_flows, "stage-2 checkpoint");
  sample_cmd->add_option("--projectors", s_proj, "projector checkpoint (shared modes)");
  sample_cmd->add_option("--data", s_data, "dataset holding the conditioning sample");
  sample_cmd->add_option("--index", sample.index, "row of --data to condition on");
  sample_cmd->add_option("--condition-on", s_cond, "comma list of modality names (square, circle); empty: prior");
  sample_cmd->add_option("--n", sample.n, "number of samples");
  sample_cmd->add_option("--sampler", s_sampler, "hmc or flow (single modality only)")
      ->check(CLI::IsMember({"hmc", "flow"}));
  sample_cmd->add_option("--out", s_out, "latent CSV path")->required();

  std::string e_joint, e_flows, e_proj, e_data, e_out;
  auto* eval_cmd = app.add_subcommand("eval", "coherence and Frechet report on a test set");
  add_common(eval_cmd, eval_c);
  eval_cmd->add_option("--joint", e_joint, "stage-1 checkpoint");
  eval_cmd->add_option("--flows", e_flows, "stage-2 checkpoint");
  eval_cmd->add_option("--projectors", e_proj, "projector checkpoint (shared modes)");
  eval_cmd->add_option("--data", e_data, "held-out test set")->required();
  eval_cmd->add_option("--out", e_out, "report JSON path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  if (list_keys) {
    print_config_keys();
    return kOk;
  }

  try {
    Manifest m;
    fs::path primary;
    if (gen_cmd->parsed()) {
      if (*gen_n_opt) gen.n = gen_n;
      if (*gen_seed_opt) gen.seed = gen_seed;
      gen.out = gen_out;
      m = stage_gen_data(resolve(gen_c), gen);
      primary = gen.out;
    } else if (joint_cmd->parsed()) {
      m = stage_train_joint(resolve(joint_c), {j_data, j_out, betas});
      primary = j_out;
    } else if (proj_cmd->parsed()) {
      m = stage_train_projectors(resolve(proj_c), {p_data, p_out, projector_method_from_string(p_method)});
      primary = p_out;
    } else if (flows_cmd->parsed()) {
      RunConfig cfg = resolve(flows_c);
      if (!f_mode.empty()) cfg.set("flows.mode", f_mode);
      m = stage_train_flows(cfg, {f_data, opt_path(f_joint), opt_path(f_proj), f_out});
      primary = f_out;
    } else if (sample_cmd->parsed()) {
      sample.joint = opt_path(s_joint);
      sample.flows = opt_path(s_flows);
      sample.projectors = opt_path(s_proj);
      sample.data = opt_path(s_data);
      sample.condition_on = split_names(s_cond);
      sample.sampler = sampler_from_string(s_sampler);
      sample.out = s_out;
      m = stage_sample(resolve(sample_c), sample);
      primary = s_out;
    } else if (eval_cmd->parsed()) {
      m = stage_eval(resolve(eval_c), {opt_path(e_joint), opt_path(e_flows), opt_path(e_proj), e_data, e_out});
      primary = e_out;
    } else {
      std::cerr << app.help();
      return kUsage;
    }
    std::cout << m.summary.dump() << "\n";
    std::cerr << "manifest: " << manifest_path(primary).string() << "\n";
    return kOk;
  } catch (const PipelineOrderError& e) {
    std::cerr << "error: " << e.what() << " [missing: " << e.missing() << "]\n";
    return kOrder;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const TrainingError& e) {
    std::cerr << "error: training diverged in term '" << e.term() << "': " << e.what() << "\n";
    return kRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
}
