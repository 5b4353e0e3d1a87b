#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "jnflow/checkpoint.hpp"
#include "jnflow/config.hpp"
#include "jnflow/hmc.hpp"
#include "jnflow/metrics.hpp"

namespace jnflow {

/// Machine-readable record of one stage run: command, full config text,
/// seeds, and SHA-256 of every input and output file. Written next to the
/// primary output as `<out>.manifest.json`.
struct Manifest {
  std::string command;
  RunConfig config;
  nlohmann::ordered_json inputs = nlohmann::ordered_json::object();
  nlohmann::ordered_json outputs = nlohmann::ordered_json::object();
  nlohmann::ordered_json summary = nlohmann::ordered_json::object();

  void add_input(const std::string& role, const std::filesystem::path& path);
  void add_output(const std::filesystem::path& path);
  nlohmann::ordered_json to_json() const;
  std::filesystem::path write(const std::filesystem::path& primary_output) const;
};

std::filesystem::path manifest_path(const std::filesystem::path& primary_output);
/// `dir/stem<suffix>` for a primary output `dir/stem.ext`.
std::filesystem::path sibling(const std::filesystem::path& primary_output, const std::string& suffix);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string joint_trace_csv(const std::vector<JointEpochLoss>& trace);
std::string stage2_trace_csv(const std::vector<Stage2EpochLoss>& trace);
std::string projector_trace_csv(const std::vector<double>& trace);
/// `z1,z2,class,square_width` per sample from encoded means; needs d_z = 2.
std::string latent_scatter_csv(const JointVae& joint, const ToyDataset& data);
/// One row per sample, columns z1..zd.
std::string latent_rows_csv(const Tensor& z);

struct GenDataArgs {
  std::string split = "train";  // "train" or "test"
  std::optional<std::size_t> n;
  std::optional<std::uint64_t> seed;
  std::filesystem::path out;
};
Manifest stage_gen_data(const RunConfig& cfg, const GenDataArgs& args);

struct TrainJointArgs {
  std::filesystem::path data;
  std::filesystem::path out;
  /// One run per value; empty means joint.beta from the config. With more
  /// than one value each output is `<stem>.beta<value><ext>`.
  std::vector<double> betas;
};
/// On divergence the last completed epoch is saved to `<out>.partial` and
/// the TrainingError is rethrown.
Manifest stage_train_joint(const RunConfig& cfg, const TrainJointArgs& args);
std::filesystem::path beta_output(const std::filesystem::path& out, double beta);

struct TrainProjectorsArgs {
  std::filesystem::path data;
  std::filesystem::path out;
  ProjectorMethod method = ProjectorMethod::Cl;
};
Manifest stage_train_projectors(const RunConfig& cfg, const TrainProjectorsArgs& args);

struct TrainFlowsArgs {
  std::filesystem::path data;
  std::optional<std::filesystem::path> joint;
  std::optional<std::filesystem::path> projectors;
  std::filesystem::path out;
};
/// Throws PipelineOrderError when the joint checkpoint (or, in shared
/// modes, the projector checkpoint) is missing.
Manifest stage_train_flows(const RunConfig& cfg, const TrainFlowsArgs& args);

enum class SamplerKind { Hmc, Flow };
SamplerKind sampler_from_string(const std::string& name);

struct SampleArgs {
  std::optional<std::filesystem::path> joint;
  std::optional<std::filesystem::path> flows;
  std::optional<std::filesystem::path> projectors;
  std::optional<std::filesystem::path> data;
  /// Modality names; empty samples the prior, all modalities route to the
  /// joint encoder, anything else needs trained flows.
  std::vector<std::string> condition_on;
  std::size_t index = 0;
  std::size_t n = 64;
  SamplerKind sampler = SamplerKind::Hmc;
  std::filesystem::path out;
};
/// Writes z rows as CSV at `out`, a sidecar `<stem>.report.json` and one
/// PGM grid per modality of the decoded samples.
Manifest stage_sample(const RunConfig& cfg, const SampleArgs& args);

struct EvalArgs {
  std::optional<std::filesystem::path> joint;
  std::optional<std::filesystem::path> flows;
  std::optional<std::filesystem::path> projectors;
  std::filesystem::path data;  // held-out test set
  std::filesystem::path out;   // report JSON
};
Manifest stage_eval(const RunConfig& cfg, const EvalArgs& args);

/// Loaded and cross-checked pipeline artifacts.
struct LoadedModels {
  JointVae joint;
  std::string joint_hash;
  std::optional<ProjectorSet> projectors;
  std::string projectors_hash;
  std::optional<UnimodalSet> flows;
  std::string flows_hash;
};
/// Loads the joint checkpoint (required) and, when given, the flows and
/// projector checkpoints, verifying every recorded parent hash.
LoadedModels load_models(const std::optional<std::filesystem::path>& joint,
                         const std::optional<std::filesystem::path>& flows,
                         const std::optional<std::filesystem::path>& projectors);

/// Every artifact of one in-memory pipeline run, serialized exactly as the
/// file stages would write them.
struct PipelineArtifacts {
  std::vector<std::uint8_t> joint, projectors, flows;
  std::string report;
  CoherenceReport coherence;
};
/// gen-data (train and test), train-joint, train-projectors when the
/// flows mode is shared, train-flows and eval, run through the file stages
/// in a temporary directory that is removed afterwards.
PipelineArtifacts run_pipeline(const RunConfig& cfg);

}  // namespace jnflow
