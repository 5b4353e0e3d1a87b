#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "jnflow/flows.hpp"
#include "jnflow/joint_vae.hpp"
#include "jnflow/projectors.hpp"

namespace jnflow {

/// What the unimodal posteriors condition on: the raw modality, or the
/// output of a frozen projector trained by DCCA or contrastive learning.
enum class ContextMode { Raw, SharedDcca, SharedCl };
std::string to_string(ContextMode m);
ContextMode context_mode_from_string(const std::string& name);
bool is_shared(ContextMode m);

struct Stage2Config {
  ContextMode mode = ContextMode::Raw;
  /// 0 disables the flows: each posterior is a context-conditioned Gaussian.
  std::size_t n_flows = 2;
  std::size_t context_dim = 64;
  std::vector<std::size_t> made_hidden{128, 128};
  std::vector<std::size_t> base_hidden{128};
  std::vector<std::size_t> raw_context_hidden{256, 256};
  std::vector<std::size_t> shared_context_hidden{128};
  std::size_t epochs = 10;
  std::size_t batch_size = 128;
  double lr = 1e-3;
  /// Joint-posterior draws per datapoint and step.
  std::size_t samples_per_datapoint = 1;
  std::uint64_t seed = 0;
};

/// q_j(z | c_j): a context network on the conditioning input (raw x_j or
/// g_j(x_j)) feeding a FlowStack over the latent space.
class UnimodalPosterior {
 public:
  UnimodalPosterior() = default;
  UnimodalPosterior(std::size_t modality, std::size_t input_dim, std::size_t latent_dim, const Stage2Config& cfg,
                    std::uint64_t seed);

  std::size_t modality() const { return modality_; }
  std::size_t input_dim() const { return context_net_.in_width(); }
  std::size_t dim() const { return flow_.dim(); }

  Var context(Tape& tape, Var input) const;
  /// Context vectors computed outside any training tape.
  Tensor contexts(const Tensor& inputs) const;
  /// log q(z_r | input_r) per row.
  Var log_density(Tape& tape, Var z, Var input) const;
  /// One sample per input row.
  Tensor sample_rows(const Tensor& inputs, Rng& rng) const;

  FlowStack& flow() { return flow_; }
  const FlowStack& flow() const { return flow_; }
  void collect_params(const std::string& prefix, ParamList& out);
  void collect_buffers(const std::string& prefix, ParamList& out);

 private:
  std::size_t modality_ = 0;
  Mlp context_net_;
  FlowStack flow_;
};

/// Every modality's posterior together with the projectors they condition
/// on (empty in raw mode).
struct UnimodalSet {
  Stage2Config config;
  std::vector<UnimodalPosterior> posteriors;
  ProjectorSet projectors;
  bool has_projectors = false;

  std::size_t modalities() const { return posteriors.size(); }
  /// Conditioning input of modality j: x_j, or g_j(x_j) in shared mode.
  Tensor conditioning(std::size_t modality, const Tensor& x) const;
  void collect_params(ParamList& out);
  void collect_buffers(ParamList& out);
};

/// Builds untrained posteriors. Shared modes require projectors and throw
/// ConfigError without them.
UnimodalSet make_unimodal_set(const Stage2Config& cfg, std::size_t latent_dim, const ProjectorSet* projectors);

/// -mean_r sum_j log q_j(z_r | c_{j,r}) for fixed latent samples z. The
/// conditioning inputs are one matrix per modality, aligned with z.
Var luni_from_samples(Tape& tape, const UnimodalSet& set, const Tensor& z, const std::vector<Tensor>& inputs);

/// Draws `samples` latent points per row from a joint posterior given as
/// plain values (rows repeated consecutively).
Tensor draw_joint_samples(const Tensor& mu, const Tensor& log_var, std::size_t samples, Rng& rng);

/// Stage-2 objective on one batch: z ~ q(z | X) from the joint encoder,
/// which is evaluated on its own frozen tape so no gradient can reach it,
/// then luni_from_samples.
Var luni_loss(Tape& tape, const JointVae& joint, const UnimodalSet& set, const MultimodalBatch& x, Rng& rng);

/// Same objective when the joint posterior is supplied directly. Throws
/// ContractViolation if it carries gradient (the joint encoder must be
/// frozen).
Var luni_loss(Tape& tape, const DiagGaussian& joint_posterior, const UnimodalSet& set,
              const std::vector<Tensor>& inputs, std::size_t samples, Rng& rng);

struct Stage2EpochLoss {
  std::size_t epoch = 0;
  double total = 0.0;
};

struct Stage2Result {
  UnimodalSet set;
  std::vector<Stage2EpochLoss> trace;
};

/// Adam on luni_loss over every modality at once. The joint model is only
/// read. `projectors` is required in shared modes.
Stage2Result train_unimodal(const JointVae& joint, const ToyDataset& data, const Stage2Config& cfg,
                            const ProjectorSet* projectors,
                            const std::function<void(const Stage2EpochLoss&)>& on_epoch = {});

}  // namespace jnflow
