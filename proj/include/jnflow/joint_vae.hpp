#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "jnflow/distributions.hpp"
#include "jnflow/nn.hpp"
#include "jnflow/toy_data.hpp"

namespace jnflow {

/// Aligned observations, one (batch x width_j) matrix per modality.
struct MultimodalBatch {
  std::vector<Tensor> modalities;

  std::size_t batch() const { return modalities.empty() ? 0 : modalities.front().rows(); }
  std::size_t count() const { return modalities.size(); }
};

MultimodalBatch make_batch(const ToyDataset& data, std::span<const std::size_t> indices);

struct JointVaeConfig {
  std::vector<std::size_t> modality_dims{kImagePixels, kImagePixels};
  std::size_t d_z = 2;
  std::size_t head_width = 256;
  std::size_t merge_width = 512;
  std::size_t decoder_width = 256;
  /// Heads feed a 2-layer merge MLP; when false the concatenated head
  /// outputs go through a single linear map to (mu, log_var).
  bool merge_net = true;
  double beta = 1.0;
  std::vector<double> lambda{1.0, 1.0};
};

/// Joint encoder q(z | X) built from per-modality heads and a merge net;
/// one Bernoulli decoder p(x_j | z) per modality; standard normal prior.
class JointVae {
 public:
  JointVae() = default;
  JointVae(const JointVaeConfig& cfg, std::uint64_t seed);

  const JointVaeConfig& config() const { return cfg_; }
  std::size_t modalities() const { return heads_.size(); }
  std::size_t latent_dim() const { return cfg_.d_z; }

  DiagGaussian encode(Tape& tape, const MultimodalBatch& x) const;
  /// Pixel probabilities of modality j.
  Var decode(Tape& tape, std::size_t modality, Var z) const;

  void collect_params(ParamList& out);
  /// Zeroes the final merge layer: every input then maps to N(0, I).
  void zero_posterior_head();

 private:
  JointVaeConfig cfg_;
  std::vector<Mlp> heads_;
  Mlp merge_;
  std::vector<Mlp> decoders_;
};

DiagGaussian joint_encode(Tape& tape, const JointVae& model, const MultimodalBatch& x);

/// Batch-averaged terms; `loss` is the negated beta-ELBO.
struct ElboTerms {
  Var loss;
  std::vector<Var> neg_recon;  // -E[log p(x_j | z)] per modality
  Var kl;
};

/// Combines per-row reconstruction log-likelihoods and per-row KL into
/// -(sum_j lambda_j recon_j) + beta KL, averaged over the batch.
ElboTerms elbo_from_terms(const std::vector<Var>& recon_loglik, Var kl, std::span<const double> lambda, double beta);

/// Single reparameterized sample of the beta-weighted ELBO with per-modality
/// likelihood weights.
ElboTerms beta_elbo(Tape& tape, const JointVae& model, const MultimodalBatch& x, Rng& rng);

struct JointTrainConfig {
  JointVaeConfig model;
  std::size_t epochs = 10;
  std::size_t batch_size = 128;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

struct JointEpochLoss {
  std::size_t epoch = 0;
  std::vector<double> neg_recon;
  double kl = 0.0;
  double total = 0.0;
};

struct JointTrainResult {
  JointVae model;
  std::vector<JointEpochLoss> trace;
};

/// Adam on the negated beta-ELBO. Throws TrainingError naming the diverged
/// term on a non-finite loss; `on_epoch` fires after each completed epoch
/// so callers can retain the last valid state.
JointTrainResult train_joint(const ToyDataset& data, const JointTrainConfig& cfg,
                             const std::function<void(const JointEpochLoss&, const JointVae&)>& on_epoch = {});

/// Posterior means mu(X) for every sample, (n x d_z).
Tensor encode_means(const JointVae& model, const ToyDataset& data, std::size_t chunk = 500);

}  // namespace jnflow
