#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "jnflow/nn.hpp"
#include "jnflow/toy_data.hpp"

namespace jnflow {

enum class ProjectorMethod { Dcca, Cl };
std::string to_string(ProjectorMethod m);
ProjectorMethod projector_method_from_string(const std::string& name);

inline constexpr double kDefaultCovEps = 1e-4;
inline constexpr double kDefaultTemperature = 0.1;

/// Total canonical correlation between two (batch x k) embeddings: the sum
/// of singular values, each clamped to at most 1, of
/// T = S11^{-1/2} S12 S22^{-1/2}, where the covariances come from the
/// centered batch and S11, S22 carry eps_cov on the diagonal. Requires
/// batch > k.
Var dcca_total_correlation(Var e1, Var e2, double eps_cov = kDefaultCovEps);

/// Unclamped singular values of T for a finished pair of embeddings, in
/// decreasing order.
std::vector<double> canonical_correlations(const Tensor& e1, const Tensor& e2, double eps_cov = kDefaultCovEps);

/// Symmetric InfoNCE over K aligned rows, summed over every unordered pair
/// of modalities: for each anchor row i, -log(exp(s_ii) / sum_l exp(s_il))
/// in both directions, with s = cosine similarity / tau. Norms are clamped
/// at 1e-12.
Var infonce_loss(const std::vector<Var>& embeddings, double tau = kDefaultTemperature);

struct ProjectorConfig {
  ProjectorMethod method = ProjectorMethod::Cl;
  std::size_t k = 10;
  std::vector<std::size_t> hidden{256, 256, 256};
  double eps_cov = kDefaultCovEps;
  double tau = kDefaultTemperature;
  std::size_t epochs = 5;
  std::size_t batch_size = 256;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

/// One network g_j per modality, x_j -> k-dimensional embedding.
class ProjectorSet {
 public:
  ProjectorSet() = default;
  ProjectorSet(const ProjectorConfig& cfg, std::size_t input_dim, std::size_t modalities, std::uint64_t seed);

  const ProjectorConfig& config() const { return cfg_; }
  std::size_t modalities() const { return nets_.size(); }
  std::size_t dim() const { return cfg_.k; }

  Var forward(Tape& tape, std::size_t modality, Var x) const;
  /// Embeddings computed outside any training tape.
  Tensor project(std::size_t modality, const Tensor& x) const;

  void collect_params(ParamList& out);

 private:
  ProjectorConfig cfg_;
  std::vector<Mlp> nets_;
};

/// Training objective for one batch: -(sum of pairwise total correlations)
/// for DCCA, summed pairwise InfoNCE for CL.
Var projector_loss(Tape& tape, const ProjectorSet& g, const std::vector<Tensor>& x);

struct ProjectorTrainResult {
  ProjectorSet projectors;
  std::vector<double> trace;  // mean batch loss per epoch
};

/// Adam on projector_loss with per-epoch shuffling. Batches smaller than
/// k + 1 rows are skipped for DCCA. Throws TrainingError on divergence.
ProjectorTrainResult train_projectors(const ToyDataset& data, const ProjectorConfig& cfg,
                                      const std::function<void(std::size_t, double)>& on_epoch = {});

}  // namespace jnflow
