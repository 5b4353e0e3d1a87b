#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "jnflow/joint_vae.hpp"
#include "jnflow/unimodal.hpp"

namespace jnflow {

/// Class labels: 0 = full, 1 = empty.
std::vector<int> class_labels(const ToyDataset& data);

/// Pixels >= 0.5 become 1, others 0.
Tensor binarize(const Tensor& probs);

struct ClassifierConfig {
  std::vector<std::size_t> hidden{64, 16};
  std::size_t n_train = 4000;
  std::size_t n_test = 1000;
  std::size_t epochs = 5;
  std::size_t batch_size = 64;
  double lr = 1e-3;
  double min_accuracy = 0.99;
  std::uint64_t seed = 0;
};

/// One 1024 -> 64 -> 16 -> 2 network per modality. The 16-unit layer is the
/// feature space for Frechet distances.
class ToyClassifier {
 public:
  ToyClassifier() = default;
  ToyClassifier(const ClassifierConfig& cfg, std::size_t modalities, std::uint64_t seed);

  std::size_t modalities() const { return nets_.size(); }
  Var logits(Tape& tape, std::size_t modality, Var x) const;
  std::vector<int> predict(std::size_t modality, const Tensor& x) const;
  /// Softmax probability of each class, (n x 2).
  Tensor probabilities(std::size_t modality, const Tensor& x) const;
  /// Penultimate-layer activations, (n x 16).
  Tensor features(std::size_t modality, const Tensor& x) const;
  void collect_params(ParamList& out);

  std::vector<double> test_accuracy;

 private:
  std::vector<Mlp> nets_;
};

/// Trains on a freshly generated set keyed by cfg.seed and measures accuracy
/// on a second independent set; both are disjoint from the pipeline's own
/// data because they use their own seeds.
ToyClassifier train_toy_classifier(const ClassifierConfig& cfg);
/// Throws EvaluationError if any modality's test accuracy is below the bar.
void require_fit(const ToyClassifier& c, double min_accuracy);

/// Logistic regression on standardized features, trained full-batch.
struct LogisticProbe {
  std::vector<double> mean, scale, weight;
  double bias = 0.0;
  std::vector<int> predict(const Tensor& x) const;
  /// Signed decision value w.(x - mean)/scale + b, per row.
  std::vector<double> decision(const Tensor& x) const;
};
LogisticProbe fit_logistic_probe(const Tensor& x, const std::vector<int>& labels, std::size_t steps = 500,
                                 double lr = 0.05);
double accuracy(const std::vector<int>& predicted, const std::vector<int>& truth);

/// Fraction of positions where the two label lists agree.
double coherence(const std::vector<int>& a, const std::vector<int>& b);
/// Fraction of positions where every list carries the same label.
double joint_coherence(const std::vector<std::vector<int>>& labels);

struct FrechetStats {
  Tensor mean;  // (k)
  Tensor cov;   // (k x k)
};
/// Sample mean and unbiased covariance of (n x k) features, plus `jitter`
/// on the covariance diagonal.
FrechetStats frechet_stats(const Tensor& features, double jitter = 1e-6);
/// |mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a^{1/2} S_b S_a^{1/2})^{1/2}).
/// Eigenvalues above -1e-10 are clamped to zero before square roots; more
/// negative ones are a NumericError. Rounding below zero is clamped.
double frechet_distance(const FrechetStats& a, const FrechetStats& b);

struct EvalConfig {
  std::size_t n_conditional = 2000;
  std::size_t n_joint = 2000;
  std::uint64_t seed = 0;
};

struct DirectionReport {
  std::string from, to;
  double coherence = 0.0;
  double frechet = 0.0;
  std::size_t n = 0;
};

struct CoherenceReport {
  std::vector<DirectionReport> conditional;
  double joint_coherence = 0.0;
  std::vector<double> joint_frechet;  // per modality, prior samples vs real
  std::size_t n_joint = 0;
  std::vector<double> classifier_accuracy;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> checkpoints;  // role -> content hash
  nlohmann::ordered_json to_json() const;
};

/// Latent samples for modality `from` conditioned on each row of x_from,
/// drawn directly from the unimodal flow. Rows are split into fixed chunks
/// with their own generators, so the output ignores JNF_THREADS.
Tensor conditional_latents(const UnimodalSet& set, std::size_t from, const Tensor& x_from, std::uint64_t seed);
/// Decoder probabilities of modality j for each latent row.
Tensor decode_probs(const JointVae& joint, std::size_t modality, const Tensor& z);

/// Conditional coherence and Frechet distance in both directions plus
/// joint (prior) coherence on the test set.
CoherenceReport evaluate_pipeline(const JointVae& joint, const UnimodalSet& set, const ToyDataset& test,
                                  const ToyClassifier& classifier, const EvalConfig& cfg);

/// Square images as an ASCII PGM (P2) mosaic, `cols` tiles per row with a
/// one-pixel gray separator. Rows of `images` are 1024 intensities in [0, 1].
void write_pgm_grid(const std::filesystem::path& path, const Tensor& images, std::size_t cols);

}  // namespace jnflow
