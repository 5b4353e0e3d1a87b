#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "jnflow/unimodal.hpp"

namespace jnflow {

/// A density over z usable as a product-of-experts factor. Rows of z are
/// independent points; log_density returns one value per row.
class Expert {
 public:
  virtual ~Expert() = default;
  virtual std::size_t dim() const = 0;
  virtual Var log_density(Tape& tape, Var z) const = 0;
  /// n independent draws, used to start chains.
  virtual Tensor sample(std::size_t n, Rng& rng) const = 0;
};

/// Diagonal Gaussian with fixed parameters; the prior is the zero-mean,
/// unit-variance instance.
class GaussianExpert : public Expert {
 public:
  GaussianExpert(std::vector<double> mu, std::vector<double> log_var);
  static GaussianExpert standard(std::size_t d);
  std::size_t dim() const override { return mu_.size(); }
  Var log_density(Tape& tape, Var z) const override;
  Tensor sample(std::size_t n, Rng& rng) const override;

 private:
  std::vector<double> mu_, log_var_;
};

/// A trained unimodal posterior bound to one conditioning input row.
class FlowExpert : public Expert {
 public:
  FlowExpert(const UnimodalPosterior& posterior, const Tensor& input_row);
  std::size_t dim() const override { return posterior_->dim(); }
  Var log_density(Tape& tape, Var z) const override;
  Tensor sample(std::size_t n, Rng& rng) const override;

 private:
  const UnimodalPosterior* posterior_;
  Tensor context_;  // (1 x context_dim)
};

/// Unnormalized product-of-experts density over a modality subset:
/// sum_j log q_j(z) - (|S| - 1) log p(z), with p the standard normal prior.
class SubsetPosteriorTarget {
 public:
  explicit SubsetPosteriorTarget(std::vector<std::shared_ptr<const Expert>> experts);

  std::size_t dim() const { return dim_; }
  std::size_t subset_size() const { return experts_.size(); }
  const Expert& expert(std::size_t i) const { return *experts_.at(i); }

  Var log_density(Tape& tape, Var z) const;
  /// Per-row log density (n x 1) and its gradient with respect to z.
  void evaluate(const Tensor& z, Tensor& logf, Tensor& grad) const;

 private:
  std::vector<std::shared_ptr<const Expert>> experts_;
  std::size_t dim_ = 0;
};

struct HmcConfig {
  std::size_t n_transitions = 100;
  std::size_t leapfrog_steps = 10;
  double step_size = 0.05;
  /// The first `warmup` transitions run in blocks of `warmup_block`; a
  /// chain whose acceptance within a block is below `min_accept` halves
  /// its step size.
  std::size_t warmup = 20;
  std::size_t warmup_block = 5;
  double min_accept = 0.4;
  /// Chains whose overall acceptance rate falls below this are reported.
  double low_accept = 0.1;
  std::uint64_t seed = 0;
};

/// Batched independent chains, one per row of z.
struct HmcChains {
  Tensor z;
  Tensor logf;  // (n x 1), log density at z
  Tensor grad;  // gradient of logf at z
  std::vector<double> step_size;
  std::vector<std::size_t> accepted;
  std::size_t transitions = 0;
  std::vector<Rng> rngs;
};

/// Starts chains at z0 with per-chain generators keyed by (seed, first_chain + i).
HmcChains init_chains(const SubsetPosteriorTarget& t, const Tensor& z0, double step_size, std::uint64_t seed,
                      std::size_t first_chain = 0);

/// `steps` leapfrog iterations with per-row step sizes on the potential
/// -log f: half momentum step, full position step, half momentum step.
/// `logf` and `grad` must hold the values at the input z and are updated
/// to the final position. Throws SamplingError on a non-finite gradient.
void leapfrog(const SubsetPosteriorTarget& t, Tensor& z, Tensor& v, const std::vector<double>& eps, std::size_t steps,
              Tensor& logf, Tensor& grad);

/// H(z, v) = -log f(z) + v.v / 2, per row.
std::vector<double> hamiltonian(const Tensor& logf, const Tensor& v);

/// One Metropolis-adjusted transition per chain: v ~ N(0, I), leapfrog,
/// accept with probability min(1, exp(H_start - H_end)). Optionally
/// records each chain's acceptance probability.
void hmc_transition(const SubsetPosteriorTarget& t, HmcChains& chains, std::size_t leapfrog_steps,
                    std::vector<double>* accept_prob = nullptr);

struct HmcResult {
  Tensor samples;
  double acceptance_rate = 0.0;
  double mean_step_size = 0.0;
  std::size_t low_acceptance_chains = 0;
  std::size_t chains = 0;
};

/// Runs `n` independent chains for cfg.n_transitions and returns their
/// final states. Chains start at `z0` when given, otherwise at draws from
/// the first expert. Work is split into fixed chunks of chains, so the
/// result does not depend on JNF_THREADS.
HmcResult sample_subset_posterior(const SubsetPosteriorTarget& t, const HmcConfig& cfg, std::size_t n,
                                  const Tensor* z0 = nullptr);

inline constexpr std::size_t kHmcChunk = 256;

}  // namespace jnflow
