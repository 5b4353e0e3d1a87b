#pragma once

#include "jnflow/rng.hpp"
#include "jnflow/tensor.hpp"

namespace jnflow {

/// Diagonal Gaussian parameterized by mean and log-variance, both
/// (batch x d) nodes on the same tape. Per-sample quantities returned by the
/// functions below are (batch x 1) columns.
struct DiagGaussian {
  Var mu;
  Var log_var;

  std::size_t dim() const { return mu.cols(); }
  std::size_t batch() const { return mu.rows(); }
};

/// N(0, I) of the given shape, placed on `tape` as constants.
DiagGaussian standard_normal(Tape& tape, std::size_t batch, std::size_t d);

/// sum_i [-log(2 pi)/2 - log_var_i/2 - (z_i - mu_i)^2 / (2 exp(log_var_i))]
Var gaussian_log_density(const DiagGaussian& g, Var z);

/// z = mu + exp(log_var / 2) * eps with eps ~ N(0, I) drawn from `rng`.
Var reparam_sample(const DiagGaussian& g, Rng& rng);

/// Closed-form KL(a || b), per row.
Var kl_diag_gaussians(const DiagGaussian& a, const DiagGaussian& b);

inline constexpr double kBernoulliClamp = 1e-7;

/// sum_pixels [x log p + (1 - x) log(1 - p)] with p clamped to
/// [1e-7, 1 - 1e-7]. `x` must be binary.
Var bernoulli_log_likelihood(Var probs, const Tensor& x);

}  // namespace jnflow
