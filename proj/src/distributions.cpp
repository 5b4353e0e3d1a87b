#include "jnflow/distributions.hpp"

#include <cmath>
#include <numbers>

namespace jnflow {

namespace {

void require_same(const Shape& a, const Shape& b, const char* op) {
  if (a != b)
    throw ContractViolation(std::string(op) + ": shapes " + shape_string(a) + " and " + shape_string(b) +
                            " differ");
}

}  // namespace

DiagGaussian standard_normal(Tape& tape, std::size_t batch, std::size_t d) {
  return {tape.constant(Tensor({batch, d})), tape.constant(Tensor({batch, d}))};
}

Var gaussian_log_density(const DiagGaussian& g, Var z) {
  require_same(g.mu.shape(), g.log_var.shape(), "gaussian_log_density");
  require_same(g.mu.shape(), z.shape(), "gaussian_log_density");
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  // -(z - mu)^2 / 2 * exp(-log_var) - log_var / 2 - log(2 pi) / 2
  Var diff = ad::sub(z, g.mu);
  Var quad = ad::mul(ad::square(diff), ad::exp(ad::negate(g.log_var)));
  Var per_dim = ad::add_scalar(ad::negate(ad::add(ad::scale(quad, 0.5), ad::scale(g.log_var, 0.5))),
                               -half_log_2pi);
  return ad::sum_rows(per_dim);
}

Var reparam_sample(const DiagGaussian& g, Rng& rng) {
  require_same(g.mu.shape(), g.log_var.shape(), "reparam_sample");
  Tape& tape = *g.mu.tape;
  Var eps = tape.constant(normal_tensor(g.mu.shape(), rng));
  return ad::add(g.mu, ad::mul(ad::exp(ad::scale(g.log_var, 0.5)), eps));
}

Var kl_diag_gaussians(const DiagGaussian& a, const DiagGaussian& b) {
  require_same(a.mu.shape(), a.log_var.shape(), "kl_diag_gaussians");
  require_same(b.mu.shape(), b.log_var.shape(), "kl_diag_gaussians");
  require_same(a.mu.shape(), b.mu.shape(), "kl_diag_gaussians");
  // 0.5 * [lv_b - lv_a + (exp(lv_a) + (mu_a - mu_b)^2) / exp(lv_b) - 1]
  Var inv_var_b = ad::exp(ad::negate(b.log_var));
  Var spread = ad::add(ad::exp(a.log_var), ad::square(ad::sub(a.mu, b.mu)));
  Var per_dim = ad::add_scalar(ad::add(ad::sub(b.log_var, a.log_var), ad::mul(spread, inv_var_b)), -1.0);
  return ad::scale(ad::sum_rows(per_dim), 0.5);
}

Var bernoulli_log_likelihood(Var probs, const Tensor& x) {
  require_same(probs.shape(), x.shape(), "bernoulli_log_likelihood");
  for (double v : x.storage())
    if (v != 0.0 && v != 1.0)
      throw ContractViolation("bernoulli_log_likelihood: observation " + std::to_string(v) + " is not binary");
  Tape& tape = *probs.tape;
  Var p = ad::clamp(probs, kBernoulliClamp, 1.0 - kBernoulliClamp);
  Tensor complement = x;
  for (double& v : complement.storage()) v = 1.0 - v;
  Var on = ad::mul(tape.constant(x), ad::log(p));
  Var off = ad::mul(tape.constant(std::move(complement)), ad::log(ad::add_scalar(ad::negate(p), 1.0)));
  return ad::sum_rows(ad::add(on, off));
}

}  // namespace jnflow
