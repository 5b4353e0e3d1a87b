#include "jnflow/hmc.hpp"

#include <algorithm>
#include <cmath>

#include "jnflow/parallel.hpp"

namespace jnflow {

GaussianExpert::GaussianExpert(std::vector<double> mu, std::vector<double> log_var)
    : mu_(std::move(mu)), log_var_(std::move(log_var)) {
  if (mu_.empty() || mu_.size() != log_var_.size())
    throw ContractViolation("GaussianExpert: mean and log-variance must be non-empty and equal-length");
}

GaussianExpert GaussianExpert::standard(std::size_t d) {
  return GaussianExpert(std::vector<double>(d, 0.0), std::vector<double>(d, 0.0));
}

Var GaussianExpert::log_density(Tape& tape, Var z) const {
  const std::size_t n = z.rows();
  Tensor mu({n, dim()}), lv({n, dim()});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t i = 0; i < dim(); ++i) {
      mu(r, i) = mu_[i];
      lv(r, i) = log_var_[i];
    }
  return gaussian_log_density({tape.constant(std::move(mu)), tape.constant(std::move(lv))}, z);
}

Tensor GaussianExpert::sample(std::size_t n, Rng& rng) const {
  Tensor z = normal_tensor({n, dim()}, rng);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t i = 0; i < dim(); ++i) z(r, i) = mu_[i] + std::exp(0.5 * log_var_[i]) * z(r, i);
  return z;
}

FlowExpert::FlowExpert(const UnimodalPosterior& posterior, const Tensor& input_row)
    : posterior_(&posterior), context_(posterior.contexts(input_row)) {
  if (context_.rows() != 1) throw ContractViolation("FlowExpert: expected a single conditioning row");
}

Var FlowExpert::log_density(Tape& tape, Var z) const {
  Var c = ad::repeat_rows(tape.constant(context_), z.rows());
  return posterior_->flow().log_density(tape, z, c);
}

Tensor FlowExpert::sample(std::size_t n, Rng& rng) const { return posterior_->flow().sample(context_, n, rng); }

SubsetPosteriorTarget::SubsetPosteriorTarget(std::vector<std::shared_ptr<const Expert>> experts)
    : experts_(std::move(experts)) {
  if (experts_.empty()) throw ContractViolation("SubsetPosteriorTarget: the subset must be non-empty");
  dim_ = experts_.front()->dim();
  for (const auto& e : experts_)
    if (!e || e->dim() != dim_) throw ContractViolation("SubsetPosteriorTarget: experts disagree on dimension");
}

Var SubsetPosteriorTarget::log_density(Tape& tape, Var z) const {
  Var total = experts_.front()->log_density(tape, z);
  for (std::size_t i = 1; i < experts_.size(); ++i) total = ad::add(total, experts_[i]->log_density(tape, z));
  if (experts_.size() > 1) {
    Var prior = gaussian_log_density(standard_normal(tape, z.rows(), dim_), z);
    total = ad::sub(total, ad::scale(prior, static_cast<double>(experts_.size() - 1)));
  }
  return total;
}

void SubsetPosteriorTarget::evaluate(const Tensor& z, Tensor& logf, Tensor& grad) const {
  Tape tape(Tape::Params::Frozen);
  Var zv = tape.leaf(z);
  Var lf = log_density(tape, zv);
  logf = lf.value();
  tape.backward(ad::sum(lf));
  grad = tape.grad(zv);
}

HmcChains init_chains(const SubsetPosteriorTarget& t, const Tensor& z0, double step_size, std::uint64_t seed,
                      std::size_t first_chain) {
  if (z0.rank() != 2 || z0.cols() != t.dim())
    throw ContractViolation("init_chains: start points must be (n x " + std::to_string(t.dim()) + ")");
  if (!(step_size > 0.0)) throw ContractViolation("init_chains: step size must be positive");
  HmcChains c;
  c.z = z0;
  t.evaluate(c.z, c.logf, c.grad);
  c.step_size.assign(z0.rows(), step_size);
  c.accepted.assign(z0.rows(), 0);
  for (std::size_t i = 0; i < z0.rows(); ++i) c.rngs.push_back(make_rng(seed, first_chain + i));
  return c;
}

namespace {

/// Rows are independent, so a row that goes non-finite never contaminates
/// the others; `strict` turns the first non-finite gradient into an error.
void integrate(const SubsetPosteriorTarget& t, Tensor& z, Tensor& v, const std::vector<double>& eps,
               std::size_t steps, Tensor& logf, Tensor& grad, bool strict) {
  const std::size_t n = z.rows(), d = z.cols();
  if (v.shape() != z.shape() || eps.size() != n) throw ContractViolation("leapfrog: chain shapes disagree");
  for (std::size_t s = 0; s < steps; ++s) {
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t i = 0; i < d; ++i) {
        v(r, i) += 0.5 * eps[r] * grad(r, i);
        z(r, i) += eps[r] * v(r, i);
      }
    t.evaluate(z, logf, grad);
    if (strict && !all_finite(grad)) throw SamplingError("leapfrog: non-finite gradient of the target log density");
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t i = 0; i < d; ++i) v(r, i) += 0.5 * eps[r] * grad(r, i);
  }
}

}  // namespace

void leapfrog(const SubsetPosteriorTarget& t, Tensor& z, Tensor& v, const std::vector<double>& eps, std::size_t steps,
              Tensor& logf, Tensor& grad) {
  integrate(t, z, v, eps, steps, logf, grad, true);
}

std::vector<double> hamiltonian(const Tensor& logf, const Tensor& v) {
  std::vector<double> h(v.rows());
  for (std::size_t r = 0; r < v.rows(); ++r) {
    double kinetic = 0.0;
    for (std::size_t i = 0; i < v.cols(); ++i) kinetic += v(r, i) * v(r, i);
    h[r] = -logf[r] + 0.5 * kinetic;
  }
  return h;
}

void hmc_transition(const SubsetPosteriorTarget& t, HmcChains& chains, std::size_t leapfrog_steps,
                    std::vector<double>* accept_prob) {
  const std::size_t n = chains.z.rows(), d = chains.z.cols();
  Tensor v({n, d});
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t i = 0; i < d; ++i) v(r, i) = normal(chains.rngs[r]);
  const std::vector<double> h0 = hamiltonian(chains.logf, v);

  Tensor z = chains.z, logf = chains.logf, grad = chains.grad;
  integrate(t, z, v, chains.step_size, leapfrog_steps, logf, grad, false);
  const std::vector<double> h1 = hamiltonian(logf, v);
  if (accept_prob) accept_prob->assign(n, 0.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  for (std::size_t r = 0; r < n; ++r) {
    // A diverged trajectory is rejected.
    bool row_ok = std::isfinite(h1[r]);
    for (std::size_t i = 0; i < d && row_ok; ++i) row_ok = std::isfinite(z(r, i)) && std::isfinite(grad(r, i));
    const double alpha = row_ok ? std::min(1.0, std::exp(h0[r] - h1[r])) : 0.0;
    if (accept_prob) (*accept_prob)[r] = alpha;
    const double u = uniform(chains.rngs[r]);
    if (u < alpha) {
      for (std::size_t i = 0; i < d; ++i) {
        chains.z(r, i) = z(r, i);
        chains.grad(r, i) = grad(r, i);
      }
      chains.logf[r] = logf[r];
      ++chains.accepted[r];
    }
  }
  ++chains.transitions;
}

namespace {

void run_chunk(const SubsetPosteriorTarget& t, const HmcConfig& cfg, HmcChains& chains) {
  const std::size_t n = chains.z.rows();
  std::vector<std::size_t> block_accepts(n, 0);
  for (std::size_t step = 0; step < cfg.n_transitions; ++step) {
    const std::vector<std::size_t> before = chains.accepted;
    hmc_transition(t, chains, cfg.leapfrog_steps);
    if (step >= cfg.warmup || cfg.warmup_block == 0) continue;
    for (std::size_t r = 0; r < n; ++r) block_accepts[r] += chains.accepted[r] - before[r];
    if ((step + 1) % cfg.warmup_block == 0) {
      for (std::size_t r = 0; r < n; ++r) {
        const double rate = static_cast<double>(block_accepts[r]) / static_cast<double>(cfg.warmup_block);
        if (rate < cfg.min_accept) chains.step_size[r] *= 0.5;
        block_accepts[r] = 0;
      }
    }
  }
}

}  // namespace

HmcResult sample_subset_posterior(const SubsetPosteriorTarget& t, const HmcConfig& cfg, std::size_t n,
                                  const Tensor* z0) {
  if (n == 0) throw ContractViolation("sample_subset_posterior: need at least one chain");
  if (!(cfg.step_size > 0.0)) throw ContractViolation("sample_subset_posterior: step size must be positive");
  Tensor start;
  if (z0) {
    if (z0->rows() != n || z0->cols() != t.dim())
      throw ContractViolation("sample_subset_posterior: start points must be (n x d)");
    start = *z0;
  } else {
    Rng rng = make_rng(cfg.seed, 0xC0FFEE);
    start = t.expert(0).sample(n, rng);
  }

  const std::size_t chunks = (n + kHmcChunk - 1) / kHmcChunk;
  std::vector<HmcChains> parts(chunks);
  parallel_for(chunks, [&](std::size_t c) {
    const std::size_t begin = c * kHmcChunk, end = std::min(n, begin + kHmcChunk);
    Tensor z({end - begin, t.dim()});
    std::copy(start.storage().begin() + static_cast<std::ptrdiff_t>(begin * t.dim()),
              start.storage().begin() + static_cast<std::ptrdiff_t>(end * t.dim()), z.storage().begin());
    parts[c] = init_chains(t, z, cfg.step_size, cfg.seed, begin);
    run_chunk(t, cfg, parts[c]);
  });

  HmcResult out;
  out.samples = Tensor({n, t.dim()});
  out.chains = n;
  std::size_t accepted = 0, row = 0;
  double eps_sum = 0.0;
  for (const auto& p : parts) {
    std::copy(p.z.storage().begin(), p.z.storage().end(),
              out.samples.storage().begin() + static_cast<std::ptrdiff_t>(row * t.dim()));
    for (std::size_t r = 0; r < p.z.rows(); ++r) {
      accepted += p.accepted[r];
      eps_sum += p.step_size[r];
      if (cfg.n_transitions > 0 &&
          static_cast<double>(p.accepted[r]) / static_cast<double>(cfg.n_transitions) < cfg.low_accept)
        ++out.low_acceptance_chains;
    }
    row += p.z.rows();
  }
  out.acceptance_rate =
      cfg.n_transitions ? static_cast<double>(accepted) / static_cast<double>(n * cfg.n_transitions) : 1.0;
  out.mean_step_size = eps_sum / static_cast<double>(n);
  return out;
}

}  // namespace jnflow
