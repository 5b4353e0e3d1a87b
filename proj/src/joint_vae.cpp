#include "jnflow/joint_vae.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace jnflow {

MultimodalBatch make_batch(const ToyDataset& data, std::span<const std::size_t> indices) {
  MultimodalBatch b;
  b.modalities.push_back(modality_matrix(data, 0, indices));
  b.modalities.push_back(modality_matrix(data, 1, indices));
  return b;
}

JointVae::JointVae(const JointVaeConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg.modality_dims.empty()) throw ContractViolation("JointVae: no modalities");
  if (cfg.lambda.size() != cfg.modality_dims.size())
    throw ContractViolation("JointVae: need one likelihood weight per modality");
  if (!(cfg.beta >= 0.0)) throw ContractViolation("JointVae: beta must be non-negative");
  std::uint64_t stream = 0;
  for (std::size_t dim : cfg.modality_dims) {
    heads_.emplace_back(std::vector<std::size_t>{dim, cfg.head_width, cfg.head_width}, Activation::Tanh,
                        Activation::Tanh);
    init_params(heads_.back(), mix_seed(seed + ++stream));
  }
  const std::size_t concat_width = cfg.head_width * cfg.modality_dims.size();
  if (cfg.merge_net)
    merge_ = Mlp({concat_width, cfg.merge_width, 2 * cfg.d_z}, Activation::Tanh, Activation::Identity);
  else
    merge_ = Mlp({concat_width, 2 * cfg.d_z}, Activation::Identity, Activation::Identity);
  init_params(merge_, mix_seed(seed + ++stream));
  for (std::size_t dim : cfg.modality_dims) {
    decoders_.emplace_back(std::vector<std::size_t>{cfg.d_z, cfg.decoder_width, cfg.decoder_width, dim},
                           Activation::Tanh, Activation::Sigmoid);
    init_params(decoders_.back(), mix_seed(seed + ++stream));
  }
}

DiagGaussian JointVae::encode(Tape& tape, const MultimodalBatch& x) const {
  if (x.count() != heads_.size())
    throw ContractViolation("joint_encode: expected " + std::to_string(heads_.size()) + " modalities, got " +
                            std::to_string(x.count()));
  std::vector<Var> feats;
  for (std::size_t j = 0; j < heads_.size(); ++j) {
    if (x.modalities[j].empty() || x.modalities[j].rows() != x.batch())
      throw ContractViolation("joint_encode: modality " + std::to_string(j) + " is missing or misaligned");
    feats.push_back(heads_[j].forward(tape, tape.constant(x.modalities[j])));
  }
  Var out = merge_.forward(tape, ad::concat(feats));
  return {ad::slice(out, 0, cfg_.d_z), ad::slice(out, cfg_.d_z, 2 * cfg_.d_z)};
}

Var JointVae::decode(Tape& tape, std::size_t modality, Var z) const {
  return decoders_.at(modality).forward(tape, z);
}

void JointVae::collect_params(ParamList& out) {
  for (std::size_t j = 0; j < heads_.size(); ++j) heads_[j].collect_params("head" + std::to_string(j), out);
  merge_.collect_params("merge", out);
  for (std::size_t j = 0; j < decoders_.size(); ++j) decoders_[j].collect_params("decoder" + std::to_string(j), out);
}

void JointVae::zero_posterior_head() {
  auto& last = merge_.layers().back();
  std::fill(last.weight.storage().begin(), last.weight.storage().end(), 0.0);
  std::fill(last.bias.storage().begin(), last.bias.storage().end(), 0.0);
}

DiagGaussian joint_encode(Tape& tape, const JointVae& model, const MultimodalBatch& x) {
  return model.encode(tape, x);
}

ElboTerms elbo_from_terms(const std::vector<Var>& recon_loglik, Var kl, std::span<const double> lambda,
                          double beta) {
  if (recon_loglik.size() != lambda.size())
    throw ContractViolation("elbo_from_terms: one weight per reconstruction term required");
  ElboTerms t;
  Var total = ad::scale(ad::mean(kl), beta);
  for (std::size_t j = 0; j < recon_loglik.size(); ++j) {
    Var nr = ad::negate(ad::mean(recon_loglik[j]));
    t.neg_recon.push_back(nr);
    total = ad::add(total, ad::scale(nr, lambda[j]));
  }
  t.kl = ad::mean(kl);
  t.loss = total;
  return t;
}

ElboTerms beta_elbo(Tape& tape, const JointVae& model, const MultimodalBatch& x, Rng& rng) {
  DiagGaussian q = model.encode(tape, x);
  Var z = reparam_sample(q, rng);
  std::vector<Var> recon;
  for (std::size_t j = 0; j < model.modalities(); ++j)
    recon.push_back(bernoulli_log_likelihood(model.decode(tape, j, z), x.modalities[j]));
  Var kl = kl_diag_gaussians(q, standard_normal(tape, x.batch(), model.latent_dim()));
  return elbo_from_terms(recon, kl, model.config().lambda, model.config().beta);
}

JointTrainResult train_joint(const ToyDataset& data, const JointTrainConfig& cfg,
                             const std::function<void(const JointEpochLoss&, const JointVae&)>& on_epoch) {
  if (data.size() == 0) throw ContractViolation("train_joint: empty dataset");
  if (cfg.batch_size == 0) throw ContractViolation("train_joint: batch size must be positive");
  JointTrainResult result{JointVae(cfg.model, cfg.seed), {}};
  JointVae& model = result.model;
  ParamList params;
  model.collect_params(params);
  AdamState adam;
  adam.lr = cfg.lr;
  Rng rng = make_rng(cfg.seed, 1);
  std::vector<std::size_t> order = all_indices(data);
  const std::size_t m = model.modalities();

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    JointEpochLoss rec;
    rec.epoch = epoch;
    rec.neg_recon.assign(m, 0.0);
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      MultimodalBatch batch = make_batch(data, idx);
      Tape tape;
      ElboTerms terms = beta_elbo(tape, model, batch, rng);
      const double loss = terms.loss.value().item();
      if (!std::isfinite(loss)) {
        std::string term = "kl";
        for (std::size_t j = 0; j < m; ++j)
          if (!std::isfinite(terms.neg_recon[j].value().item())) term = "recon_" + std::to_string(j);
        throw TrainingError(term, "train_joint: loss diverged at epoch " + std::to_string(epoch) + " (term " +
                                      term + ")");
      }
      tape.backward(terms.loss);
      adam_step(adam, params, collect_grads(tape, params));
      const double w = static_cast<double>(idx.size());
      for (std::size_t j = 0; j < m; ++j) rec.neg_recon[j] += w * terms.neg_recon[j].value().item();
      rec.kl += w * terms.kl.value().item();
      rec.total += w * loss;
      seen += idx.size();
    }
    const double inv = 1.0 / static_cast<double>(seen);
    for (double& v : rec.neg_recon) v *= inv;
    rec.kl *= inv;
    rec.total *= inv;
    result.trace.push_back(rec);
    if (on_epoch) on_epoch(rec, model);
  }
  return result;
}

Tensor encode_means(const JointVae& model, const ToyDataset& data, std::size_t chunk) {
  const std::size_t n = data.size();
  const std::size_t d = model.latent_dim();
  Tensor out({n, d});
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t end = std::min(n, start + chunk);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    Tape tape(Tape::Params::Frozen);
    DiagGaussian q = model.encode(tape, make_batch(data, idx));
    const Tensor& mu = q.mu.value();
    std::copy(mu.storage().begin(), mu.storage().end(), out.storage().begin() + static_cast<std::ptrdiff_t>(start * d));
  }
  return out;
}

}  // namespace jnflow
