#include "jnflow/unimodal.hpp"

#include <algorithm>
#include <cmath>

namespace jnflow {

std::string to_string(ContextMode m) {
  switch (m) {
    case ContextMode::Raw: return "raw";
    case ContextMode::SharedDcca: return "shared-dcca";
    case ContextMode::SharedCl: return "shared-cl";
  }
  return "raw";
}

ContextMode context_mode_from_string(const std::string& name) {
  if (name == "raw") return ContextMode::Raw;
  if (name == "shared-dcca") return ContextMode::SharedDcca;
  if (name == "shared-cl") return ContextMode::SharedCl;
  throw ConfigError("unknown stage-2 mode '" + name + "' (expected raw, shared-dcca or shared-cl)");
}

bool is_shared(ContextMode m) { return m != ContextMode::Raw; }

UnimodalPosterior::UnimodalPosterior(std::size_t modality, std::size_t input_dim, std::size_t latent_dim,
                                     const Stage2Config& cfg, std::uint64_t seed)
    : modality_(modality) {
  std::vector<std::size_t> widths{input_dim};
  const auto& hidden = is_shared(cfg.mode) ? cfg.shared_context_hidden : cfg.raw_context_hidden;
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(cfg.context_dim);
  context_net_ = Mlp(widths, Activation::Tanh, Activation::Tanh);
  init_params(context_net_, mix_seed(seed + 7));
  FlowConfig fc;
  fc.d = latent_dim;
  fc.context_dim = cfg.context_dim;
  fc.n_flows = cfg.n_flows;
  fc.made_hidden = cfg.made_hidden;
  fc.base_hidden = cfg.base_hidden;
  flow_ = FlowStack(fc, mix_seed(seed + 11));
}

Var UnimodalPosterior::context(Tape& tape, Var input) const { return context_net_.forward(tape, input); }

Tensor UnimodalPosterior::contexts(const Tensor& inputs) const {
  Tape tape(Tape::Params::Frozen);
  return context(tape, tape.constant(inputs)).value();
}

Var UnimodalPosterior::log_density(Tape& tape, Var z, Var input) const {
  return flow_.log_density(tape, z, context(tape, input));
}

Tensor UnimodalPosterior::sample_rows(const Tensor& inputs, Rng& rng) const {
  return flow_.sample_rows(contexts(inputs), rng);
}

void UnimodalPosterior::collect_params(const std::string& prefix, ParamList& out) {
  context_net_.collect_params(prefix + ".context", out);
  flow_.collect_params(prefix + ".flow", out);
}

void UnimodalPosterior::collect_buffers(const std::string& prefix, ParamList& out) {
  flow_.collect_buffers(prefix + ".flow", out);
}

Tensor UnimodalSet::conditioning(std::size_t modality, const Tensor& x) const {
  if (!is_shared(config.mode)) return x;
  if (!has_projectors) throw ConfigError("shared-mode posteriors need trained projectors");
  return projectors.project(modality, x);
}

void UnimodalSet::collect_params(ParamList& out) {
  for (auto& p : posteriors) p.collect_params("uni" + std::to_string(p.modality()), out);
}

void UnimodalSet::collect_buffers(ParamList& out) {
  for (auto& p : posteriors) p.collect_buffers("uni" + std::to_string(p.modality()), out);
}

UnimodalSet make_unimodal_set(const Stage2Config& cfg, std::size_t latent_dim, const ProjectorSet* projectors) {
  UnimodalSet set;
  set.config = cfg;
  const bool shared = is_shared(cfg.mode);
  if (shared) {
    if (!projectors) throw ConfigError("stage-2 mode " + to_string(cfg.mode) + " requires trained projectors");
    const ProjectorMethod want = cfg.mode == ContextMode::SharedDcca ? ProjectorMethod::Dcca : ProjectorMethod::Cl;
    if (projectors->config().method != want)
      throw ConfigError("stage-2 mode " + to_string(cfg.mode) + " got " + to_string(projectors->config().method) +
                        " projectors");
    set.projectors = *projectors;
    set.has_projectors = true;
  }
  const std::size_t input_dim = shared ? projectors->dim() : static_cast<std::size_t>(kImagePixels);
  for (std::size_t j = 0; j < 2; ++j)
    set.posteriors.emplace_back(j, input_dim, latent_dim, cfg, mix_seed(cfg.seed + 1000 * (j + 1)));
  return set;
}

Var luni_from_samples(Tape& tape, const UnimodalSet& set, const Tensor& z, const std::vector<Tensor>& inputs) {
  if (inputs.size() != set.modalities())
    throw ContractViolation("luni: expected " + std::to_string(set.modalities()) + " conditioning inputs, got " +
                            std::to_string(inputs.size()));
  Var zc = tape.constant(z);
  Var total;
  for (std::size_t j = 0; j < set.modalities(); ++j) {
    if (inputs[j].rows() != z.rows())
      throw ContractViolation("luni: conditioning input " + std::to_string(j) + " is not aligned with z");
    Var lq = set.posteriors[j].log_density(tape, zc, tape.constant(inputs[j]));
    total = j == 0 ? lq : ad::add(total, lq);
  }
  return ad::negate(ad::mean(total));
}

Tensor draw_joint_samples(const Tensor& mu, const Tensor& log_var, std::size_t samples, Rng& rng) {
  if (mu.shape() != log_var.shape() || mu.rank() != 2)
    throw ContractViolation("draw_joint_samples: mean and log-variance must be equal-shaped matrices");
  if (samples == 0) throw ContractViolation("draw_joint_samples: need at least one sample per row");
  const std::size_t b = mu.rows(), d = mu.cols();
  const Tensor eps = normal_tensor({b * samples, d}, rng);
  Tensor z({b * samples, d});
  for (std::size_t r = 0; r < b; ++r)
    for (std::size_t s = 0; s < samples; ++s)
      for (std::size_t i = 0; i < d; ++i) {
        const std::size_t o = (r * samples + s) * d + i;
        z[o] = mu(r, i) + std::exp(0.5 * log_var(r, i)) * eps[o];
      }
  return z;
}

namespace {

Tensor repeat_each_row(const Tensor& x, std::size_t times) {
  if (times == 1) return x;
  const std::size_t c = x.cols();
  Tensor out({x.rows() * times, c});
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t s = 0; s < times; ++s)
      std::copy_n(x.storage().begin() + static_cast<std::ptrdiff_t>(r * c), c,
                  out.storage().begin() + static_cast<std::ptrdiff_t>((r * times + s) * c));
  return out;
}

}  // namespace

Var luni_loss(Tape& tape, const DiagGaussian& joint_posterior, const UnimodalSet& set,
              const std::vector<Tensor>& inputs, std::size_t samples, Rng& rng) {
  if (joint_posterior.mu.tape->requires_grad(joint_posterior.mu) ||
      joint_posterior.log_var.tape->requires_grad(joint_posterior.log_var))
    throw ContractViolation("luni_loss: the joint posterior must be frozen");
  const Tensor z = draw_joint_samples(joint_posterior.mu.value(), joint_posterior.log_var.value(), samples, rng);
  std::vector<Tensor> repeated;
  for (const auto& in : inputs) repeated.push_back(repeat_each_row(in, samples));
  return luni_from_samples(tape, set, z, repeated);
}

Var luni_loss(Tape& tape, const JointVae& joint, const UnimodalSet& set, const MultimodalBatch& x, Rng& rng) {
  Tape frozen(Tape::Params::Frozen);
  DiagGaussian q = joint.encode(frozen, x);
  std::vector<Tensor> inputs;
  for (std::size_t j = 0; j < set.modalities(); ++j) inputs.push_back(set.conditioning(j, x.modalities[j]));
  return luni_loss(tape, q, set, inputs, set.config.samples_per_datapoint, rng);
}

Stage2Result train_unimodal(const JointVae& joint, const ToyDataset& data, const Stage2Config& cfg,
                            const ProjectorSet* projectors,
                            const std::function<void(const Stage2EpochLoss&)>& on_epoch) {
  if (data.size() == 0) throw ContractViolation("train_unimodal: empty dataset");
  if (cfg.batch_size == 0) throw ContractViolation("train_unimodal: batch size must be positive");
  Stage2Result result{make_unimodal_set(cfg, joint.latent_dim(), projectors), {}};
  UnimodalSet& set = result.set;
  ParamList params;
  set.collect_params(params);
  AdamState adam;
  adam.lr = cfg.lr;
  Rng rng = make_rng(cfg.seed, 3);
  std::vector<std::size_t> order = all_indices(data);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    Stage2EpochLoss rec;
    rec.epoch = epoch;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      MultimodalBatch batch = make_batch(data, idx);
      Tape tape;
      Var loss = luni_loss(tape, joint, set, batch, rng);
      const double v = loss.value().item();
      if (!std::isfinite(v))
        throw TrainingError("luni", "train_unimodal: loss diverged at epoch " + std::to_string(epoch));
      tape.backward(loss);
      adam_step(adam, params, collect_grads(tape, params));
      rec.total += v * static_cast<double>(idx.size());
      seen += idx.size();
    }
    rec.total /= static_cast<double>(seen);
    result.trace.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

}  // namespace jnflow
