#include "jnflow/flows.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace jnflow {

namespace {

Tensor reverse_columns(const Tensor& x) {
  const std::size_t r = x.rows(), c = x.cols();
  Tensor y({r, c});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) y[i * c + j] = x[i * c + (c - 1 - j)];
  return y;
}

}  // namespace

MadeMasks made_build_masks(const std::vector<std::size_t>& hidden_widths, std::size_t d,
                           std::size_t context_dim, std::uint64_t seed) {
  if (d == 0) throw ContractViolation("made_build_masks: latent dimension must be positive");
  if (hidden_widths.empty()) throw ContractViolation("made_build_masks: need at least one hidden layer");
  for (std::size_t w : hidden_widths)
    if (w < d)
      throw ContractViolation("made_build_masks: hidden width " + std::to_string(w) +
                              " is smaller than the latent dimension " + std::to_string(d));

  MadeMasks out;
  std::vector<int> input_deg(d + context_dim, 0);
  for (std::size_t i = 0; i < d; ++i) input_deg[i] = static_cast<int>(i + 1);
  out.degrees.push_back(input_deg);

  Rng rng = make_rng(seed, 0x3ADE);
  const int max_hidden = static_cast<int>(d) - 1;
  for (std::size_t w : hidden_widths) {
    std::vector<int> deg(w, 0);
    if (max_hidden >= 1) {
      for (std::size_t k = 0; k < w; ++k) deg[k] = 1 + static_cast<int>(k % static_cast<std::size_t>(max_hidden));
      std::shuffle(deg.begin(), deg.end(), rng);
    }
    out.degrees.push_back(std::move(deg));
  }

  // Hidden layers: unit k sees input j iff deg_in(j) <= deg(k); context
  // columns (degree 0) always pass.
  for (std::size_t l = 0; l < hidden_widths.size(); ++l) {
    const auto& in_deg = out.degrees[l];
    const auto& h_deg = out.degrees[l + 1];
    Tensor mask({h_deg.size(), in_deg.size()});
    for (std::size_t k = 0; k < h_deg.size(); ++k)
      for (std::size_t j = 0; j < in_deg.size(); ++j) {
        const bool is_context = l == 0 && j >= d;
        mask(k, j) = (is_context || in_deg[j] <= h_deg[k]) ? 1.0 : 0.0;
      }
    out.masks.push_back(std::move(mask));
  }

  // Output heads: head of degree i + 1 sees hidden units with degree < i + 1.
  const auto& last = out.degrees.back();
  Tensor head({2 * d, last.size()});
  for (std::size_t r = 0; r < 2 * d; ++r) {
    const int deg = static_cast<int>(r % d) + 1;
    for (std::size_t k = 0; k < last.size(); ++k) head(r, k) = last[k] < deg ? 1.0 : 0.0;
  }
  out.masks.push_back(std::move(head));
  return out;
}

// ---------------------------------------------------------------------------
// MadeBlock

MadeBlock::MadeBlock(std::size_t d, std::size_t context_dim, const std::vector<std::size_t>& hidden,
                     std::uint64_t seed, bool reversed)
    : d_(d), context_dim_(context_dim), reversed_(reversed) {
  std::vector<std::size_t> widths{d + context_dim};
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(2 * d);
  net_ = Mlp(widths, Activation::Tanh, Activation::Identity);
  MadeMasks masks = made_build_masks(hidden, d, context_dim, seed);
  for (std::size_t l = 0; l < net_.layers().size(); ++l) net_.layers()[l].mask = std::move(masks.masks[l]);
  init(seed, true);
}

void MadeBlock::init(std::uint64_t seed, bool identity_head) {
  init_params(net_, seed);
  if (identity_head) {
    auto& head = net_.layers().back();
    std::fill(head.weight.storage().begin(), head.weight.storage().end(), 0.0);
    std::fill(head.bias.storage().begin(), head.bias.storage().end(), 0.0);
  }
}

MadeBlock::Conditioner MadeBlock::condition(Tape& tape, Var x_ordered, Var context) const {
  Var out = net_.forward(tape, ad::concat({x_ordered, context}));
  Var shift = ad::slice(out, 0, d_);
  Var log_scale = ad::scale(ad::tanh(ad::slice(out, d_, 2 * d_)), kLogScaleBound);
  return {shift, log_scale};
}

Var MadeBlock::peel(Tape& tape, Var x, Var context, Var* log_det) const {
  Var xo = reversed_ ? ad::reverse_cols(x) : x;
  Conditioner c = condition(tape, xo, context);
  Var uo = ad::mul(ad::sub(xo, c.shift), ad::exp(ad::negate(c.log_scale)));
  if (log_det) *log_det = ad::sum_rows(c.log_scale);
  return reversed_ ? ad::reverse_cols(uo) : uo;
}

Tensor MadeBlock::generate(const Tensor& u, const Tensor& context, Tensor* log_det) const {
  const std::size_t b = u.rows();
  const Tensor uo = reversed_ ? reverse_columns(u) : u;
  Tensor xo({b, d_});
  Tensor scale_sum({b, 1});
  for (std::size_t i = 0; i < d_; ++i) {
    Tape tape(Tape::Params::Frozen);
    Conditioner c = condition(tape, tape.constant(xo), tape.constant(context));
    const Tensor& m = c.shift.value();
    const Tensor& a = c.log_scale.value();
    for (std::size_t r = 0; r < b; ++r) {
      xo(r, i) = uo(r, i) * std::exp(a(r, i)) + m(r, i);
      scale_sum[r] += a(r, i);
    }
  }
  if (log_det) *log_det = std::move(scale_sum);
  return reversed_ ? reverse_columns(xo) : xo;
}

void MadeBlock::collect_params(const std::string& prefix, ParamList& out) { net_.collect_params(prefix, out); }
void MadeBlock::collect_buffers(const std::string& prefix, ParamList& out) { net_.collect_buffers(prefix, out); }

// ---------------------------------------------------------------------------
// FlowStack

FlowStack::FlowStack(const FlowConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg.d == 0 || cfg.context_dim == 0)
    throw ContractViolation("FlowStack: latent and context dimensions must be positive");
  std::vector<std::size_t> widths{cfg.context_dim};
  widths.insert(widths.end(), cfg.base_hidden.begin(), cfg.base_hidden.end());
  widths.push_back(2 * cfg.d);
  base_net_ = Mlp(widths, Activation::Tanh, Activation::Identity);
  for (std::size_t k = 0; k < cfg.n_flows; ++k)
    blocks_.emplace_back(cfg.d, cfg.context_dim, cfg.made_hidden, mix_seed(seed + 1 + k), k % 2 == 1);
  init(seed, true);
}

void FlowStack::init(std::uint64_t seed, bool identity_heads) {
  init_params(base_net_, seed);
  for (std::size_t k = 0; k < blocks_.size(); ++k) blocks_[k].init(mix_seed(seed + 1 + k), identity_heads);
}

void FlowStack::check_inputs(const Shape& z, const Shape& c) const {
  if (z.size() != 2 || z[1] != cfg_.d)
    throw ContractViolation("FlowStack: z shape " + shape_string(z) + " does not match dimension " +
                            std::to_string(cfg_.d));
  if (c.size() != 2 || c[1] != cfg_.context_dim || c[0] != z[0])
    throw ContractViolation("FlowStack: context shape " + shape_string(c) + " does not match (" +
                            std::to_string(z[0]) + "x" + std::to_string(cfg_.context_dim) + ")");
}

DiagGaussian FlowStack::base(Tape& tape, Var context) const {
  Var out = base_net_.forward(tape, context);
  return {ad::slice(out, 0, cfg_.d), ad::slice(out, cfg_.d, 2 * cfg_.d)};
}

FlowStack::Peeled FlowStack::peel(Tape& tape, Var z, Var context) const {
  check_inputs(z.shape(), context.shape());
  Var x = z;
  Var total = tape.constant(Tensor({z.rows(), 1}));
  for (std::size_t k = blocks_.size(); k-- > 0;) {
    Var ld;
    x = blocks_[k].peel(tape, x, context, &ld);
    total = ad::sub(total, ld);
  }
  return {x, total};
}

Var FlowStack::log_density(Tape& tape, Var z, Var context) const {
  Peeled p = peel(tape, z, context);
  return ad::add(gaussian_log_density(base(tape, context), p.z0), p.log_det);
}

Tensor FlowStack::regenerate(const Tensor& z0, const Tensor& context, Tensor* log_det) const {
  check_inputs(z0.shape(), context.shape());
  Tensor x = z0;
  Tensor total({z0.rows(), 1});
  for (const auto& block : blocks_) {
    Tensor ld;
    x = block.generate(x, context, &ld);
    for (std::size_t r = 0; r < total.size(); ++r) total[r] += ld[r];
  }
  if (log_det) *log_det = std::move(total);
  return x;
}

Tensor FlowStack::sample_rows(const Tensor& contexts, Rng& rng) const {
  if (contexts.rank() != 2 || contexts.cols() != cfg_.context_dim)
    throw ContractViolation("FlowStack::sample_rows: context shape " + shape_string(contexts.shape()));
  Tape tape(Tape::Params::Frozen);
  DiagGaussian g = base(tape, tape.constant(contexts));
  const Tensor eps = normal_tensor({contexts.rows(), cfg_.d}, rng);
  Tensor z0 = g.mu.value();
  const Tensor& lv = g.log_var.value();
  for (std::size_t i = 0; i < z0.size(); ++i) z0[i] += std::exp(0.5 * lv[i]) * eps[i];
  return regenerate(z0, contexts);
}

Tensor FlowStack::sample(const Tensor& context_row, std::size_t n, Rng& rng) const {
  if (context_row.rank() != 2 || context_row.rows() != 1)
    throw ContractViolation("FlowStack::sample: expected a (1 x context_dim) context");
  Tensor contexts({n, context_row.cols()});
  for (std::size_t i = 0; i < n; ++i)
    std::copy(context_row.storage().begin(), context_row.storage().end(),
              contexts.storage().begin() + static_cast<std::ptrdiff_t>(i * context_row.cols()));
  return sample_rows(contexts, rng);
}

void FlowStack::collect_params(const std::string& prefix, ParamList& out) {
  base_net_.collect_params(prefix + ".base", out);
  for (std::size_t k = 0; k < blocks_.size(); ++k) blocks_[k].collect_params(prefix + ".made" + std::to_string(k), out);
}

void FlowStack::collect_buffers(const std::string& prefix, ParamList& out) {
  for (std::size_t k = 0; k < blocks_.size(); ++k)
    blocks_[k].collect_buffers(prefix + ".made" + std::to_string(k), out);
}

}  // namespace jnflow
