#pragma once

#include <cstdint>
#include <vector>

#include "jnflow/distributions.hpp"
#include "jnflow/nn.hpp"

namespace jnflow {

/// Connectivity masks of a MADE network over inputs [z (d) | context].
/// degrees[0] holds the input degrees (1..d for z, 0 for context columns,
/// which connect to every hidden unit); degrees[l] for l >= 1 are hidden
/// degrees. masks[l] has the shape of layer l's weight (out x in). The
/// output layer has 2d rows: d shift heads followed by d log-scale heads,
/// head i carrying degree i + 1.
struct MadeMasks {
  std::vector<Tensor> masks;
  std::vector<std::vector<int>> degrees;
};

/// Strict autoregressive masks: output i depends only on z inputs with
/// degree < i + 1. Hidden degrees cycle through 1..d-1 (all 0 when d = 1)
/// and are shuffled deterministically per seed.
MadeMasks made_build_masks(const std::vector<std::size_t>& hidden_widths, std::size_t d,
                           std::size_t context_dim, std::uint64_t seed);

/// Bound on |log-scale|: a = kLogScaleBound * tanh(raw).
inline constexpr double kLogScaleBound = 5.0;

/// One masked autoregressive affine transform. In the generative direction
/// x_i = u_i exp(a_i) + m_i with (m_i, a_i) functions of x_{<i} and the
/// context. Blocks flagged `reversed` run the same map in reversed
/// coordinate order.
class MadeBlock {
 public:
  MadeBlock() = default;
  MadeBlock(std::size_t d, std::size_t context_dim, const std::vector<std::size_t>& hidden, std::uint64_t seed,
            bool reversed);

  struct Conditioner {
    Var shift;
    Var log_scale;
  };

  /// Shift and bounded log-scale computed from x in the block's own order.
  Conditioner condition(Tape& tape, Var x_ordered, Var context) const;

  /// Density direction: u = (x - m(x)) exp(-a(x)). `log_det` receives the
  /// per-row sum of a, i.e. log|det df/du|.
  Var peel(Tape& tape, Var x, Var context, Var* log_det) const;

  /// Generative direction, solved one coordinate at a time (d passes).
  /// `log_det` (optional) receives the per-row sum of a.
  Tensor generate(const Tensor& u, const Tensor& context, Tensor* log_det = nullptr) const;

  void init(std::uint64_t seed, bool identity_head);
  void collect_params(const std::string& prefix, ParamList& out);
  void collect_buffers(const std::string& prefix, ParamList& out);

  std::size_t dim() const { return d_; }
  bool reversed() const { return reversed_; }
  const Mlp& net() const { return net_; }
  Mlp& net() { return net_; }

 private:
  std::size_t d_ = 0;
  std::size_t context_dim_ = 0;
  bool reversed_ = false;
  Mlp net_;
};

struct FlowConfig {
  std::size_t d = 2;
  std::size_t context_dim = 64;
  std::size_t n_flows = 2;
  std::vector<std::size_t> made_hidden{128, 128};
  std::vector<std::size_t> base_hidden{128};
};

/// Conditional density q(z | c): a Gaussian whose parameters come from an
/// MLP on c, pushed through `n_flows` MADE blocks. Consecutive blocks
/// alternate coordinate order (dimension reversal).
class FlowStack {
 public:
  FlowStack() = default;
  /// Glorot init everywhere; MADE output heads start at zero so the stack
  /// is the identity map until trained.
  FlowStack(const FlowConfig& cfg, std::uint64_t seed);

  const FlowConfig& config() const { return cfg_; }
  std::size_t dim() const { return cfg_.d; }

  DiagGaussian base(Tape& tape, Var context) const;

  struct Peeled {
    Var z0;
    Var log_det;  // sum over blocks of -sum(a): the density-direction term
  };
  Peeled peel(Tape& tape, Var z, Var context) const;

  /// log q(z | c) = log q0(z0 | c) - sum_k sum_i a_{k,i}, per row.
  Var log_density(Tape& tape, Var z, Var context) const;

  /// Pushes base-space points through every block. `log_det` (optional)
  /// receives the sampling-direction sum of a, per row.
  Tensor regenerate(const Tensor& z0, const Tensor& context, Tensor* log_det = nullptr) const;

  /// One sample per context row.
  Tensor sample_rows(const Tensor& contexts, Rng& rng) const;
  /// n samples for a single (1 x context_dim) context.
  Tensor sample(const Tensor& context_row, std::size_t n, Rng& rng) const;

  /// Re-initializes every parameter; `identity_heads` zeroes MADE outputs.
  void init(std::uint64_t seed, bool identity_heads);

  void collect_params(const std::string& prefix, ParamList& out);
  void collect_buffers(const std::string& prefix, ParamList& out);

  std::vector<MadeBlock>& blocks() { return blocks_; }
  const std::vector<MadeBlock>& blocks() const { return blocks_; }
  Mlp& base_net() { return base_net_; }

 private:
  void check_inputs(const Shape& z, const Shape& c) const;

  FlowConfig cfg_;
  Mlp base_net_;
  std::vector<MadeBlock> blocks_;
};

}  // namespace jnflow
