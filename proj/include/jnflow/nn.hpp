#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "jnflow/rng.hpp"
#include "jnflow/tensor.hpp"

namespace jnflow {

enum class Activation { Identity, Tanh, Relu, Sigmoid };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& name);

/// y = act(x W^T + b). An optional 0/1 mask of the weight's shape is applied
/// elementwise before use (masked layers of MADE).
struct DenseLayer {
  Tensor weight;  // (out x in)
  Tensor bias;    // (out)
  Activation activation = Activation::Identity;
  Tensor mask;    // empty, or (out x in)

  DenseLayer() = default;
  DenseLayer(std::size_t in, std::size_t out, Activation act);

  std::size_t in_width() const { return weight.cols(); }
  std::size_t out_width() const { return weight.rows(); }
  Var forward(Tape& tape, Var x) const;
};

/// A named, mutable parameter owned by some model.
struct ParamRef {
  std::string name;
  Tensor* tensor;
};
using ParamList = std::vector<ParamRef>;

class Mlp {
 public:
  Mlp() = default;
  /// widths = {in, h1, ..., out}; hidden layers use `hidden`, the last uses
  /// `output`.
  Mlp(const std::vector<std::size_t>& widths, Activation hidden, Activation output);

  std::size_t in_width() const { return in_width_; }
  std::size_t out_width() const { return out_width_; }
  std::vector<DenseLayer>& layers() { return layers_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }

  Var forward(Tape& tape, Var x) const;
  /// Activations of every layer, in order; the last entry is the output.
  std::vector<Var> forward_all(Tape& tape, Var x) const;

  void collect_params(const std::string& prefix, ParamList& out);
  /// Non-trainable state (masks) in addition to parameters.
  void collect_buffers(const std::string& prefix, ParamList& out);

 private:
  void check_chain() const;

  std::vector<DenseLayer> layers_;
  std::size_t in_width_ = 0;
  std::size_t out_width_ = 0;
};

/// Glorot-uniform weights, zero biases, deterministic per seed.
void init_params(Mlp& net, std::uint64_t seed);

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t t = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
};

/// One bias-corrected Adam update of `params` in place. Moments are created
/// on the first call. Throws OptimizerError naming the first parameter whose
/// gradient is non-finite; parameters are left untouched in that case.
void adam_step(AdamState& state, const ParamList& params, const std::vector<Tensor>& grads);

/// Gathers the gradients of `params` from a tape after backward.
std::vector<Tensor> collect_grads(const Tape& tape, const ParamList& params);

}  // namespace jnflow
