#include "jnflow/nn.hpp"

#include <cmath>

namespace jnflow {

Tensor normal_tensor(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& v : t.storage()) v = normal(rng);
  return t;
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::Identity: return "identity";
    case Activation::Tanh: return "tanh";
    case Activation::Relu: return "relu";
    case Activation::Sigmoid: return "sigmoid";
  }
  return "identity";
}

Activation activation_from_string(const std::string& name) {
  if (name == "identity") return Activation::Identity;
  if (name == "tanh") return Activation::Tanh;
  if (name == "relu") return Activation::Relu;
  if (name == "sigmoid") return Activation::Sigmoid;
  throw ContractViolation("unknown activation '" + name + "'");
}

DenseLayer::DenseLayer(std::size_t in, std::size_t out, Activation act)
    : weight({out, in}), bias({out}), activation(act) {}

Var DenseLayer::forward(Tape& tape, Var x) const {
  if (x.value().rank() != 2 || x.value().cols() != in_width())
    throw ContractViolation("DenseLayer: input shape " + shape_string(x.shape()) +
                            " does not match input width " + std::to_string(in_width()));
  Var w = tape.param(weight);
  if (!mask.empty()) w = ad::mul(w, tape.buffer(mask));
  Var y = ad::linear(x, w, tape.param(bias));
  switch (activation) {
    case Activation::Identity: return y;
    case Activation::Tanh: return ad::tanh(y);
    case Activation::Relu: return ad::relu(y);
    case Activation::Sigmoid: return ad::sigmoid(y);
  }
  return y;
}

Mlp::Mlp(const std::vector<std::size_t>& widths, Activation hidden, Activation output) {
  if (widths.size() < 2) throw ContractViolation("Mlp: need at least input and output widths");
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const bool last = i + 2 == widths.size();
    layers_.emplace_back(widths[i], widths[i + 1], last ? output : hidden);
  }
  in_width_ = widths.front();
  out_width_ = widths.back();
  check_chain();
}

void Mlp::check_chain() const {
  for (std::size_t i = 1; i < layers_.size(); ++i)
    if (layers_[i].in_width() != layers_[i - 1].out_width())
      throw ContractViolation("Mlp: layer widths do not chain");
}

Var Mlp::forward(Tape& tape, Var x) const {
  if (x.value().rank() != 2 || x.value().cols() != in_width_)
    throw ContractViolation("Mlp: input shape " + shape_string(x.shape()) +
                            " does not match declared width " + std::to_string(in_width_));
  for (const auto& layer : layers_) x = layer.forward(tape, x);
  return x;
}

std::vector<Var> Mlp::forward_all(Tape& tape, Var x) const {
  if (x.value().rank() != 2 || x.value().cols() != in_width_)
    throw ContractViolation("Mlp: input shape " + shape_string(x.shape()) +
                            " does not match declared width " + std::to_string(in_width_));
  std::vector<Var> out;
  for (const auto& layer : layers_) {
    x = layer.forward(tape, x);
    out.push_back(x);
  }
  return out;
}

void Mlp::collect_params(const std::string& prefix, ParamList& out) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    out.push_back({prefix + "." + std::to_string(i) + ".weight", &layers_[i].weight});
    out.push_back({prefix + "." + std::to_string(i) + ".bias", &layers_[i].bias});
  }
}

void Mlp::collect_buffers(const std::string& prefix, ParamList& out) {
  for (std::size_t i = 0; i < layers_.size(); ++i)
    if (!layers_[i].mask.empty())
      out.push_back({prefix + "." + std::to_string(i) + ".mask", &layers_[i].mask});
}

void init_params(Mlp& net, std::uint64_t seed) {
  Rng rng = make_rng(seed, 0x1417);
  for (auto& layer : net.layers()) {
    const double fan_in = static_cast<double>(layer.in_width());
    const double fan_out = static_cast<double>(layer.out_width());
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> uniform(-limit, limit);
    for (double& w : layer.weight.storage()) w = uniform(rng);
    for (double& b : layer.bias.storage()) b = 0.0;
  }
}

void adam_step(AdamState& state, const ParamList& params, const std::vector<Tensor>& grads) {
  if (grads.size() != params.size()) throw ContractViolation("adam_step: params/grads count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].shape() != params[i].tensor->shape())
      throw ContractViolation("adam_step: gradient shape mismatch for " + params[i].name);
    if (!all_finite(grads[i]))
      throw OptimizerError(params[i].name, "adam_step: non-finite gradient for " + params[i].name);
  }
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.tensor->shape());
      state.v.emplace_back(p.tensor->shape());
    }
  }
  if (state.m.size() != params.size()) throw ContractViolation("adam_step: moment count mismatch");
  ++state.t;
  const double t = static_cast<double>(state.t);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& w = params[i].tensor->storage();
    auto& m = state.m[i].storage();
    auto& v = state.v[i].storage();
    const auto& g = grads[i].storage();
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g[k];
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g[k] * g[k];
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      w[k] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

std::vector<Tensor> collect_grads(const Tape& tape, const ParamList& params) {
  std::vector<Tensor> grads;
  grads.reserve(params.size());
  for (const auto& p : params) grads.push_back(tape.grad_of(*p.tensor));
  return grads;
}

}  // namespace jnflow
