#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "jnflow/errors.hpp"

namespace jnflow {

using Shape = std::vector<std::size_t>;

/// Allocator with a fixed 64-byte alignment. Vectorized reductions split
/// off an unaligned head whose length depends on the buffer address, so a
/// fixed alignment keeps results bit-identical from run to run.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }
  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

using Storage = std::vector<double, AlignedAllocator<double>>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles. Rank 0 is a scalar, rank 1 a vector
/// (used for biases), rank 2 a (rows x cols) matrix.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, const std::vector<double>& data);
  Tensor(Shape shape, Storage data);

  static Tensor scalar(double v);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor identity(std::size_t n);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  /// Row count of a matrix; 1 for vectors and scalars.
  std::size_t rows() const;
  /// Column count of a matrix; length for vectors, 1 for scalars.
  std::size_t cols() const;

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  Storage& storage() { return data_; }
  const Storage& storage() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  double item() const;
  Tensor row(std::size_t r) const;
  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  Storage data_;
};

bool all_finite(const Tensor& t);

/// Rows [begin, end) of a matrix.
Tensor row_range(const Tensor& t, std::size_t begin, std::size_t end);
/// Vertical concatenation of matrices with equal column counts.
Tensor stack_rows(const std::vector<Tensor>& parts);

class Tape;

/// Handle to a node on a gradient tape.
struct Var {
  Tape* tape = nullptr;
  std::uint32_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

/// Ordered record of primitive operations. Node ids are assigned in creation
/// order, so parents always precede children and a reverse sweep is a valid
/// topological order for backward.
class Tape {
 public:
  enum class Params { Trainable, Frozen };
  using BackwardFn = std::function<void(Tape&, std::uint32_t)>;

  explicit Tape(Params mode = Params::Trainable) : mode_(mode) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Differentiable input owned by the tape.
  Var leaf(Tensor value);
  /// Non-differentiable input.
  Var constant(Tensor value);
  /// Borrowed parameter. Memoized per tensor address; differentiable only
  /// when the tape was created in Trainable mode. The tensor must outlive
  /// the tape and stay unmodified while the tape is alive.
  Var param(const Tensor& p);
  /// Borrowed, memoized, never differentiable (masks and other fixed state).
  Var buffer(const Tensor& b);

  Var record(Tensor value, std::initializer_list<Var> parents, BackwardFn fn);
  Var record(Tensor value, const std::vector<Var>& parents, BackwardFn fn);

  void backward(Var loss);

  const Tensor& value(Var v) const { return node(v.id).value(); }
  bool requires_grad(Var v) const { return node(v.id).requires_grad; }
  bool requires_grad(std::uint32_t id) const { return node(id).requires_grad; }
  /// Gradient after backward; zeros of the value's shape if unreached.
  Tensor grad(Var v) const;
  /// Gradient with respect to a borrowed parameter; zeros if it never
  /// entered the tape.
  Tensor grad_of(const Tensor& p) const;

  /// Upstream gradient of a node during backward.
  const Tensor& upstream(std::uint32_t id) const { return *node(id).grad; }
  /// Lazily allocated gradient accumulator of a node during backward.
  Tensor& accumulator(std::uint32_t id);

  std::size_t size() const { return nodes_.size(); }
  Params mode() const { return mode_; }

 private:
  struct Node {
    Tensor owned;
    const Tensor* borrowed = nullptr;
    bool requires_grad = false;
    BackwardFn backward;
    std::unique_ptr<Tensor> grad;
    const Tensor& value() const { return borrowed ? *borrowed : owned; }
  };

  const Node& node(std::uint32_t id) const;
  Node& node(std::uint32_t id);
  Var push(Node n);

  Params mode_;
  std::deque<Node> nodes_;
  std::unordered_map<const Tensor*, std::uint32_t> params_;
};

// Primitives. Shape rules:
//   matmul      (m x k) . (k x n) -> (m x n)
//   linear      x (b x in), weight (out x in), bias (out) -> x.W^T + b
//   add/sub     equal shapes, or (b x f) with a (f) vector broadcast over rows
//   mul         equal shapes
//   scale, add_scalar, unary maps: any shape
//   sum, mean   any shape -> scalar
//   sum_rows    (b x n) -> (b x 1); mean_rows likewise
//   mean_cols   (b x n) -> (n)
//   concat      (b x n_i)... -> (b x sum n_i)
//   slice       columns [begin, end) of (b x n)
//   transpose   (m x n) -> (n x m)
namespace ad {

Var matmul(Var a, Var b);
Var linear(Var x, Var weight, Var bias);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
Var negate(Var a);
Var sum(Var a);
Var mean(Var a);
Var sum_rows(Var a);
Var mean_rows(Var a);
Var mean_cols(Var a);
Var exp(Var a);
Var log(Var a);
Var sqrt(Var a);
Var square(Var a);
Var tanh(Var a);
Var relu(Var a);
Var sigmoid(Var a);
Var softplus(Var a);
Var clamp(Var a, double lo, double hi);
Var concat(const std::vector<Var>& parts);
Var slice(Var a, std::size_t begin, std::size_t end);
Var transpose(Var a);
/// Reverses column order of a (b x n) matrix.
Var reverse_cols(Var a);
/// Multiplies row i of a (b x n) matrix by s(i, 0) of a (b x 1) column.
Var scale_rows(Var a, Var s);
/// Row-wise log-sum-exp of (b x n) -> (b x 1).
Var logsumexp_rows(Var a);
/// Repeats a (1 x n) row b times.
Var repeat_rows(Var a, std::size_t b);

/// Inverse square root of the symmetric part of a square matrix via
/// eigendecomposition. Throws NumericError unless every eigenvalue is
/// positive. The backward pass uses the closed-form divided difference
/// -1 / (sqrt(l_i) sqrt(l_j) (sqrt(l_i) + sqrt(l_j))), which stays finite
/// at repeated eigenvalues.
Var sym_inv_sqrt(Var a);
/// Sum of singular values of a square matrix, each clamped to at most 1.
Var nuclear_norm_clamped(Var a);

}  // namespace ad

/// Runs backward and returns the gradient of a differentiable leaf.
Tensor gradient(Tape& tape, Var loss, Var wrt);

}  // namespace jnflow
