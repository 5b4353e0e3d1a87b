#include "jnflow/tensor.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace jnflow {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

MapC view(const Tensor& t) {
  return MapC(t.data().data(), static_cast<Eigen::Index>(t.rows()),
              static_cast<Eigen::Index>(t.cols()));
}
Map view(Tensor& t) {
  return Map(t.data().data(), static_cast<Eigen::Index>(t.rows()),
             static_cast<Eigen::Index>(t.cols()));
}

void require(bool cond, const std::string& what) {
  if (!cond) throw ContractViolation(what);
}

void require_matrix(const Tensor& t, const char* op) {
  require(t.rank() == 2, std::string(op) + ": expected a matrix, got shape " +
                             shape_string(t.shape()));
}

Tape& same_tape(Var a, Var b, const char* op) {
  require(a.tape != nullptr && a.tape == b.tape,
          std::string(op) + ": operands live on different tapes");
  return *a.tape;
}

/// Elementwise unary map; `dydx(x, y)` gives the local derivative.
template <class F, class D>
Var unary(Var a, F f, D dydx) {
  Tape& tape = *a.tape;
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  const std::uint32_t pa = a.id;
  return tape.record(std::move(y), {a}, [pa, dydx](Tape& t, std::uint32_t self) {
    const Tensor& g = t.upstream(self);
    const Tensor& xv = t.value(Var{&t, pa});
    const Tensor& yv = t.value(Var{&t, self});
    Tensor& acc = t.accumulator(pa);
    for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i] * dydx(xv[i], yv[i]);
  });
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

/// Shared implementation for add/sub with optional row-vector broadcast.
Var add_like(Var a, Var b, double sign, const char* op) {
  Tape& tape = same_tape(a, b, op);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const bool broadcast = av.shape() != bv.shape();
  if (broadcast) {
    require(av.rank() == 2 && bv.rank() == 1 && bv.size() == av.cols(),
            std::string(op) + ": shapes " + shape_string(av.shape()) + " and " +
                shape_string(bv.shape()) + " do not conform");
  }
  Tensor y = av;
  if (broadcast) {
    const std::size_t f = av.cols();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += sign * bv[i % f];
  } else {
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += sign * bv[i];
  }
  const std::uint32_t pa = a.id, pb = b.id;
  return tape.record(std::move(y), {a, b},
                     [pa, pb, sign, broadcast](Tape& t, std::uint32_t self) {
                       const Tensor& g = t.upstream(self);
                       if (t.requires_grad(pa)) {
                         Tensor& acc = t.accumulator(pa);
                         for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
                       }
                       if (t.requires_grad(pb)) {
                         Tensor& acc = t.accumulator(pb);
                         if (broadcast) {
                           const std::size_t f = acc.size();
                           for (std::size_t i = 0; i < g.size(); ++i) acc[i % f] += sign * g[i];
                         } else {
                           for (std::size_t i = 0; i < g.size(); ++i) acc[i] += sign * g[i];
                         }
                       }
                     });
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ')';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, const std::vector<double>& data)
    : Tensor(std::move(shape), Storage(data.begin(), data.end())) {}

Tensor::Tensor(Shape shape, Storage data) : shape_(std::move(shape)), data_(std::move(data)) {
  require(data_.size() == shape_size(shape_),
          "Tensor: data length " + std::to_string(data_.size()) + " does not match shape " +
              shape_string(shape_));
}

Tensor Tensor::scalar(double v) { return Tensor({}, std::vector<double>{v}); }

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    require(row.size() == c, "Tensor::matrix: ragged rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(data));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

std::size_t Tensor::rows() const { return rank() == 2 ? shape_[0] : 1; }

std::size_t Tensor::cols() const {
  if (rank() == 2) return shape_[1];
  if (rank() == 1) return shape_[0];
  return 1;
}

double Tensor::item() const {
  require(data_.size() == 1, "Tensor::item: tensor of shape " + shape_string(shape_) +
                                 " is not a scalar");
  return data_[0];
}

Tensor Tensor::row(std::size_t r) const {
  require(rank() == 2 && r < rows(), "Tensor::row: index out of range");
  const std::size_t c = cols();
  return Tensor({1, c}, Storage(data_.begin() + static_cast<std::ptrdiff_t>(r * c),
                                            data_.begin() + static_cast<std::ptrdiff_t>((r + 1) * c)));
}

Tensor row_range(const Tensor& t, std::size_t begin, std::size_t end) {
  require(t.rank() == 2 && begin <= end && end <= t.rows(), "row_range: rows [" + std::to_string(begin) + ", " +
                                                                std::to_string(end) + ") out of range");
  const std::size_t c = t.cols();
  return Tensor({end - begin, c}, std::vector<double>(t.storage().begin() + static_cast<std::ptrdiff_t>(begin * c),
                                                      t.storage().begin() + static_cast<std::ptrdiff_t>(end * c)));
}

Tensor stack_rows(const std::vector<Tensor>& parts) {
  require(!parts.empty(), "stack_rows: nothing to stack");
  const std::size_t c = parts.front().cols();
  std::size_t r = 0;
  std::vector<double> data;
  for (const auto& p : parts) {
    require(p.rank() == 2 && p.cols() == c, "stack_rows: column counts differ");
    r += p.rows();
    data.insert(data.end(), p.storage().begin(), p.storage().end());
  }
  return Tensor({r, c}, std::move(data));
}

bool all_finite(const Tensor& t) {
  return std::all_of(t.storage().begin(), t.storage().end(), [](double v) { return std::isfinite(v); });
}

const Tensor& Var::value() const { return tape->value(*this); }

// ---------------------------------------------------------------------------
// Tape

const Tape::Node& Tape::node(std::uint32_t id) const {
  require(id < nodes_.size(), "Tape: unknown node id");
  return nodes_[id];
}

Tape::Node& Tape::node(std::uint32_t id) {
  require(id < nodes_.size(), "Tape: unknown node id");
  return nodes_[id];
}

Var Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::leaf(Tensor value) {
  Node n;
  n.owned = std::move(value);
  n.requires_grad = true;
  return push(std::move(n));
}

Var Tape::constant(Tensor value) {
  Node n;
  n.owned = std::move(value);
  return push(std::move(n));
}

Var Tape::param(const Tensor& p) {
  if (auto it = params_.find(&p); it != params_.end()) return Var{this, it->second};
  Node n;
  n.borrowed = &p;
  n.requires_grad = mode_ == Params::Trainable;
  Var v = push(std::move(n));
  params_.emplace(&p, v.id);
  return v;
}

Var Tape::buffer(const Tensor& b) {
  if (auto it = params_.find(&b); it != params_.end()) return Var{this, it->second};
  Node n;
  n.borrowed = &b;
  Var v = push(std::move(n));
  params_.emplace(&b, v.id);
  return v;
}

Var Tape::record(Tensor value, std::initializer_list<Var> parents, BackwardFn fn) {
  Node n;
  n.owned = std::move(value);
  for (Var p : parents) {
    require(p.tape == this, "Tape::record: parent from another tape");
    n.requires_grad = n.requires_grad || node(p.id).requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(fn);
  return push(std::move(n));
}

Var Tape::record(Tensor value, const std::vector<Var>& parents, BackwardFn fn) {
  Node n;
  n.owned = std::move(value);
  for (Var p : parents) {
    require(p.tape == this, "Tape::record: parent from another tape");
    n.requires_grad = n.requires_grad || node(p.id).requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(fn);
  return push(std::move(n));
}

Tensor& Tape::accumulator(std::uint32_t id) {
  Node& n = node(id);
  if (!n.grad) n.grad = std::make_unique<Tensor>(n.value().shape());
  return *n.grad;
}

void Tape::backward(Var loss) {
  require(loss.tape == this, "backward: loss lives on another tape");
  const Tensor& lv = value(loss);
  require(lv.size() == 1, "backward: loss must be a scalar, got shape " + shape_string(lv.shape()));
  for (auto& n : nodes_) n.grad.reset();
  accumulator(loss.id)[0] = 1.0;
  for (std::uint32_t id = loss.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (n.grad && n.backward) n.backward(*this, id);
  }
}

Tensor Tape::grad(Var v) const {
  const Node& n = node(v.id);
  if (n.grad) return *n.grad;
  return Tensor(n.value().shape());
}

Tensor Tape::grad_of(const Tensor& p) const {
  if (auto it = params_.find(&p); it != params_.end()) return grad(Var{const_cast<Tape*>(this), it->second});
  return Tensor(p.shape());
}

Tensor gradient(Tape& tape, Var loss, Var wrt) {
  tape.backward(loss);
  return tape.grad(wrt);
}

// ---------------------------------------------------------------------------
// Primitives

namespace ad {

Var matmul(Var a, Var b) {
  Tape& tape = same_tape(a, b, "matmul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_matrix(av, "matmul");
  require_matrix(bv, "matmul");
  require(av.cols() == bv.rows(), "matmul: inner dimensions differ: " + shape_string(av.shape()) +
                                      " . " + shape_string(bv.shape()));
  Tensor y({av.rows(), bv.cols()});
  view(y).noalias() = view(av) * view(bv);
  const std::uint32_t pa = a.id, pb = b.id;
  return tape.record(std::move(y), {a, b}, [pa, pb](Tape& t, std::uint32_t self) {
    const auto g = view(t.upstream(self));
    const auto A = view(t.value(Var{&t, pa}));
    const auto B = view(t.value(Var{&t, pb}));
    if (t.requires_grad(pa)) view(t.accumulator(pa)).noalias() += g * B.transpose();
    if (t.requires_grad(pb)) view(t.accumulator(pb)).noalias() += A.transpose() * g;
  });
}

Var linear(Var x, Var weight, Var bias) {
  Tape& tape = same_tape(x, weight, "linear");
  same_tape(x, bias, "linear");
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  const Tensor& bv = bias.value();
  require_matrix(xv, "linear");
  require_matrix(wv, "linear");
  require(xv.cols() == wv.cols(), "linear: input width " + std::to_string(xv.cols()) +
                                      " does not match weight " + shape_string(wv.shape()));
  require(bv.rank() == 1 && bv.size() == wv.rows(), "linear: bias shape does not match weight");
  Tensor y({xv.rows(), wv.rows()});
  auto Y = view(y);
  Y.noalias() = view(xv) * view(wv).transpose();
  const Eigen::Map<const Eigen::RowVectorXd> bias_row(bv.data().data(), static_cast<Eigen::Index>(bv.size()));
  Y.rowwise() += bias_row;
  const std::uint32_t px = x.id, pw = weight.id, pb = bias.id;
  return tape.record(std::move(y), {x, weight, bias}, [px, pw, pb](Tape& t, std::uint32_t self) {
    const auto g = view(t.upstream(self));
    if (t.requires_grad(px)) view(t.accumulator(px)).noalias() += g * view(t.value(Var{&t, pw}));
    if (t.requires_grad(pw))
      view(t.accumulator(pw)).noalias() += g.transpose() * view(t.value(Var{&t, px}));
    if (t.requires_grad(pb)) {
      Tensor& acc = t.accumulator(pb);
      Eigen::Map<Eigen::RowVectorXd>(acc.data().data(), static_cast<Eigen::Index>(acc.size())) +=
          g.colwise().sum();
    }
  });
}

Var add(Var a, Var b) { return add_like(a, b, 1.0, "add"); }
Var sub(Var a, Var b) { return add_like(a, b, -1.0, "sub"); }

Var mul(Var a, Var b) {
  Tape& tape = same_tape(a, b, "mul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require(av.shape() == bv.shape(), "mul: shapes " + shape_string(av.shape()) + " and " +
                                        shape_string(bv.shape()) + " differ");
  Tensor y = av;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= bv[i];
  const std::uint32_t pa = a.id, pb = b.id;
  return tape.record(std::move(y), {a, b}, [pa, pb](Tape& t, std::uint32_t self) {
    const Tensor& g = t.upstream(self);
    const Tensor& A = t.value(Var{&t, pa});
    const Tensor& B = t.value(Var{&t, pb});
    if (t.requires_grad(pa)) {
      Tensor& acc = t.accumulator(pa);
      for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i] * B[i];
    }
    if (t.requires_grad(pb)) {
      Tensor& acc = t.accumulator(pb);
      for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i] * A[i];
    }
  });
}

Var scale(Var a, double c) {
  return unary(a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Var add_scalar(Var a, double c) {
  return unary(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Var negate(Var a) { return scale(a, -1.0); }

Var sum(Var a) {
  const Tensor& x = a.value();
  const double s = std::accumulate(x.storage().begin(), x.storage().end(), 0.0);
  const std::uint32_t pa = a.id;
  return a.tape->record(Tensor::scalar(s), {a}, [pa](Tape& t, std::uint32_t self) {
    const double g = t.upstream(self)[0];
    for (double& v : t.accumulator(pa).storage()) v += g;
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  require(n > 0, "mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var sum_rows(Var a) {
  const Tensor& x = a.value();
  require_matrix(x, "sum_rows");
  const std::size_t r = x.rows(), c = x.cols();
  Tensor y({r, 1});
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += x[i * c + j];
    y[i] = s;
  }
  const std::uint32_t pa = a.id;
  return a.tape->record(std::move(y), {a}, [pa, c](Tape& t, std::uint32_t self) {
    const Tensor& g = t.upstream(self);
    Tensor& acc = t.accumulator(pa);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i / c];
  });
}

Var mean_rows(Var a) {
  require_matrix(a.value(), "mean_rows");
  return scale(sum_rows(a), 1.0 / static_cast<double>(a.value().cols()));
}

Var mean_cols(Var a) {
  const Tensor& x = a.value();
  require_matrix(x, "mean_cols");
  const std::size_t r = x.rows(), c = x.cols();
  require(r > 0, "mean_cols: no rows");
  Tensor y({c});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) y[j] += x[i * c + j];
  const double inv = 1.0 / static_cast<double>(r);
  for (double& v : y.storage()) v *= inv;
  const std::uint32_t pa = a.id;
  return a.tape->record(std::move(y), {a}, [pa, c, inv](Tape& t, std::uint32_t self) {
    const Tensor& g = t.upstream(self);
    Tensor& acc = t.accumulator(pa);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i % c] * inv;
  });
}

Var exp(Var a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  for (double v : a.value().storage())
    if (!(v > 0.0)) throw DomainError("log: argument " + std::to_string(v) + " is not positive");
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var sqrt(Var a) {
  for (double v : a.value().storage())
    if (!(v >= 0.0)) throw DomainError("sqrt: argument " + std::to_string(v) + " is negative");
  return unary(a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

Var square(Var a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var tanh(Var a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var relu(Var a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(Var a) {
  return unary(a, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Var softplus(Var a) {
  return unary(a, stable_softplus, [](double x, double) { return stable_sigmoid(x); });
}

Var clamp(Var a, double lo, double hi) {
  require(lo <= hi, "clamp: lo > hi");
  return unary(a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
               [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Var concat(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat: no inputs");
  Tape& tape = *parts.front().tape;
  const std::size_t r = parts.front().value().rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (Var p : parts) {
    require(p.tape == &tape, "concat: operands live on different tapes");
    require_matrix(p.value(), "concat");
    require(p.value().rows() == r, "concat: row counts differ");
    widths.push_back(p.value().cols());
    total += widths.back();
  }
  Tensor y({r, total});
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& x = parts[k].value();
    for (std::size_t i = 0; i < r; ++i)
      std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(i * widths[k]), widths[k],
                  y.data().begin() + static_cast<std::ptrdiff_t>(i * total + offset));
    offset += widths[k];
  }
  std::vector<std::uint32_t> ids;
  for (Var p : parts) ids.push_back(p.id);
  return tape.record(std::move(y), parts, [ids, widths, total, r](Tape& t, std::uint32_t self) {
    const Tensor& g = t.upstream(self);
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (t.requires_grad(ids[k])) {
        Tensor& acc = t.accumulator(ids[k]);
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < widths[k]; ++j) acc[i * widths[k] + j] += g[i * total + off + j];
      }
      off += widths[k];
    }
  });
}

Var slice(Var a, std::size_t begin, std::size_t end) {
  const Tensor& x = a.value();
  require_matrix(x, "slice");
  require(begin < end && end <= x.cols(), "slice: column range out of bounds");
  const std::size_t r = x.rows(), c = x.cols(), w = end - begin;
  Tensor y({r, w});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < w; ++j) y[i * w + j] = x[i * c + begin + j];
  const std::uint32_t pa = a.id;
  return a.tape->record(std::move(y), {a}, [pa, r, c, w, begin](Tape& t, std::uint32_t self) {
    const Tensor& g = t.upstream(self);
    Tensor& acc = t.accumulator(pa);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < w; ++j) acc[i * c + begin + j] += g[i * w + j];
  });
}

Var transpose(Var a) {
  const Tensor& x = a.value();
  require_matrix(x, "transpose");
  Tensor y({x.cols(), x.rows()});
  view(y) = view(x).transpose();
  const std::uint32_t pa = a.id;
  return a.tape->record(std::move(y), {a}, [pa](Tape& t, std::uint32_t self) {
    view(t.accumulator(pa)) += view(t.upstream(self)).transpose();
  });
}

Var reverse_cols(Var a) {
  const Tensor& x = a.value();
  require_matrix(x, "reverse_cols");
  const std::size_t r = x.rows(), c = x.cols();
  Tensor y({r, c});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) y[i * c + j] = x[i * c + (c - 1 - j)];
  const std::uint32_t pa = a.id;
  return a.tape->record(std::move(y), {a}, [pa, r, c](Tape& t, std::uint32_t self) {
    const Tensor& g = t.upstream(self);
    Tensor& acc = t.accumulator(pa);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) acc[i * c + (c - 1 - j)] += g[i * c + j];
  });
}

Var scale_rows(Var a, Var s) {
  Tape& tape = same_tape(a, s, "scale_rows");
  const Tensor& x = a.value();
  const Tensor& sv = s.value();
  require_matrix(x, "scale_rows");
  require(sv.rank() == 2 && sv.cols() == 1 && sv.rows() == x.rows(),
          "scale_rows: scale must be a (rows x 1) column");
  const std::size_t r = x.rows(), c = x.cols();
  Tensor y = x;
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) y[i * c + j] *= sv[i];
  const std::uint32_t pa = a.id, ps = s.id;
  return tape.record(std::move(y), {a, s}, [pa, ps, r, c](Tape& t, std::uint32_t self) {
    const Tensor& g = t.upstream(self);
    const Tensor& X = t.value(Var{&t, pa});
    const Tensor& S = t.value(Var{&t, ps});
    if (t.requires_grad(pa)) {
      Tensor& acc = t.accumulator(pa);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) acc[i * c + j] += g[i * c + j] * S[i];
    }
    if (t.requires_grad(ps)) {
      Tensor& acc = t.accumulator(ps);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) acc[i] += g[i * c + j] * X[i * c + j];
    }
  });
}

Var logsumexp_rows(Var a) {
  const Tensor& x = a.value();
  require_matrix(x, "logsumexp_rows");
  const std::size_t r = x.rows(), c = x.cols();
  require(c > 0, "logsumexp_rows: no columns");
  Tensor y({r, 1});
  for (std::size_t i = 0; i < r; ++i) {
    double m = x[i * c];
    for (std::size_t j = 1; j < c; ++j) m = std::max(m, x[i * c + j]);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(x[i * c + j] - m);
    y[i] = m + std::log(s);
  }
  const std::uint32_t pa = a.id;
  return a.tape->record(std::move(y), {a}, [pa, r, c](Tape& t, std::uint32_t self) {
    const Tensor& g = t.upstream(self);
    const Tensor& X = t.value(Var{&t, pa});
    const Tensor& Y = t.value(Var{&t, self});
    Tensor& acc = t.accumulator(pa);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) acc[i * c + j] += g[i] * std::exp(X[i * c + j] - Y[i]);
  });
}

Var repeat_rows(Var a, std::size_t b) {
  const Tensor& x = a.value();
  require(x.rank() == 2 && x.rows() == 1, "repeat_rows: expected a (1 x n) row");
  require(b > 0, "repeat_rows: zero repeats");
  const std::size_t c = x.cols();
  Tensor y({b, c});
  for (std::size_t i = 0; i < b; ++i)
    std::copy(x.storage().begin(), x.storage().end(), y.storage().begin() + static_cast<std::ptrdiff_t>(i * c));
  const std::uint32_t pa = a.id;
  return a.tape->record(std::move(y), {a}, [pa, c](Tape& t, std::uint32_t self) {
    const Tensor& g = t.upstream(self);
    Tensor& acc = t.accumulator(pa);
    for (std::size_t i = 0; i < g.size(); ++i) acc[i % c] += g[i];
  });
}

Var sym_inv_sqrt(Var a) {
  const Tensor& x = a.value();
  require(x.rank() == 2 && x.rows() == x.cols(), "sym_inv_sqrt: expected a square matrix");
  const RowMat sym = 0.5 * (view(x) + view(x).transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(sym);
  if (solver.info() != Eigen::Success) throw NumericError("sym_inv_sqrt: eigendecomposition failed");
  const Eigen::VectorXd lambda = solver.eigenvalues();
  if (!(lambda.minCoeff() > 0.0) || !lambda.allFinite())
    throw NumericError("sym_inv_sqrt: matrix is not positive definite (min eigenvalue " +
                       std::to_string(lambda.minCoeff()) + ")");
  const Eigen::MatrixXd U = solver.eigenvectors();
  const Eigen::VectorXd root = lambda.array().sqrt();
  const Eigen::MatrixXd F = U * root.cwiseInverse().asDiagonal() * U.transpose();
  const std::size_t n = x.rows();
  Tensor y({n, n});
  view(y) = F;
  const std::uint32_t pa = a.id;
  return a.tape->record(std::move(y), {a}, [pa, U, root](Tape& t, std::uint32_t self) {
    const Eigen::Index n = root.size();
    Eigen::MatrixXd L(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) L(i, j) = -1.0 / (root(i) * root(j) * (root(i) + root(j)));
    const Eigen::MatrixXd inner = L.cwiseProduct(U.transpose() * view(t.upstream(self)) * U);
    const Eigen::MatrixXd full = U * inner * U.transpose();
    view(t.accumulator(pa)) += 0.5 * (full + full.transpose());
  });
}

Var nuclear_norm_clamped(Var a) {
  const Tensor& x = a.value();
  require(x.rank() == 2 && x.rows() == x.cols(), "nuclear_norm_clamped: expected a square matrix");
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(Eigen::MatrixXd(view(x)), Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::VectorXd s = svd.singularValues();
  double total = 0.0;
  Eigen::VectorXd active(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    total += std::min(s(i), 1.0);
    active(i) = s(i) < 1.0 ? 1.0 : 0.0;
  }
  const Eigen::MatrixXd dY = svd.matrixU() * active.asDiagonal() * svd.matrixV().transpose();
  const std::uint32_t pa = a.id;
  return a.tape->record(Tensor::scalar(total), {a}, [pa, dY](Tape& t, std::uint32_t self) {
    view(t.accumulator(pa)) += t.upstream(self)[0] * dY;
  });
}

}  // namespace ad
}  // namespace jnflow
