#include <doctest.h>

#include <cmath>

#include "jnflow/flows.hpp"
#include "support/gradcheck.hpp"

using namespace jnflow;
using namespace jnflow::testing;

namespace {

/// Random, non-identity flow whose MADE heads are damped so the density
/// stays well inside [-8, 8]^d.
FlowStack random_flow(std::size_t d, std::size_t context_dim, std::size_t n_flows, std::uint64_t seed,
                      double head_scale = 0.3) {
  FlowConfig cfg;
  cfg.d = d;
  cfg.context_dim = context_dim;
  cfg.n_flows = n_flows;
  cfg.made_hidden = {16, 16};
  cfg.base_hidden = {8};
  FlowStack f(cfg, seed);
  f.init(seed, false);
  for (auto& b : f.blocks())
    for (double& w : b.net().layers().back().weight.storage()) w *= head_scale;
  return f;
}

Tensor log_density(const FlowStack& f, const Tensor& z, const Tensor& c) {
  Tape t(Tape::Params::Frozen);
  return f.log_density(t, t.constant(z), t.constant(c)).value();
}

Tensor repeat(const Tensor& row, std::size_t n) {
  std::vector<Tensor> rows(n, row);
  return stack_rows(rows);
}

}  // namespace

TEST_CASE("masks are deterministic and strictly autoregressive") {
  const MadeMasks a = made_build_masks({8, 8}, 3, 2, 5), b = made_build_masks({8, 8}, 3, 2, 5);
  REQUIRE(a.masks.size() == b.masks.size());
  for (std::size_t l = 0; l < a.masks.size(); ++l) CHECK(a.masks[l] == b.masks[l]);
  CHECK_THROWS_AS(made_build_masks({2, 8}, 4, 0, 1), ContractViolation);
}

TEST_CASE("numeric Jacobian of MADE outputs is strictly lower triangular") {
  for (bool reversed : {false, true}) {
    MadeBlock block(3, 2, {12, 12}, 9, reversed);
    block.init(9, false);
    Rng rng(1);
    const Tensor x = uniform({1, 3}, -1, 1, rng), c = uniform({1, 2}, -1, 1, rng);
    auto outputs = [&](const Tensor& xx) {
      Tape t(Tape::Params::Frozen);
      const auto cond = block.condition(t, t.constant(xx), t.constant(c));
      return std::pair{cond.shift.value(), cond.log_scale.value()};
    };
    for (std::size_t j = 0; j < 3; ++j) {
      Tensor xp = x, xm = x;
      xp[j] += 1e-5;
      xm[j] -= 1e-5;
      const auto [sp, ap] = outputs(xp);
      const auto [sm, am] = outputs(xm);
      for (std::size_t i = 0; i < 3; ++i) {
        const double ds = std::abs(sp[i] - sm[i]), da = std::abs(ap[i] - am[i]);
        if (j >= i) {
          CHECK(ds == 0.0);
          CHECK(da == 0.0);
        } else {
          CHECK(ds + da > 0.0);
        }
      }
    }
  }
}

TEST_CASE("d = 1 block is affine in z with log-det a") {
  MadeBlock block(1, 2, {6, 6}, 4, false);
  block.init(4, false);
  Rng rng(3);
  const Tensor c = uniform({1, 2}, -1, 1, rng);
  Tape t(Tape::Params::Frozen);
  const auto c0 = block.condition(t, t.constant(Tensor({1, 1}, -0.7)), t.constant(c));
  const auto c1 = block.condition(t, t.constant(Tensor({1, 1}, 2.3)), t.constant(c));
  CHECK(c0.shift.value() == c1.shift.value());
  CHECK(c0.log_scale.value() == c1.log_scale.value());
  const double x = 1.9, m = c0.shift.value()[0], a = c0.log_scale.value()[0];
  Var log_det;
  const double u = block.peel(t, t.constant(Tensor({1, 1}, x)), t.constant(c), &log_det).value()[0];
  CHECK(u == doctest::Approx((x - m) * std::exp(-a)).epsilon(1e-14));
  CHECK(log_det.value()[0] == doctest::Approx(a).epsilon(1e-14));
}

TEST_CASE("zero-initialized stack is the identity with zero log-det") {
  FlowConfig cfg;
  cfg.d = 2;
  cfg.context_dim = 3;
  FlowStack f(cfg, 21);
  Rng rng(4);
  const Tensor z = uniform({50, 2}, -3, 3, rng), c = uniform({50, 3}, -1, 1, rng);
  Tape t(Tape::Params::Frozen);
  const auto peeled = f.peel(t, t.constant(z), t.constant(c));
  CHECK(peeled.z0.value() == z);
  for (double v : peeled.log_det.value().storage()) CHECK(v == 0.0);
  const Tensor lp = f.log_density(t, t.constant(z), t.constant(c)).value();
  const Tensor base = gaussian_log_density(f.base(t, t.constant(c)), t.constant(z)).value();
  CHECK(lp == base);
  CHECK(f.regenerate(z, c) == z);
}

TEST_CASE("identity stack samples follow the base Gaussian") {
  FlowConfig cfg;
  cfg.d = 2;
  cfg.context_dim = 2;
  FlowStack f(cfg, 3);
  f.base_net().layers().back().bias = Tensor::vector({0.5, -1.0, std::log(0.25), 0.0});
  const Tensor c = Tensor::matrix({{0.0, 0.0}});
  Tape t(Tape::Params::Frozen);
  const auto g = f.base(t, t.constant(c));
  const std::size_t n = 100000;
  Rng rng(77);
  const Tensor z = f.sample(c, n, rng);
  for (std::size_t j = 0; j < 2; ++j) {
    const double mu = g.mu.value()(0, j), var = std::exp(g.log_var.value()(0, j));
    double m = 0.0;
    for (std::size_t r = 0; r < n; ++r) m += z(r, j);
    m /= n;
    CHECK(std::abs(m - mu) < 3.0 * std::sqrt(var / n));
  }
  Rng again(77);
  CHECK(f.sample(c, n, again) == z);
}

TEST_CASE("peel then regenerate round-trips 1000 random points") {
  const FlowStack f = random_flow(3, 4, 3, 31, 1.0);
  Rng rng(5);
  const Tensor z = uniform({1000, 3}, -3, 3, rng), c = uniform({1000, 4}, -1, 1, rng);
  Tape t(Tape::Params::Frozen);
  const auto peeled = f.peel(t, t.constant(z), t.constant(c));
  Tensor fwd_log_det;
  const Tensor back = f.regenerate(peeled.z0.value(), c, &fwd_log_det);
  double worst = 0.0, worst_ld = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) worst = std::max(worst, std::abs(back[i] - z[i]));
  for (std::size_t r = 0; r < 1000; ++r)
    worst_ld = std::max(worst_ld, std::abs(fwd_log_det[r] + peeled.log_det.value()[r]));
  CHECK(worst < 1e-8);
  CHECK(worst_ld < 1e-10);
}

TEST_CASE("d = 1 density integrates to one") {
  const FlowStack f = random_flow(1, 2, 2, 41);
  const Tensor c = Tensor::matrix({{0.4, -0.3}});
  const std::size_t n = 4001;
  Tensor z({n, 1});
  const double h = 16.0 / (n - 1);
  for (std::size_t i = 0; i < n; ++i) z(i, 0) = -8.0 + h * i;
  const Tensor lp = log_density(f, z, repeat(c, n));
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += (i == 0 || i == n - 1 ? 0.5 : 1.0) * std::exp(lp[i]);
  CHECK(std::abs(total * h - 1.0) < 1e-3);
}

TEST_CASE("d = 2 density integrates to one by Simpson's rule") {
  const FlowStack f = random_flow(2, 2, 2, 43);
  const Tensor c = Tensor::matrix({{-0.2, 0.6}});
  const std::size_t n = 401;
  const double h = 16.0 / (n - 1);
  Tensor z({n * n, 2});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      z(i * n + j, 0) = -8.0 + h * i;
      z(i * n + j, 1) = -8.0 + h * j;
    }
  const Tensor lp = log_density(f, z, repeat(c, n * n));
  auto w = [&](std::size_t i) { return i == 0 || i == n - 1 ? 1.0 : (i % 2 ? 4.0 : 2.0); };
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) total += w(i) * w(j) * std::exp(lp[i * n + j]);
  CHECK(std::abs(total * h * h / 9.0 - 1.0) < 1e-2);
}

TEST_CASE("log density gradients match finite differences for every parameter tensor") {
  FlowStack f = random_flow(2, 3, 2, 51, 1.0);
  Rng rng(6);
  const Tensor z = uniform({4, 2}, -2, 2, rng), c = uniform({4, 3}, -1, 1, rng);
  auto loss = [&](Tape& t) { return ad::sum(f.log_density(t, t.constant(z), t.constant(c))); };
  ParamList params;
  f.collect_params("flow", params);
  Tape t;
  t.backward(loss(t));
  std::vector<Tensor> grads;
  for (const auto& p : params) grads.push_back(t.grad_of(*p.tensor));
  double diff2 = 0.0, num2 = 0.0;
  std::uniform_int_distribution<std::size_t> pick;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k].tensor;
    for (int s = 0; s < 6; ++s) {
      const std::size_t i = pick(rng) % p.size();
      const double x0 = p[i];
      p[i] = x0 + 1e-5;
      Tape tp(Tape::Params::Frozen);
      const double fp = loss(tp).value().item();
      p[i] = x0 - 1e-5;
      Tape tm(Tape::Params::Frozen);
      const double fm = loss(tm).value().item();
      p[i] = x0;
      const double num = (fp - fm) / 2e-5;
      diff2 += (grads[k][i] - num) * (grads[k][i] - num);
      num2 += num * num;
    }
  }
  CHECK(std::sqrt(diff2) / std::sqrt(num2) < 1e-4);
}

TEST_CASE("dimension mismatch is a contract violation") {
  const FlowStack f = random_flow(2, 3, 1, 2);
  Tape t;
  CHECK_THROWS_AS(f.log_density(t, t.constant(Tensor({2, 3})), t.constant(Tensor({2, 3}))), ContractViolation);
  CHECK_THROWS_AS(f.log_density(t, t.constant(Tensor({2, 2})), t.constant(Tensor({2, 2}))), ContractViolation);
}
