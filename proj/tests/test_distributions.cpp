#include <doctest.h>

#include <cmath>
#include <numbers>

#include "jnflow/distributions.hpp"
#include "support/gradcheck.hpp"

using namespace jnflow;
using namespace jnflow::testing;

namespace {

DiagGaussian gauss(Tape& t, const Tensor& mu, const Tensor& lv) { return {t.constant(mu), t.constant(lv)}; }

double kl_value(const Tensor& mu_a, const Tensor& lv_a, const Tensor& mu_b, const Tensor& lv_b) {
  Tape t;
  return kl_diag_gaussians(gauss(t, mu_a, lv_a), gauss(t, mu_b, lv_b)).value()[0];
}

}  // namespace

TEST_CASE("standard normal log density at zero") {
  Tape t;
  const double v = gaussian_log_density(standard_normal(t, 1, 1), t.constant(Tensor({1, 1}, 0.0))).value()[0];
  CHECK(v == doctest::Approx(-0.5 * std::log(2 * std::numbers::pi)).epsilon(1e-15));
}

TEST_CASE("log density is symmetric about the mean") {
  Rng rng(4);
  const Tensor mu = uniform({1, 3}, -1, 1, rng), lv = uniform({1, 3}, -1, 1, rng), a = uniform({1, 3}, -2, 2, rng);
  Tensor plus = mu, minus = mu;
  for (std::size_t i = 0; i < 3; ++i) {
    plus[i] += a[i];
    minus[i] -= a[i];
  }
  Tape t;
  const auto g = gauss(t, mu, lv);
  CHECK(gaussian_log_density(g, t.constant(plus)).value()[0] ==
        doctest::Approx(gaussian_log_density(g, t.constant(minus)).value()[0]).epsilon(1e-14));
}

TEST_CASE("3-d density integrates to one on a grid") {
  Rng rng(8);
  const Tensor mu = uniform({1, 3}, -1, 1, rng), lv = uniform({1, 3}, -1, 0.5, rng);
  const std::size_t k = 80;
  std::vector<double> lo(3), step(3);
  for (std::size_t i = 0; i < 3; ++i) {
    const double sd = std::exp(0.5 * lv[i]);
    lo[i] = mu[i] - 7 * sd;
    step[i] = 14 * sd / static_cast<double>(k);
  }
  Tensor z({k * k * k, 3});
  std::size_t r = 0;
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = 0; b < k; ++b)
      for (std::size_t c = 0; c < k; ++c, ++r) {
        z(r, 0) = lo[0] + (a + 0.5) * step[0];
        z(r, 1) = lo[1] + (b + 0.5) * step[1];
        z(r, 2) = lo[2] + (c + 0.5) * step[2];
      }
  Tape t;
  Tensor mus({k * k * k, 3}), lvs({k * k * k, 3});
  for (std::size_t i = 0; i < k * k * k; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      mus(i, j) = mu[j];
      lvs(i, j) = lv[j];
    }
  const Tensor lp = gaussian_log_density(gauss(t, mus, lvs), t.constant(z)).value();
  double total = 0.0;
  for (double v : lp.storage()) total += std::exp(v);
  CHECK(std::abs(total * step[0] * step[1] * step[2] - 1.0) < 1e-3);
}

TEST_CASE("degenerate variance sample equals the mean") {
  Rng rng(1);
  const Tensor mu = uniform({4, 2}, -3, 3, rng);
  Tape t;
  const Tensor z = reparam_sample(gauss(t, mu, Tensor({4, 2}, -40.0)), rng).value();
  for (std::size_t i = 0; i < z.size(); ++i) CHECK(std::abs(z[i] - mu[i]) < 1e-8);
}

TEST_CASE("reparameterized samples of N(2, 0.25) have the right moments") {
  Rng rng(12);
  const std::size_t n = 100000;
  Tape t;
  const Tensor z = reparam_sample(gauss(t, Tensor({n, 1}, 2.0), Tensor({n, 1}, std::log(0.25))), rng).value();
  double m = 0, v = 0;
  for (double x : z.storage()) m += x;
  m /= n;
  for (double x : z.storage()) v += (x - m) * (x - m);
  v /= n - 1;
  CHECK(std::abs(m - 2.0) < 0.01);
  CHECK(std::abs(v - 0.25) < 0.01);
}

TEST_CASE("gradient of mean(z) with respect to mu is 1/size") {
  Rng rng(2);
  Tape t;
  Var mu = t.leaf(Tensor({1, 4}, 0.3));
  Var lv = t.leaf(Tensor({1, 4}, -0.2));
  const Tensor g = gradient(t, ad::mean(reparam_sample({mu, lv}, rng)), mu);
  for (double v : g.storage()) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("reparameterized functional matches finite differences with shared noise") {
  for (std::uint64_t s = 0; s < 10; ++s) {
    Rng rng(100 + s);
    const Tensor mu = uniform({3, 2}, -1, 1, rng), lv = uniform({3, 2}, -1, 1, rng);
    const std::uint64_t noise_seed = 7 + s;
    const double err = gradcheck(
        [=](Tape&, const std::vector<Var>& v) {
          Rng noise(noise_seed);
          return ad::sum(ad::tanh(reparam_sample({v[0], v[1]}, noise)));
        },
        {mu, lv});
    CHECK(err < 1e-5);
  }
}

TEST_CASE("KL closed forms") {
  CHECK(kl_value(Tensor({1, 1}, 0.0), Tensor({1, 1}, 0.0), Tensor({1, 1}, 1.0), Tensor({1, 1}, 0.0)) == 0.5);
  Rng rng(5);
  for (int i = 0; i < 1000; ++i) {
    const Tensor ma = uniform({1, 3}, -2, 2, rng), la = uniform({1, 3}, -2, 2, rng);
    const Tensor mb = uniform({1, 3}, -2, 2, rng), lb = uniform({1, 3}, -2, 2, rng);
    CHECK(kl_value(ma, la, mb, lb) >= 0.0);
    CHECK(std::abs(kl_value(ma, la, ma, la)) < 1e-12);
  }
}

TEST_CASE("KL shape mismatch is a contract violation") {
  Tape t;
  CHECK_THROWS_AS(kl_diag_gaussians(gauss(t, Tensor({2, 3}), Tensor({2, 3})), gauss(t, Tensor({2, 2}), Tensor({2, 2}))),
                  ContractViolation);
}

TEST_CASE("bernoulli likelihood oracles") {
  const Tensor x = Tensor::matrix({{1, 0, 1, 1}, {0, 0, 1, 0}});
  Tape t;
  const Tensor exact = bernoulli_log_likelihood(t.constant(x), x).value();
  for (double v : exact.storage()) CHECK(v == doctest::Approx(4 * std::log(1 - 1e-7)).epsilon(1e-12));
  const Tensor half = bernoulli_log_likelihood(t.constant(Tensor({2, 4}, 0.5)), x).value();
  for (double v : half.storage()) CHECK(v == doctest::Approx(-4 * std::log(2.0)).epsilon(1e-14));

  Rng rng(3);
  const Tensor p = uniform({2, 4}, 0.01, 0.99, rng);
  const Tensor ll = bernoulli_log_likelihood(t.constant(p), x).value();
  for (std::size_t r = 0; r < 2; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < 4; ++c) acc += x(r, c) == 1.0 ? std::log(p(r, c)) : std::log(1.0 - p(r, c));
    CHECK(ll[r] == doctest::Approx(acc).epsilon(1e-13));
  }
  CHECK_THROWS_AS(bernoulli_log_likelihood(t.constant(p), Tensor({2, 4}, 0.5)), ContractViolation);
}
