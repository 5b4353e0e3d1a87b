#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <numbers>

#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace jnflow;
using namespace jnflow::testing;

namespace {

/// log f(z) = -a (z^2 - 1)^2 in one dimension.
class DoubleWell : public Expert {
 public:
  explicit DoubleWell(double a) : a_(a) {}
  std::size_t dim() const override { return 1; }
  Var log_density(Tape&, Var z) const override {
    return ad::scale(ad::square(ad::add_scalar(ad::square(z), -1.0)), -a_);
  }
  Tensor sample(std::size_t n, Rng& rng) const override { return normal_tensor({n, 1}, rng); }

 private:
  double a_;
};

/// Non-finite gradient everywhere.
class Broken : public Expert {
 public:
  std::size_t dim() const override { return 1; }
  Var log_density(Tape&, Var z) const override { return ad::scale(z, std::nan("")); }
  Tensor sample(std::size_t n, Rng& rng) const override { return normal_tensor({n, 1}, rng); }
};

SubsetPosteriorTarget two_gaussians() {
  return SubsetPosteriorTarget({gaussian_expert({0.5, -1.0}, {std::log(0.5), std::log(2.0)}),
                                gaussian_expert({-0.2, 0.4}, {std::log(0.8), std::log(0.7)})});
}

UnimodalPosterior random_posterior(std::uint64_t seed) {
  Stage2Config cfg;
  cfg.context_dim = 4;
  cfg.made_hidden = {16, 16};
  cfg.base_hidden = {8};
  cfg.raw_context_hidden = {8};
  UnimodalPosterior p(0, 3, 2, cfg, seed);
  p.flow().init(seed, false);
  for (auto& b : p.flow().blocks())
    for (double& w : b.net().layers().back().weight.storage()) w *= 0.5;
  return p;
}

/// Energy distance between two samples of rows.
double energy_distance(const Tensor& x, const Tensor& y) {
  auto dist = [](const Tensor& a, std::size_t i, const Tensor& b, std::size_t j) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.cols(); ++k) s += (a(i, k) - b(j, k)) * (a(i, k) - b(j, k));
    return std::sqrt(s);
  };
  auto mean_dist = [&](const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i)
      for (std::size_t j = 0; j < b.rows(); ++j) s += dist(a, i, b, j);
    return s / (a.rows() * b.rows());
  };
  return 2 * mean_dist(x, y) - mean_dist(x, x) - mean_dist(y, y);
}

}  // namespace

TEST_CASE("single-expert target is exactly that expert") {
  const auto e = gaussian_expert({0.3, -0.2}, {0.1, -0.4});
  const SubsetPosteriorTarget t({e});
  Rng rng(1);
  const Tensor z = normal_tensor({10, 2}, rng);
  Tape tape(Tape::Params::Frozen);
  CHECK(t.log_density(tape, tape.constant(z)).value() == e->log_density(tape, tape.constant(z)).value());
}

TEST_CASE("two prior experts cancel to the prior") {
  const SubsetPosteriorTarget t({gaussian_expert({0, 0}, {0, 0}), gaussian_expert({0, 0}, {0, 0})});
  Rng rng(2);
  const Tensor z = normal_tensor({10, 2}, rng);
  Tape tape(Tape::Params::Frozen);
  const Tensor got = t.log_density(tape, tape.constant(z)).value();
  const Tensor prior = gaussian_log_density(standard_normal(tape, 10, 2), tape.constant(z)).value();
  for (std::size_t i = 0; i < 10; ++i) CHECK(got[i] == doctest::Approx(prior[i]).epsilon(1e-14));
}

TEST_CASE("Gaussian product target matches the precision-weighted Gaussian up to a constant") {
  const SubsetPosteriorTarget t = two_gaussians();
  const auto [mean, var] = gaussian_poe_moments({{0.5, -1.0}, {-0.2, 0.4}}, {{0.5, 2.0}, {0.8, 0.7}});
  Tensor grid({121, 2});
  for (std::size_t i = 0; i < 11; ++i)
    for (std::size_t j = 0; j < 11; ++j) {
      grid(i * 11 + j, 0) = -2.5 + 0.5 * i;
      grid(i * 11 + j, 1) = -2.5 + 0.5 * j;
    }
  Tape tape(Tape::Params::Frozen);
  const Tensor got = t.log_density(tape, tape.constant(grid)).value();
  std::vector<double> diff;
  for (std::size_t r = 0; r < 121; ++r) {
    double closed = 0.0;
    for (std::size_t k = 0; k < 2; ++k) closed += -0.5 * (grid(r, k) - mean[k]) * (grid(r, k) - mean[k]) / var[k];
    diff.push_back(got[r] - closed);
  }
  for (double d : diff) CHECK(d == doctest::Approx(diff.front()).epsilon(1e-12));
}

TEST_CASE("no leapfrog steps: inputs unchanged and acceptance one") {
  const SubsetPosteriorTarget t = two_gaussians();
  Rng rng(3);
  Tensor z = normal_tensor({5, 2}, rng), v = normal_tensor({5, 2}, rng), logf, grad;
  const Tensor z0 = z, v0 = v;
  t.evaluate(z, logf, grad);
  leapfrog(t, z, v, std::vector<double>(5, 0.2), 0, logf, grad);
  CHECK(z == z0);
  CHECK(v == v0);
  CHECK(min_acceptance_without_leapfrog(t, 64, 50, 4) == 1.0);
}

TEST_CASE("acceptance probabilities lie in [0, 1]") {
  const SubsetPosteriorTarget t = two_gaussians();
  Rng rng(5);
  HmcChains c = init_chains(t, normal_tensor({200, 2}, rng), 0.8, 5);
  std::vector<double> alpha;
  bool saw_reject = false;
  for (int k = 0; k < 20; ++k) {
    hmc_transition(t, c, 10, &alpha);
    for (double a : alpha) {
      CHECK(a >= 0.0);
      CHECK(a <= 1.0);
      saw_reject |= a < 1.0;
    }
  }
  CHECK(saw_reject);
  for (std::size_t r = 0; r < 200; ++r) CHECK(c.accepted[r] <= c.transitions);
}

TEST_CASE("leapfrog is time-reversible") {
  CHECK(leapfrog_reversal_error(two_gaussians(), 50, 0.1, 25, 6) < 1e-10);
  const SubsetPosteriorTarget well({std::make_shared<DoubleWell>(2.0)});
  CHECK(leapfrog_reversal_error(well, 50, 0.05, 40, 7) < 1e-10);
}

TEST_CASE("harmonic oscillator energy drift stays small") {
  const SubsetPosteriorTarget t({gaussian_expert({0, 0}, {0, 0})});
  Rng rng(8);
  Tensor z = normal_tensor({100, 2}, rng), v = normal_tensor({100, 2}, rng), logf, grad;
  const Tensor z0 = z;
  const double logf_const = -std::log(2 * std::numbers::pi);  // log N(0; 0, I_2)
  t.evaluate(z, logf, grad);
  const auto h0 = hamiltonian(logf, v);
  leapfrog(t, z, v, std::vector<double>(100, 0.1), 50, logf, grad);
  const auto h1 = hamiltonian(logf, v);
  // Leapfrog conserves p^2/2 + (1 - eps^2/4) q^2/2 exactly, so the drift is
  // eps^2/8 |q1^2 - q0^2|; for unit-energy starts that stays below 1e-2.
  for (std::size_t r = 0; r < 100; ++r) {
    const double q0 = z0(r, 0) * z0(r, 0) + z0(r, 1) * z0(r, 1), q1 = z(r, 0) * z(r, 0) + z(r, 1) * z(r, 1);
    CHECK(std::abs(h1[r] - h0[r]) == doctest::Approx(0.01 / 8 * std::abs(q1 - q0)).epsilon(1e-6).scale(1e-9));
    if (h0[r] + logf_const <= 1.0) CHECK(std::abs(h1[r] - h0[r]) < 1e-2);
  }
}

TEST_CASE("tiny steps are almost always accepted") {
  const SubsetPosteriorTarget t = two_gaussians();
  Rng rng(9);
  HmcChains c = init_chains(t, normal_tensor({1, 2}, rng), 1e-6, 9);
  for (int k = 0; k < 1000; ++k) hmc_transition(t, c, 1);
  CHECK(static_cast<double>(c.accepted[0]) / c.transitions > 0.999);
}

TEST_CASE("non-finite gradients raise a sampling error") {
  const SubsetPosteriorTarget t({std::make_shared<Broken>()});
  Tensor z = Tensor::matrix({{0.5}}), v = Tensor::matrix({{1.0}}), logf, grad;
  t.evaluate(z, logf, grad);
  CHECK_THROWS_AS(leapfrog(t, z, v, {0.1}, 1, logf, grad), SamplingError);
}

TEST_CASE("prior-only target: sample moments match N(0, I)") {
  const SubsetPosteriorTarget t({gaussian_expert({0, 0}, {0, 0}), gaussian_expert({0, 0}, {0, 0})});
  HmcConfig cfg;
  cfg.seed = 10;
  const HmcResult r = sample_subset_posterior(t, cfg, 10000);
  CHECK(moment_scores(r.samples, {0, 0}, {1, 1}).worst() < 3.0);
  CHECK(r.acceptance_rate > 0.5);
}

TEST_CASE("two-Gaussian product: sample moments match the closed form") {
  const auto [mean, var] = gaussian_poe_moments({{0.5, -1.0}, {-0.2, 0.4}}, {{0.5, 2.0}, {0.8, 0.7}});
  HmcConfig cfg;
  cfg.seed = 11;
  const HmcResult r = sample_subset_posterior(two_gaussians(), cfg, 10000);
  CHECK(moment_scores(r.samples, mean, var).worst() < 3.0);
}

TEST_CASE("double-well chain histogram matches the quadrature density") {
  const double a = 2.0;
  const SubsetPosteriorTarget t({std::make_shared<DoubleWell>(a)});
  const std::size_t chains = 50, burn = 100, keep = 1000;
  Rng rng(12);
  HmcChains c = init_chains(t, normal_tensor({chains, 1}, rng), 0.1, 12);
  const double lo = -2.5, hi = 2.5;
  const std::size_t bins = 25;
  std::vector<double> hist(bins, 0.0);
  for (std::size_t k = 0; k < burn + keep; ++k) {
    hmc_transition(t, c, 10);
    if (k < burn) continue;
    for (std::size_t r = 0; r < chains; ++r) {
      const double z = c.z[r];
      if (z >= lo && z < hi) hist[static_cast<std::size_t>((z - lo) / (hi - lo) * bins)] += 1.0;
    }
  }
  // Bin masses by fine midpoint quadrature, normalized on [-4, 4].
  auto f = [&](double z) { return std::exp(-a * (z * z - 1) * (z * z - 1)); };
  double total = 0.0;
  const std::size_t fine = 80000;
  for (std::size_t i = 0; i < fine; ++i) total += f(-4.0 + 8.0 * (i + 0.5) / fine) * 8.0 / fine;
  double tv = 0.0;
  const double width = (hi - lo) / bins;
  for (std::size_t b = 0; b < bins; ++b) {
    double mass = 0.0;
    for (int i = 0; i < 200; ++i) mass += f(lo + width * (b + (i + 0.5) / 200)) * width / 200;
    tv += std::abs(hist[b] / (chains * keep) - mass / total);
  }
  CHECK(0.5 * tv < 0.05);
}

TEST_CASE("single-expert HMC agrees with direct flow sampling") {
  const UnimodalPosterior p = random_posterior(13);
  const Tensor input = Tensor::matrix({{0.2, -0.7, 1.1}});
  const auto expert = std::make_shared<FlowExpert>(p, input);
  const SubsetPosteriorTarget t({expert});
  HmcConfig cfg;
  cfg.seed = 14;
  const std::size_t n = 300;
  const Tensor hmc = sample_subset_posterior(t, cfg, n).samples;
  Rng rng(15);
  const Tensor direct = expert->sample(n, rng);
  const double observed = energy_distance(hmc, direct);
  // Permutation test on the pooled sample.
  std::vector<Tensor> pooled_rows;
  for (std::size_t i = 0; i < n; ++i) pooled_rows.push_back(hmc.row(i));
  for (std::size_t i = 0; i < n; ++i) pooled_rows.push_back(direct.row(i));
  std::size_t as_extreme = 0;
  const std::size_t perms = 200;
  for (std::size_t k = 0; k < perms; ++k) {
    std::shuffle(pooled_rows.begin(), pooled_rows.end(), rng);
    const Tensor a = stack_rows({pooled_rows.begin(), pooled_rows.begin() + n});
    const Tensor b = stack_rows({pooled_rows.begin() + n, pooled_rows.end()});
    as_extreme += energy_distance(a, b) >= observed;
  }
  CHECK((as_extreme + 1.0) / (perms + 1.0) > 0.01);
}

TEST_CASE("fixed seed reproduces samples independent of the worker count") {
  const SubsetPosteriorTarget t = two_gaussians();
  HmcConfig cfg;
  cfg.seed = 16;
  cfg.n_transitions = 20;
  const std::size_t n = 3 * kHmcChunk + 17;
  setenv("JNF_THREADS", "0", 1);
  const HmcResult serial = sample_subset_posterior(t, cfg, n);
  setenv("JNF_THREADS", "3", 1);
  const HmcResult threaded = sample_subset_posterior(t, cfg, n);
  unsetenv("JNF_THREADS");
  CHECK(serial.samples == threaded.samples);
  CHECK(serial.acceptance_rate == threaded.acceptance_rate);
  cfg.seed = 17;
  CHECK_FALSE(sample_subset_posterior(t, cfg, n).samples == serial.samples);
}

TEST_CASE("different seeds give exchangeable chains") {
  const auto [mean, var] = gaussian_poe_moments({{0.5, -1.0}, {-0.2, 0.4}}, {{0.5, 2.0}, {0.8, 0.7}});
  for (std::uint64_t seed : {21u, 22u, 23u}) {
    HmcConfig cfg;
    cfg.seed = seed;
    CHECK(moment_scores(sample_subset_posterior(two_gaussians(), cfg, 4000).samples, mean, var).worst() < 4.0);
  }
}

TEST_CASE("oversized steps are reported as low acceptance") {
  HmcConfig cfg;
  cfg.seed = 24;
  cfg.step_size = 20.0;
  cfg.warmup = 0;
  const HmcResult r = sample_subset_posterior(two_gaussians(), cfg, 100);
  CHECK(r.low_acceptance_chains > 0);
  CHECK(r.acceptance_rate < 0.1);
}
