#include <doctest.h>

#include <cmath>
#include <numbers>

#include "jnflow/joint_vae.hpp"
#include "jnflow/metrics.hpp"
#include "support/gradcheck.hpp"

using namespace jnflow;
using namespace jnflow::testing;

namespace {

JointVaeConfig small_config() {
  JointVaeConfig cfg;
  cfg.modality_dims = {6, 4};
  cfg.d_z = 3;
  cfg.head_width = 8;
  cfg.merge_width = 8;
  cfg.decoder_width = 8;
  return cfg;
}

MultimodalBatch random_batch(std::size_t n, const JointVaeConfig& cfg, Rng& rng) {
  std::bernoulli_distribution coin(0.5);
  MultimodalBatch b;
  for (std::size_t w : cfg.modality_dims) {
    Tensor x({n, w});
    for (double& v : x.storage()) v = coin(rng);
    b.modalities.push_back(x);
  }
  return b;
}

std::vector<Tensor> loss_grads(JointVae& model, const MultimodalBatch& x, std::uint64_t noise, bool recon_only) {
  ParamList params;
  model.collect_params(params);
  Tape t;
  Rng rng(noise);
  const ElboTerms terms = beta_elbo(t, model, x, rng);
  Var loss = terms.loss;
  if (recon_only) {
    loss = terms.neg_recon[0];
    for (std::size_t j = 1; j < terms.neg_recon.size(); ++j) loss = ad::add(loss, terms.neg_recon[j]);
  }
  t.backward(loss);
  return collect_grads(t, params);
}

}  // namespace

TEST_CASE("encoder output shapes and zeroed posterior head") {
  const JointVaeConfig cfg = small_config();
  JointVae model(cfg, 3);
  Rng rng(1);
  const MultimodalBatch x = random_batch(5, cfg, rng);
  Tape t(Tape::Params::Frozen);
  const DiagGaussian q = joint_encode(t, model, x);
  CHECK(q.mu.value().shape() == Shape{5, 3});
  CHECK(q.log_var.value().shape() == Shape{5, 3});
  model.zero_posterior_head();
  Tape t2(Tape::Params::Frozen);
  const DiagGaussian q0 = joint_encode(t2, model, x);
  for (double v : q0.mu.value().storage()) CHECK(v == 0.0);
  for (double v : q0.log_var.value().storage()) CHECK(v == 0.0);
}

TEST_CASE("encoder without a merge net also zeroes to the prior") {
  JointVaeConfig cfg = small_config();
  cfg.merge_net = false;
  JointVae model(cfg, 4);
  model.zero_posterior_head();
  Rng rng(2);
  Tape t(Tape::Params::Frozen);
  const DiagGaussian q = joint_encode(t, model, random_batch(3, cfg, rng));
  for (double v : q.mu.value().storage()) CHECK(v == 0.0);
}

TEST_CASE("missing modality is a contract violation") {
  const JointVaeConfig cfg = small_config();
  const JointVae model(cfg, 3);
  Rng rng(1);
  MultimodalBatch x = random_batch(4, cfg, rng);
  x.modalities.pop_back();
  Tape t;
  CHECK_THROWS_AS(joint_encode(t, model, x), ContractViolation);
}

TEST_CASE("encoder is equivariant to batch permutations") {
  const JointVaeConfig cfg = small_config();
  const JointVae model(cfg, 8);
  Rng rng(5);
  const MultimodalBatch x = random_batch(7, cfg, rng);
  const std::vector<std::size_t> perm{3, 0, 6, 1, 5, 2, 4};
  MultimodalBatch xp;
  for (const Tensor& m : x.modalities) {
    std::vector<Tensor> rows;
    for (std::size_t i : perm) rows.push_back(m.row(i));
    xp.modalities.push_back(stack_rows(rows));
  }
  Tape t(Tape::Params::Frozen);
  const DiagGaussian q = joint_encode(t, model, x), qp = joint_encode(t, model, xp);
  // Matrix kernels treat rows by position, so agreement is up to rounding.
  for (std::size_t i = 0; i < perm.size(); ++i)
    for (std::size_t k = 0; k < cfg.d_z; ++k) {
      CHECK(qp.mu.value()(i, k) == doctest::Approx(q.mu.value()(perm[i], k)).epsilon(1e-12));
      CHECK(qp.log_var.value()(i, k) == doctest::Approx(q.log_var.value()(perm[i], k)).epsilon(1e-12));
    }
}

TEST_CASE("beta = 0 removes the KL term from every gradient") {
  JointVaeConfig cfg = small_config();
  cfg.beta = 0.0;
  JointVae model(cfg, 9);
  Rng rng(6);
  const MultimodalBatch x = random_batch(6, cfg, rng);
  const auto full = loss_grads(model, x, 11, false), recon = loss_grads(model, x, 11, true);
  REQUIRE(full.size() == recon.size());
  for (std::size_t k = 0; k < full.size(); ++k)
    for (std::size_t i = 0; i < full[k].size(); ++i) CHECK(full[k][i] == doctest::Approx(recon[k][i]).epsilon(1e-13));
}

TEST_CASE("likelihood weights scale reconstruction gradients linearly") {
  JointVaeConfig cfg = small_config();
  cfg.beta = 0.0;
  JointVae unit(cfg, 12);
  cfg.lambda = {2.5, 2.5};
  JointVae scaled(cfg, 12);
  Rng rng(7);
  const MultimodalBatch x = random_batch(6, cfg, rng);
  const auto g1 = loss_grads(unit, x, 13, false), gc = loss_grads(scaled, x, 13, false);
  for (std::size_t k = 0; k < g1.size(); ++k)
    for (std::size_t i = 0; i < g1[k].size(); ++i)
      CHECK(gc[k][i] == doctest::Approx(2.5 * g1[k][i]).epsilon(1e-12).scale(1e-12));
}

TEST_CASE("deterministic-limit KL against the closed form") {
  Tape t;
  const Tensor mu = Tensor::matrix({{0.3, -1.2}});
  const DiagGaussian q{t.constant(mu), t.constant(Tensor({1, 2}, -40.0))};
  const double kl = kl_diag_gaussians(q, standard_normal(t, 1, 2)).value().item();
  const double expected = 0.5 * (0.09 + 1.44) + 2 * 0.5 * (std::exp(-40.0) - 1.0 + 40.0);
  CHECK(kl == doctest::Approx(expected).epsilon(1e-14));
}

// z ~ N(0, 1), x | z ~ N(w z + b, s2): the exact posterior is Gaussian and
// linear in x, so the encoder family below contains it.
TEST_CASE("conjugate linear-Gaussian model: ELBO bounds and reaches log p(x)") {
  const double w = 1.7, b = -0.4, s2 = 0.3;
  Rng rng(14);
  std::normal_distribution<double> n01;
  const std::size_t n = 64;
  Tensor x({n, 1});
  for (double& v : x.storage()) v = w * n01(rng) + b + std::sqrt(s2) * n01(rng);
  double log_px = 0.0;
  for (double v : x.storage())
    log_px += -0.5 * std::log(2 * std::numbers::pi * (w * w + s2)) - 0.5 * (v - b) * (v - b) / (w * w + s2);
  log_px /= n;

  Tensor a({1, 1}), c = Tensor::vector({0.0}), lv = Tensor::vector({0.0});
  auto elbo = [&](Tape& t) {
    Var xv = t.constant(x);
    const DiagGaussian q{ad::linear(xv, t.param(a), t.param(c)),
                         ad::linear(xv, t.constant(Tensor({1, 1})), t.param(lv))};
    Var resid = ad::sub(xv, ad::add_scalar(ad::scale(q.mu, w), b));
    Var sq = ad::add(ad::square(resid), ad::scale(ad::exp(q.log_var), w * w));
    Var recon = ad::add_scalar(ad::scale(sq, -0.5 / s2), -0.5 * std::log(2 * std::numbers::pi * s2));
    const double lambda[] = {1.0};
    return elbo_from_terms({recon}, kl_diag_gaussians(q, standard_normal(t, n, 1)), lambda, 1.0).loss;
  };

  std::uniform_real_distribution<double> u(-3, 3);
  for (int draw = 0; draw < 100; ++draw) {
    a[0] = u(rng);
    c[0] = u(rng);
    lv[0] = u(rng);
    Tape t(Tape::Params::Frozen);
    CHECK(-elbo(t).value().item() <= log_px + 1e-12);
  }

  a[0] = c[0] = lv[0] = 0.0;
  AdamState opt;
  opt.lr = 0.01;
  const ParamList params{{"a", &a}, {"c", &c}, {"lv", &lv}};
  for (int step = 0; step < 4000; ++step) {
    Tape t;
    t.backward(elbo(t));
    adam_step(opt, params, collect_grads(t, params));
  }
  Tape t(Tape::Params::Frozen);
  CHECK(std::abs(-elbo(t).value().item() - log_px) < 1e-3);
  CHECK(a[0] == doctest::Approx(w / (w * w + s2)).epsilon(1e-3));
}

TEST_CASE("training on toy data lowers the loss and separates classes") {
  const ToyDataset data = generate_dataset({4000, 5});
  JointTrainConfig cfg;
  cfg.epochs = 3;
  cfg.seed = 2;
  std::size_t callbacks = 0;
  const JointTrainResult r = train_joint(data, cfg, [&](const JointEpochLoss&, const JointVae&) { ++callbacks; });
  CHECK(callbacks == 3);
  REQUIRE(r.trace.size() == 3);
  CHECK(r.trace.back().total < r.trace.front().total);
  const Tensor means = encode_means(r.model, data);
  CHECK(means.shape() == Shape{4000, 2});
  const auto labels = class_labels(data);
  const LogisticProbe probe = fit_logistic_probe(means, labels);
  CHECK(accuracy(probe.predict(means), labels) > 0.95);
}

TEST_CASE("joint training is deterministic per seed") {
  const ToyDataset data = generate_dataset({300, 6});
  JointTrainConfig cfg;
  cfg.model.head_width = 16;
  cfg.model.merge_width = 16;
  cfg.model.decoder_width = 16;
  cfg.epochs = 2;
  cfg.seed = 3;
  const JointTrainResult a = train_joint(data, cfg), b = train_joint(data, cfg);
  for (std::size_t e = 0; e < a.trace.size(); ++e) CHECK(a.trace[e].total == b.trace[e].total);
  CHECK(encode_means(a.model, data) == encode_means(b.model, data));
}
