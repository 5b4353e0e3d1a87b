#include <doctest.h>

#include <cmath>

#include <Eigen/Dense>

#include "jnflow/metrics.hpp"
#include "jnflow/projectors.hpp"
#include "support/gradcheck.hpp"

using namespace jnflow;
using namespace jnflow::testing;

namespace {

double total_correlation(const Tensor& a, const Tensor& b, double eps = kDefaultCovEps) {
  Tape t(Tape::Params::Frozen);
  return dcca_total_correlation(t.constant(a), t.constant(b), eps).value().item();
}

double infonce(const std::vector<Tensor>& e, double tau = kDefaultTemperature) {
  Tape t(Tape::Params::Frozen);
  std::vector<Var> vs;
  for (const auto& x : e) vs.push_back(t.constant(x));
  return infonce_loss(vs, tau).value().item();
}

double softplus(double x) { return std::log1p(std::exp(x)); }

/// Scores along the leading principal axis of (n x k) embeddings.
Tensor first_principal_axis(const Tensor& e) {
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const Eigen::Map<const RowMat> x(e.data().data(), e.rows(), e.cols());
  const RowMat centered = x.rowwise() - x.colwise().mean();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(centered.transpose() * centered);
  const Eigen::VectorXd scores = centered * eig.eigenvectors().col(e.cols() - 1);
  return Tensor({e.rows(), 1}, std::vector<double>(scores.data(), scores.data() + scores.size()));
}

}  // namespace

TEST_CASE("perfectly correlated one-dimensional embeddings") {
  Rng rng(1);
  const Tensor e = normal_tensor({500, 1}, rng);
  CHECK(total_correlation(e, e) >= 0.999);
  // Affine maps leave canonical correlations unchanged.
  Tensor f = e;
  for (double& v : f.storage()) v = -3.0 * v + 2.0;
  CHECK(total_correlation(e, f) >= 0.999);
}

TEST_CASE("independent noise has small total correlation") {
  Rng rng(2);
  const Tensor a = normal_tensor({2000, 2}, rng), b = normal_tensor({2000, 2}, rng);
  CHECK(total_correlation(a, b) < 0.15);
}

TEST_CASE("planted canonical correlations are recovered") {
  Rng rng(3);
  const std::size_t n = 5000;
  const Tensor u = normal_tensor({n, 2}, rng), noise = normal_tensor({n, 2}, rng);
  const double rho[] = {0.9, 0.4};
  Tensor v({n, 2});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < 2; ++j) v(r, j) = rho[j] * u(r, j) + std::sqrt(1 - rho[j] * rho[j]) * noise(r, j);
  // Mix each view with an invertible map; CCA is invariant to it.
  const double a[2][2] = {{1.0, 0.5}, {-0.3, 2.0}}, b[2][2] = {{0.7, -1.1}, {0.4, 0.9}};
  Tensor x({n, 2}), y({n, 2});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < 2; ++j) {
      x(r, j) = a[j][0] * u(r, 0) + a[j][1] * u(r, 1);
      y(r, j) = b[j][0] * v(r, 0) + b[j][1] * v(r, 1);
    }
  const auto cc = canonical_correlations(x, y);
  REQUIRE(cc.size() == 2);
  CHECK(std::abs(cc[0] - 0.9) < 0.05);
  CHECK(std::abs(cc[1] - 0.4) < 0.05);
  CHECK(total_correlation(x, y) == doctest::Approx(cc[0] + cc[1]).epsilon(1e-9));
}

TEST_CASE("total correlation is symmetric and bounded by k") {
  Rng rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor a = normal_tensor({200, 3}, rng);
    Tensor b = normal_tensor({200, 3}, rng);
    for (std::size_t i = 0; i < b.size(); ++i) b[i] = a[i] + 0.3 * trial * b[i];
    const double ab = total_correlation(a, b), ba = total_correlation(b, a);
    CHECK(std::abs(ab - ba) < 1e-10);
    CHECK(ab >= 0.0);
    CHECK(ab <= 3.0);
  }
  for (double c : canonical_correlations(normal_tensor({300, 4}, rng), normal_tensor({300, 4}, rng))) CHECK(c >= 0.0);
}

TEST_CASE("batch must exceed the embedding dimension") {
  Rng rng(5);
  const Tensor a = normal_tensor({3, 3}, rng);
  Tape t;
  CHECK_THROWS_AS(dcca_total_correlation(t.constant(a), t.constant(a)), ContractViolation);
}

TEST_CASE("total correlation gradients through the eigendecomposition") {
  Rng rng(6);
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor a = normal_tensor({20, 3}, rng);
    Tensor b = normal_tensor({20, 3}, rng);
    for (std::size_t i = 0; i < b.size(); ++i) b[i] = 0.5 * a[i] + b[i];
    const double err = gradcheck(
        [](Tape& t, const std::vector<Var>& in) { return dcca_total_correlation(in[0], in[1]); }, {a, b});
    CHECK(err < 1e-3);
  }
}

TEST_CASE("InfoNCE closed forms") {
  for (std::size_t k : {2u, 4u, 9u}) {
    const Tensor same({k, 3}, 0.7);
    CHECK(std::abs(infonce({same, same}) - 2.0 * k * std::log(static_cast<double>(k))) < 1e-9);
  }
  const Tensor eye = Tensor::matrix({{1, 0}, {0, 1}});
  CHECK(std::abs(infonce({eye, eye}) - 4.0 * softplus(-10.0)) < 1e-9);
  // Three modalities sum the three unordered pairs.
  CHECK(std::abs(infonce({eye, eye, eye}) - 12.0 * softplus(-10.0)) < 1e-9);
}

TEST_CASE("InfoNCE is invariant to positive rescaling") {
  Rng rng(7);
  const Tensor a = normal_tensor({6, 4}, rng), b = normal_tensor({6, 4}, rng);
  Tensor a2 = a;
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t j = 0; j < 4; ++j) a2(r, j) *= 0.1 + r;
  CHECK(infonce({a2, b}) == doctest::Approx(infonce({a, b})).epsilon(1e-12));
}

TEST_CASE("InfoNCE decreases as positives align with negatives fixed") {
  // Anchors e_1..e_3 in R^4; partners cos(th) e_i + sin(th) e_4 keep every
  // negative similarity at zero while the positive one grows as th -> 0.
  const std::size_t k = 3;
  Tensor a({k, 4});
  for (std::size_t i = 0; i < k; ++i) a(i, i) = 1.0;
  double prev = 2.0 * k * std::log(3.0) + 1e-12;
  for (int s = 20; s >= 0; --s) {
    const double th = s * (std::numbers::pi / 2) / 20;
    Tensor b({k, 4});
    for (std::size_t i = 0; i < k; ++i) {
      b(i, i) = std::cos(th);
      b(i, 3) = std::sin(th);
    }
    const double l = infonce({a, b});
    CHECK(l < prev);
    prev = l;
  }
}

TEST_CASE("InfoNCE needs at least two rows") {
  Tape t;
  const Tensor one({1, 3}, 1.0);
  CHECK_THROWS_AS(infonce_loss({t.constant(one), t.constant(one)}), ContractViolation);
}

TEST_CASE("trained one-dimensional projections separate the classes") {
  const ToyDataset data = generate_dataset({4000, 8});
  const auto labels = class_labels(data);
  const auto idx = all_indices(data);
  for (ProjectorMethod method : {ProjectorMethod::Cl, ProjectorMethod::Dcca}) {
    CAPTURE(to_string(method));
    ProjectorConfig cfg;
    cfg.method = method;
    // Cosine similarity of scalars is only their sign, which gives InfoNCE no
    // gradient; CL gets a small embedding and its first principal axis.
    cfg.k = method == ProjectorMethod::Dcca ? 1 : 4;
    cfg.hidden = {64, 64};
    cfg.epochs = 3;
    cfg.seed = 5;
    const ProjectorTrainResult r = train_projectors(data, cfg);
    for (std::size_t m = 0; m < 2; ++m) {
      const Tensor g = first_principal_axis(r.projectors.project(m, modality_matrix(data, static_cast<int>(m), idx)));
      const LogisticProbe probe = fit_logistic_probe(g, labels);
      CHECK(accuracy(probe.predict(g), labels) > 0.95);

      double mean[2] = {0, 0}, within = 0.0;
      std::size_t count[2] = {0, 0};
      for (std::size_t i = 0; i < g.rows(); ++i) {
        mean[labels[i]] += g[i];
        ++count[labels[i]];
      }
      for (int c = 0; c < 2; ++c) mean[c] /= count[c];
      for (std::size_t i = 0; i < g.rows(); ++i) within += (g[i] - mean[labels[i]]) * (g[i] - mean[labels[i]]);
      within /= g.rows();
      const double grand = 0.5 * (mean[0] + mean[1]);
      const double between = 0.5 * ((mean[0] - grand) * (mean[0] - grand) + (mean[1] - grand) * (mean[1] - grand));
      CHECK(within < 0.2 * between);
    }
    const ProjectorTrainResult again = train_projectors(data, cfg);
    CHECK(again.trace == r.trace);
    CHECK(again.projectors.project(0, modality_matrix(data, 0, idx)) ==
          r.projectors.project(0, modality_matrix(data, 0, idx)));
  }
}
