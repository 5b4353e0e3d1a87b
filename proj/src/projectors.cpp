#include "jnflow/projectors.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

#include "jnflow/joint_vae.hpp"

namespace jnflow {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Centered (b x k) embeddings -> (k x k) covariance e1^T e2 / (b - 1).
Var cross_cov(Var c1, Var c2) {
  const double inv = 1.0 / static_cast<double>(c1.rows() - 1);
  return ad::scale(ad::matmul(ad::transpose(c1), c2), inv);
}

Var center(Var e) { return ad::sub(e, ad::mean_cols(e)); }

RowMat to_eigen(const Tensor& t) {
  return Eigen::Map<const RowMat>(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                                  static_cast<Eigen::Index>(t.cols()));
}

Eigen::MatrixXd inv_sqrt(const Eigen::MatrixXd& s) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(s);
  if (solver.info() != Eigen::Success || !(solver.eigenvalues().minCoeff() > 0.0))
    throw NumericError("canonical_correlations: covariance is not positive definite");
  return solver.eigenvectors() * solver.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() *
         solver.eigenvectors().transpose();
}

}  // namespace

std::string to_string(ProjectorMethod m) { return m == ProjectorMethod::Dcca ? "dcca" : "cl"; }

ProjectorMethod projector_method_from_string(const std::string& name) {
  if (name == "dcca") return ProjectorMethod::Dcca;
  if (name == "cl") return ProjectorMethod::Cl;
  throw ConfigError("unknown projector method '" + name + "' (expected dcca or cl)");
}

Var dcca_total_correlation(Var e1, Var e2, double eps_cov) {
  if (e1.value().rank() != 2 || e1.shape() != e2.shape())
    throw ContractViolation("dcca_total_correlation: embeddings " + shape_string(e1.shape()) + " and " +
                            shape_string(e2.shape()) + " must be equal-shaped matrices");
  const std::size_t b = e1.rows(), k = e1.cols();
  if (b <= k)
    throw ContractViolation("dcca_total_correlation: batch " + std::to_string(b) + " must exceed k = " +
                            std::to_string(k));
  Tape& tape = *e1.tape;
  Var c1 = center(e1), c2 = center(e2);
  Var ridge = tape.constant([&] {
    Tensor r = Tensor::identity(k);
    for (double& v : r.storage()) v *= eps_cov;
    return r;
  }());
  Var s11 = ad::add(cross_cov(c1, c1), ridge);
  Var s22 = ad::add(cross_cov(c2, c2), ridge);
  Var s12 = cross_cov(c1, c2);
  Var t = ad::matmul(ad::matmul(ad::sym_inv_sqrt(s11), s12), ad::sym_inv_sqrt(s22));
  return ad::nuclear_norm_clamped(t);
}

std::vector<double> canonical_correlations(const Tensor& e1, const Tensor& e2, double eps_cov) {
  if (e1.rank() != 2 || e1.shape() != e2.shape() || e1.rows() <= e1.cols())
    throw ContractViolation("canonical_correlations: need equal (batch x k) embeddings with batch > k");
  RowMat a = to_eigen(e1), b = to_eigen(e2);
  a.rowwise() -= a.colwise().mean();
  b.rowwise() -= b.colwise().mean();
  const double inv = 1.0 / static_cast<double>(a.rows() - 1);
  const Eigen::Index k = a.cols();
  const Eigen::MatrixXd ridge = eps_cov * Eigen::MatrixXd::Identity(k, k);
  const Eigen::MatrixXd s11 = inv * a.transpose() * a + ridge;
  const Eigen::MatrixXd s22 = inv * b.transpose() * b + ridge;
  const Eigen::MatrixXd s12 = inv * a.transpose() * b;
  const Eigen::MatrixXd t = inv_sqrt(s11) * s12 * inv_sqrt(s22);
  const Eigen::VectorXd s = Eigen::JacobiSVD<Eigen::MatrixXd>(t).singularValues();
  return {s.data(), s.data() + s.size()};
}

Var infonce_loss(const std::vector<Var>& embeddings, double tau) {
  if (embeddings.size() < 2) throw ContractViolation("infonce_loss: need at least two modalities");
  if (!(tau > 0.0)) throw ContractViolation("infonce_loss: temperature must be positive");
  const Shape& shape = embeddings.front().shape();
  for (Var e : embeddings)
    if (e.value().rank() != 2 || e.shape() != shape)
      throw ContractViolation("infonce_loss: embeddings must be equal-shaped (K x k) matrices");
  if (shape[0] < 2) throw ContractViolation("infonce_loss: need K >= 2 aligned samples");

  std::vector<Var> unit;
  for (Var e : embeddings) {
    Var sq = ad::clamp(ad::sum_rows(ad::square(e)), 1e-24, std::numeric_limits<double>::infinity());
    unit.push_back(ad::scale_rows(e, ad::exp(ad::scale(ad::log(sq), -0.5))));
  }
  Var total;
  bool first = true;
  for (std::size_t a = 0; a < unit.size(); ++a)
    for (std::size_t b = a + 1; b < unit.size(); ++b) {
      Var s = ad::scale(ad::matmul(unit[a], ad::transpose(unit[b])), 1.0 / tau);
      Var diag = ad::scale(ad::sum_rows(ad::mul(unit[a], unit[b])), 1.0 / tau);
      Var ab = ad::sum(ad::sub(ad::logsumexp_rows(s), diag));
      Var ba = ad::sum(ad::sub(ad::logsumexp_rows(ad::transpose(s)), diag));
      Var pair = ad::add(ab, ba);
      total = first ? pair : ad::add(total, pair);
      first = false;
    }
  return total;
}

ProjectorSet::ProjectorSet(const ProjectorConfig& cfg, std::size_t input_dim, std::size_t modalities,
                           std::uint64_t seed)
    : cfg_(cfg) {
  if (cfg.k == 0) throw ContractViolation("ProjectorSet: projection dimension must be positive");
  std::vector<std::size_t> widths{input_dim};
  widths.insert(widths.end(), cfg.hidden.begin(), cfg.hidden.end());
  widths.push_back(cfg.k);
  for (std::size_t j = 0; j < modalities; ++j) {
    nets_.emplace_back(widths, Activation::Tanh, Activation::Identity);
    init_params(nets_.back(), mix_seed(seed + 101 + j));
  }
}

Var ProjectorSet::forward(Tape& tape, std::size_t modality, Var x) const {
  return nets_.at(modality).forward(tape, x);
}

Tensor ProjectorSet::project(std::size_t modality, const Tensor& x) const {
  Tape tape(Tape::Params::Frozen);
  return forward(tape, modality, tape.constant(x)).value();
}

void ProjectorSet::collect_params(ParamList& out) {
  for (std::size_t j = 0; j < nets_.size(); ++j) nets_[j].collect_params("proj" + std::to_string(j), out);
}

Var projector_loss(Tape& tape, const ProjectorSet& g, const std::vector<Tensor>& x) {
  if (x.size() != g.modalities()) throw ContractViolation("projector_loss: one input per modality required");
  std::vector<Var> e;
  for (std::size_t j = 0; j < x.size(); ++j) e.push_back(g.forward(tape, j, tape.constant(x[j])));
  if (g.config().method == ProjectorMethod::Cl) return infonce_loss(e, g.config().tau);
  Var total;
  bool first = true;
  for (std::size_t a = 0; a < e.size(); ++a)
    for (std::size_t b = a + 1; b < e.size(); ++b) {
      Var c = dcca_total_correlation(e[a], e[b], g.config().eps_cov);
      total = first ? c : ad::add(total, c);
      first = false;
    }
  return ad::negate(total);
}

ProjectorTrainResult train_projectors(const ToyDataset& data, const ProjectorConfig& cfg,
                                      const std::function<void(std::size_t, double)>& on_epoch) {
  if (data.size() == 0) throw ContractViolation("train_projectors: empty dataset");
  if (cfg.method == ProjectorMethod::Dcca && cfg.batch_size <= cfg.k)
    throw ContractViolation("train_projectors: DCCA batch size must exceed k");
  if (cfg.batch_size < 2) throw ContractViolation("train_projectors: batch size must be at least 2");
  ProjectorTrainResult result{ProjectorSet(cfg, kImagePixels, 2, cfg.seed), {}};
  ParamList params;
  result.projectors.collect_params(params);
  AdamState adam;
  adam.lr = cfg.lr;
  Rng rng = make_rng(cfg.seed, 2);
  std::vector<std::size_t> order = all_indices(data);
  const std::size_t min_batch = cfg.method == ProjectorMethod::Dcca ? cfg.k + 1 : 2;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      if (end - start < min_batch) continue;
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      MultimodalBatch batch = make_batch(data, idx);
      Tape tape;
      Var loss = projector_loss(tape, result.projectors, batch.modalities);
      const double v = loss.value().item();
      if (!std::isfinite(v))
        throw TrainingError(to_string(cfg.method), "train_projectors: loss diverged at epoch " +
                                                       std::to_string(epoch));
      tape.backward(loss);
      adam_step(adam, params, collect_grads(tape, params));
      sum += v;
      ++batches;
    }
    const double mean = batches ? sum / static_cast<double>(batches) : 0.0;
    result.trace.push_back(mean);
    if (on_epoch) on_epoch(epoch, mean);
  }
  return result;
}

}  // namespace jnflow
