#include "jnflow/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>

#include "jnflow/parallel.hpp"

namespace jnflow {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::MatrixXd as_matrix(const Tensor& t) {
  return Eigen::Map<const RowMat>(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                                  static_cast<Eigen::Index>(t.cols()));
}

/// Symmetric PSD square root with the -1e-10 tolerance.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(0.5 * (m + m.transpose()));
  if (solver.info() != Eigen::Success) throw NumericError("frechet_distance: eigendecomposition failed");
  Eigen::VectorXd lambda = solver.eigenvalues();
  for (Eigen::Index i = 0; i < lambda.size(); ++i) {
    if (lambda(i) < -1e-10)
      throw NumericError("frechet_distance: covariance has eigenvalue " + std::to_string(lambda(i)));
    lambda(i) = std::sqrt(std::max(lambda(i), 0.0));
  }
  return solver.eigenvectors() * lambda.asDiagonal() * solver.eigenvectors().transpose();
}

constexpr std::size_t kEvalChunk = 250;

Tensor one_hot(const std::vector<int>& labels, std::span<const std::size_t> idx) {
  Tensor t({idx.size(), 2});
  for (std::size_t r = 0; r < idx.size(); ++r) t(r, static_cast<std::size_t>(labels[idx[r]])) = 1.0;
  return t;
}

/// Row `i % n` of x for i in [0, count).
Tensor cycle_rows(const Tensor& x, std::size_t count) {
  const std::size_t c = x.cols();
  Tensor out({count, c});
  for (std::size_t i = 0; i < count; ++i)
    std::copy_n(x.storage().begin() + static_cast<std::ptrdiff_t>((i % x.rows()) * c), c,
                out.storage().begin() + static_cast<std::ptrdiff_t>(i * c));
  return out;
}

}  // namespace

std::vector<int> class_labels(const ToyDataset& data) {
  std::vector<int> out;
  out.reserve(data.size());
  for (const auto& s : data.samples) out.push_back(s.shape_class == ShapeClass::Full ? 0 : 1);
  return out;
}

Tensor binarize(const Tensor& probs) {
  Tensor out = probs;
  for (double& v : out.storage()) v = v >= 0.5 ? 1.0 : 0.0;
  return out;
}

ToyClassifier::ToyClassifier(const ClassifierConfig& cfg, std::size_t modalities, std::uint64_t seed) {
  std::vector<std::size_t> widths{static_cast<std::size_t>(kImagePixels)};
  widths.insert(widths.end(), cfg.hidden.begin(), cfg.hidden.end());
  widths.push_back(2);
  for (std::size_t j = 0; j < modalities; ++j) {
    nets_.emplace_back(widths, Activation::Tanh, Activation::Identity);
    init_params(nets_.back(), mix_seed(seed + 201 + j));
  }
}

Var ToyClassifier::logits(Tape& tape, std::size_t modality, Var x) const {
  return nets_.at(modality).forward(tape, x);
}

std::vector<int> ToyClassifier::predict(std::size_t modality, const Tensor& x) const {
  Tape tape(Tape::Params::Frozen);
  const Tensor& l = logits(tape, modality, tape.constant(x)).value();
  std::vector<int> out(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) out[r] = l(r, 1) > l(r, 0) ? 1 : 0;
  return out;
}

Tensor ToyClassifier::probabilities(std::size_t modality, const Tensor& x) const {
  Tape tape(Tape::Params::Frozen);
  Tensor p = logits(tape, modality, tape.constant(x)).value();
  for (std::size_t r = 0; r < p.rows(); ++r) {
    const double m = std::max(p(r, 0), p(r, 1));
    const double e0 = std::exp(p(r, 0) - m), e1 = std::exp(p(r, 1) - m);
    p(r, 0) = e0 / (e0 + e1);
    p(r, 1) = e1 / (e0 + e1);
  }
  return p;
}

Tensor ToyClassifier::features(std::size_t modality, const Tensor& x) const {
  Tape tape(Tape::Params::Frozen);
  const auto acts = nets_.at(modality).forward_all(tape, tape.constant(x));
  return acts.at(acts.size() - 2).value();
}

void ToyClassifier::collect_params(ParamList& out) {
  for (std::size_t j = 0; j < nets_.size(); ++j) nets_[j].collect_params("cls" + std::to_string(j), out);
}

ToyClassifier train_toy_classifier(const ClassifierConfig& cfg) {
  const ToyDataset train = generate_dataset({cfg.n_train, mix_seed(cfg.seed ^ 0xC1A55)});
  const ToyDataset test = generate_dataset({cfg.n_test, mix_seed(cfg.seed ^ 0x7E57)});
  ToyClassifier c(cfg, 2, cfg.seed);
  ParamList params;
  c.collect_params(params);
  AdamState adam;
  adam.lr = cfg.lr;
  Rng rng = make_rng(cfg.seed, 4);
  const std::vector<int> labels = class_labels(train);
  std::vector<std::size_t> order = all_indices(train);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      MultimodalBatch batch = make_batch(train, idx);
      Tape tape;
      Var target = tape.constant(one_hot(labels, idx));
      Var loss;
      for (std::size_t j = 0; j < 2; ++j) {
        Var l = c.logits(tape, j, tape.constant(batch.modalities[j]));
        Var ce = ad::mean(ad::sub(ad::logsumexp_rows(l), ad::sum_rows(ad::mul(l, target))));
        loss = j == 0 ? ce : ad::add(loss, ce);
      }
      if (!std::isfinite(loss.value().item()))
        throw TrainingError("cross-entropy", "train_toy_classifier: loss diverged");
      tape.backward(loss);
      adam_step(adam, params, collect_grads(tape, params));
    }
  }
  const std::vector<int> truth = class_labels(test);
  const std::vector<std::size_t> all = all_indices(test);
  for (int j = 0; j < 2; ++j)
    c.test_accuracy.push_back(
        accuracy(c.predict(static_cast<std::size_t>(j), modality_matrix(test, j, all)), truth));
  return c;
}

void require_fit(const ToyClassifier& c, double min_accuracy) {
  for (std::size_t j = 0; j < c.test_accuracy.size(); ++j)
    if (c.test_accuracy[j] < min_accuracy)
      throw EvaluationError("classifier for " + std::string(kModalityNames[j]) + " reaches only " +
                            std::to_string(c.test_accuracy[j]) + " test accuracy (< " + std::to_string(min_accuracy) +
                            "); refusing to score coherence");
  if (c.test_accuracy.empty()) throw EvaluationError("classifier has no recorded test accuracy");
}

std::vector<double> LogisticProbe::decision(const Tensor& x) const {
  if (x.cols() != weight.size()) throw ContractViolation("LogisticProbe: feature width mismatch");
  std::vector<double> out(x.rows(), bias);
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t i = 0; i < weight.size(); ++i) out[r] += weight[i] * (x(r, i) - mean[i]) / scale[i];
  return out;
}

std::vector<int> LogisticProbe::predict(const Tensor& x) const {
  std::vector<int> out;
  for (double v : decision(x)) out.push_back(v > 0.0 ? 1 : 0);
  return out;
}

LogisticProbe fit_logistic_probe(const Tensor& x, const std::vector<int>& labels, std::size_t steps, double lr) {
  if (x.rank() != 2 || x.rows() != labels.size() || x.rows() == 0)
    throw ContractViolation("fit_logistic_probe: features and labels must align");
  const std::size_t n = x.rows(), k = x.cols();
  LogisticProbe p;
  p.mean.assign(k, 0.0);
  p.scale.assign(k, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t i = 0; i < k; ++i) p.mean[i] += x(r, i) / static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t i = 0; i < k; ++i) p.scale[i] += std::pow(x(r, i) - p.mean[i], 2) / static_cast<double>(n);
  for (double& s : p.scale) s = std::sqrt(s) > 1e-12 ? std::sqrt(s) : 1.0;
  Tensor z({n, k}), y({n, 1});
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t i = 0; i < k; ++i) z(r, i) = (x(r, i) - p.mean[i]) / p.scale[i];
    y[r] = labels[r];
  }
  Tensor w({1, k}), b({1});
  ParamList params{{"probe.weight", &w}, {"probe.bias", &b}};
  AdamState adam;
  adam.lr = lr;
  for (std::size_t s = 0; s < steps; ++s) {
    Tape tape;
    Var logit = ad::linear(tape.constant(z), tape.param(w), tape.param(b));
    // Binary cross-entropy in logit form: softplus(l) - y l.
    Var loss = ad::mean(ad::sub(ad::softplus(logit), ad::mul(tape.constant(y), logit)));
    tape.backward(loss);
    adam_step(adam, params, collect_grads(tape, params));
  }
  p.weight.assign(w.storage().begin(), w.storage().end());
  p.bias = b[0];
  return p;
}

double accuracy(const std::vector<int>& predicted, const std::vector<int>& truth) { return coherence(predicted, truth); }

double coherence(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.empty()) throw ContractViolation("coherence: empty sample set");
  if (a.size() != b.size()) throw ContractViolation("coherence: label lists differ in length");
  std::size_t agree = 0;
  for (std::size_t i = 0; i < a.size(); ++i) agree += a[i] == b[i];
  return static_cast<double>(agree) / static_cast<double>(a.size());
}

double joint_coherence(const std::vector<std::vector<int>>& labels) {
  if (labels.empty() || labels.front().empty()) throw ContractViolation("joint_coherence: empty sample set");
  const std::size_t n = labels.front().size();
  std::size_t agree = 0;
  for (const auto& l : labels)
    if (l.size() != n) throw ContractViolation("joint_coherence: label lists differ in length");
  for (std::size_t i = 0; i < n; ++i) {
    bool same = true;
    for (const auto& l : labels) same = same && l[i] == labels.front()[i];
    agree += same;
  }
  return static_cast<double>(agree) / static_cast<double>(n);
}

FrechetStats frechet_stats(const Tensor& features, double jitter) {
  if (features.rank() != 2 || features.rows() < 2)
    throw ContractViolation("frechet_stats: need at least two feature rows");
  RowMat x = as_matrix(features);
  const Eigen::RowVectorXd mu = x.colwise().mean();
  x.rowwise() -= mu;
  Eigen::MatrixXd cov = x.transpose() * x / static_cast<double>(x.rows() - 1);
  cov.diagonal().array() += jitter;
  const std::size_t k = features.cols();
  FrechetStats s{Tensor({k}), Tensor({k, k})};
  for (std::size_t i = 0; i < k; ++i) {
    s.mean[i] = mu(static_cast<Eigen::Index>(i));
    for (std::size_t j = 0; j < k; ++j) s.cov(i, j) = cov(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }
  return s;
}

double frechet_distance(const FrechetStats& a, const FrechetStats& b) {
  const std::size_t k = a.mean.size();
  if (b.mean.size() != k || a.cov.rows() != k || a.cov.cols() != k || b.cov.rows() != k || b.cov.cols() != k)
    throw ContractViolation("frechet_distance: feature dimensions differ");
  double mean_term = 0.0;
  for (std::size_t i = 0; i < k; ++i) mean_term += std::pow(a.mean[i] - b.mean[i], 2);
  const Eigen::MatrixXd sa = as_matrix(a.cov), sb = as_matrix(b.cov);
  const Eigen::MatrixXd ra = psd_sqrt(sa);
  const Eigen::MatrixXd cross = psd_sqrt(ra * sb * ra);
  return std::max(0.0, mean_term + sa.trace() + sb.trace() - 2.0 * cross.trace());
}

Tensor conditional_latents(const UnimodalSet& set, std::size_t from, const Tensor& x_from, std::uint64_t seed) {
  const Tensor inputs = set.conditioning(from, x_from);
  const std::size_t n = inputs.rows();
  const std::size_t chunks = (n + kEvalChunk - 1) / kEvalChunk;
  std::vector<Tensor> parts(chunks);
  parallel_for(chunks, [&](std::size_t c) {
    Rng rng = make_rng(seed, 0xE000 + 0x100 * from + c);
    parts[c] = set.posteriors.at(from).sample_rows(row_range(inputs, c * kEvalChunk, std::min(n, (c + 1) * kEvalChunk)),
                                                  rng);
  });
  return stack_rows(parts);
}

Tensor decode_probs(const JointVae& joint, std::size_t modality, const Tensor& z) {
  const std::size_t n = z.rows();
  const std::size_t chunks = (n + kEvalChunk - 1) / kEvalChunk;
  std::vector<Tensor> parts(chunks);
  parallel_for(chunks, [&](std::size_t c) {
    Tape tape(Tape::Params::Frozen);
    parts[c] = joint.decode(tape, modality, tape.constant(row_range(z, c * kEvalChunk, std::min(n, (c + 1) * kEvalChunk))))
                   .value();
  });
  return stack_rows(parts);
}

CoherenceReport evaluate_pipeline(const JointVae& joint, const UnimodalSet& set, const ToyDataset& test,
                                  const ToyClassifier& classifier, const EvalConfig& cfg) {
  if (test.size() == 0) throw ContractViolation("evaluate_pipeline: empty test set");
  if (set.modalities() != joint.modalities())
    throw ConfigError("evaluate_pipeline: unimodal posteriors do not match the joint model");
  if (cfg.n_conditional == 0 || cfg.n_joint == 0) throw ContractViolation("evaluate_pipeline: sample counts must be positive");
  CoherenceReport report;
  report.seed = cfg.seed;
  report.n_joint = cfg.n_joint;
  report.classifier_accuracy = classifier.test_accuracy;
  const std::vector<std::size_t> all = all_indices(test);
  std::vector<Tensor> real;
  std::vector<FrechetStats> real_stats;
  for (int j = 0; j < 2; ++j) {
    real.push_back(modality_matrix(test, j, all));
    real_stats.push_back(frechet_stats(classifier.features(static_cast<std::size_t>(j), real.back())));
  }

  for (std::size_t from = 0; from < 2; ++from) {
    const std::size_t to = 1 - from;
    const Tensor cond = cycle_rows(real[from], cfg.n_conditional);
    const std::vector<int> cond_labels = classifier.predict(from, cond);
    const Tensor z = conditional_latents(set, from, cond, cfg.seed);
    const Tensor gen = binarize(decode_probs(joint, to, z));
    DirectionReport d;
    d.from = kModalityNames[from];
    d.to = kModalityNames[to];
    d.n = cfg.n_conditional;
    d.coherence = coherence(classifier.predict(to, gen), cond_labels);
    d.frechet = frechet_distance(frechet_stats(classifier.features(to, gen)), real_stats[to]);
    report.conditional.push_back(d);
  }

  Rng rng = make_rng(cfg.seed, 0xA11);
  const Tensor z = normal_tensor({cfg.n_joint, joint.latent_dim()}, rng);
  std::vector<std::vector<int>> labels;
  for (std::size_t j = 0; j < 2; ++j) {
    const Tensor gen = binarize(decode_probs(joint, j, z));
    labels.push_back(classifier.predict(j, gen));
    report.joint_frechet.push_back(frechet_distance(frechet_stats(classifier.features(j, gen)), real_stats[j]));
  }
  report.joint_coherence = joint_coherence(labels);
  return report;
}

nlohmann::ordered_json CoherenceReport::to_json() const {
  nlohmann::ordered_json j;
  j["seed"] = seed;
  j["conditional"] = nlohmann::ordered_json::array();
  for (const auto& d : conditional)
    j["conditional"].push_back({{"direction", d.from + "->" + d.to},
                                {"coherence", d.coherence},
                                {"frechet", d.frechet},
                                {"n", d.n}});
  j["joint"] = {{"direction", "prior->all"}, {"coherence", joint_coherence}, {"n", n_joint}};
  nlohmann::ordered_json fr = nlohmann::ordered_json::object();
  for (std::size_t m = 0; m < joint_frechet.size(); ++m) fr[kModalityNames[m]] = joint_frechet[m];
  j["joint"]["frechet"] = fr;
  j["classifier_accuracy"] = classifier_accuracy;
  j["checkpoint_hashes"] = checkpoints;
  return j;
}

void write_pgm_grid(const std::filesystem::path& path, const Tensor& images, std::size_t cols) {
  if (images.rank() != 2 || images.cols() != static_cast<std::size_t>(kImagePixels) || images.rows() == 0)
    throw ContractViolation("write_pgm_grid: expected (n x 1024) images");
  if (cols == 0) throw ContractViolation("write_pgm_grid: need at least one column");
  const std::size_t n = images.rows(), rows = (n + cols - 1) / cols;
  const std::size_t side = kImageSide, w = cols * (side + 1) + 1, h = rows * (side + 1) + 1;
  std::vector<int> canvas(w * h, 128);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t oy = (k / cols) * (side + 1) + 1, ox = (k % cols) * (side + 1) + 1;
    for (std::size_t r = 0; r < side; ++r)
      for (std::size_t c = 0; c < side; ++c) {
        const double v = std::clamp(images(k, r * side + c), 0.0, 1.0);
        canvas[(oy + r) * w + ox + c] = static_cast<int>(std::lround(255.0 * v));
      }
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_pgm_grid: cannot open " + path.string());
  out << "P2\n" << w << " " << h << "\n255\n";
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) out << canvas[y * w + x] << (x + 1 < w ? " " : "\n");
  }
  if (!out) throw std::runtime_error("write_pgm_grid: write failed for " + path.string());
}

}  // namespace jnflow
