#include "jnflow/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace jnflow {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::size_t> widths(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream in(s);
  std::string part;
  while (std::getline(in, part, ',')) {
    part = trim(part);
    if (part.empty()) continue;
    try {
      std::size_t used = 0;
      const long v = std::stol(part, &used);
      if (used != part.size() || v <= 0) throw std::invalid_argument(part);
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw ConfigError("expected a comma list of positive widths, got '" + s + "'");
    }
  }
  return out;
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys{
      {"data.n_train", "20000", "training pairs (even)"},
      {"data.n_test", "2000", "test pairs (even)"},
      {"data.seed", "1", "training-set seed; the test set uses an independent stream"},
      {"joint.d_z", "2", "latent dimension"},
      {"joint.beta", "1", "KL weight"},
      {"joint.lambda", "1,1", "per-modality likelihood weights"},
      {"joint.merge_net", "true", "merge heads through a hidden layer (false: single linear map)"},
      {"joint.epochs", "10", "stage-1 epochs"},
      {"joint.batch_size", "128", "stage-1 batch size"},
      {"joint.lr", "0.001", "stage-1 Adam learning rate"},
      {"joint.seed", "1", "stage-1 initialization and noise seed"},
      {"proj.k", "10", "projection dimension"},
      {"proj.hidden", "256,256,256", "projector hidden widths"},
      {"proj.eps_cov", "0.0001", "DCCA covariance ridge"},
      {"proj.tau", "0.1", "contrastive temperature"},
      {"proj.epochs", "5", "projector epochs"},
      {"proj.batch_size", "256", "projector batch size"},
      {"proj.lr", "0.001", "projector Adam learning rate"},
      {"proj.seed", "1", "projector seed"},
      {"flows.mode", "raw", "conditioning: raw, shared-dcca or shared-cl"},
      {"flows.n_flows", "2", "MADE blocks per posterior (0: Gaussian posterior)"},
      {"flows.context_dim", "64", "context vector width"},
      {"flows.made_hidden", "128,128", "MADE hidden widths"},
      {"flows.epochs", "10", "stage-2 epochs"},
      {"flows.batch_size", "128", "stage-2 batch size"},
      {"flows.lr", "0.001", "stage-2 Adam learning rate"},
      {"flows.samples", "1", "joint-posterior draws per datapoint and step"},
      {"flows.seed", "1", "stage-2 seed"},
      {"hmc.steps", "100", "Metropolis transitions per sample"},
      {"hmc.leapfrog", "10", "leapfrog steps per transition"},
      {"hmc.step_size", "0.05", "initial leapfrog step size"},
      {"hmc.warmup", "20", "transitions during which low acceptance halves the step size"},
      {"hmc.seed", "1", "sampler seed"},
      {"eval.n_conditional", "2000", "conditional generations per direction"},
      {"eval.n_joint", "2000", "prior generations"},
      {"eval.classifier_n", "4000", "classifier training pairs"},
      {"eval.classifier_epochs", "5", "classifier epochs"},
      {"eval.min_accuracy", "0.99", "classifier accuracy required before scoring"},
      {"eval.seed", "1", "evaluation seed"},
  };
  return keys;
}

RunConfig::RunConfig() {
  for (const auto& k : config_keys()) values_[k.name] = k.default_value;
}

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig cfg;
  std::stringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value, got '" + t + "'");
    cfg.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

void RunConfig::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second = value;
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

double RunConfig::number(const std::string& key) const {
  const std::string& v = get(key);
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
}

std::size_t RunConfig::count(const std::string& key) const {
  const std::string& v = get(key);
  try {
    std::size_t used = 0;
    const long long n = std::stoll(v, &used);
    if (used != v.size() || n < 0) throw std::invalid_argument(v);
    return static_cast<std::size_t>(n);
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
}

std::uint64_t RunConfig::seed(const std::string& key) const {
  const std::string& v = get(key);
  try {
    std::size_t used = 0;
    const unsigned long long n = std::stoull(v, &used);
    if (used != v.size() || v.front() == '-') throw std::invalid_argument(v);
    return n;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected an unsigned integer seed, got '" + v + "'");
  }
}

bool RunConfig::flag(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

void RunConfig::set_all_seeds(std::uint64_t s) {
  for (auto& [k, v] : values_)
    if (k.size() > 5 && k.compare(k.size() - 5, 5, ".seed") == 0) v = std::to_string(s);
}

std::string RunConfig::text() const {
  std::string out;
  for (const auto& k : config_keys()) out += k.name + " = " + values_.at(k.name) + "\n";
  return out;
}

ToyDatasetConfig RunConfig::train_data() const {
  const std::size_t n = count("data.n_train");
  if (n % 2) throw ConfigError("data.n_train must be even");
  return {n, seed("data.seed")};
}

ToyDatasetConfig RunConfig::test_data() const {
  const std::size_t n = count("data.n_test");
  if (n % 2) throw ConfigError("data.n_test must be even");
  return {n, mix_seed(seed("data.seed") ^ 0x7E57DA7AULL)};
}

JointTrainConfig RunConfig::joint() const {
  JointTrainConfig c;
  c.model.d_z = count("joint.d_z");
  c.model.beta = number("joint.beta");
  if (!(c.model.beta >= 0.0)) throw ConfigError("joint.beta must be non-negative");
  std::vector<double> lambda;
  std::stringstream in(get("joint.lambda"));
  std::string part;
  while (std::getline(in, part, ',')) {
    try {
      lambda.push_back(std::stod(trim(part)));
    } catch (const std::exception&) {
      throw ConfigError("joint.lambda: expected a comma list of numbers");
    }
  }
  if (lambda.size() != 2 || lambda[0] <= 0 || lambda[1] <= 0)
    throw ConfigError("joint.lambda: need two positive weights");
  c.model.lambda = lambda;
  c.model.merge_net = flag("joint.merge_net");
  c.epochs = count("joint.epochs");
  c.batch_size = count("joint.batch_size");
  c.lr = number("joint.lr");
  c.seed = seed("joint.seed");
  if (c.model.d_z == 0 || c.batch_size == 0) throw ConfigError("joint.d_z and joint.batch_size must be positive");
  return c;
}

ProjectorConfig RunConfig::projectors(ProjectorMethod method) const {
  ProjectorConfig c;
  c.method = method;
  c.k = count("proj.k");
  c.hidden = widths(get("proj.hidden"));
  c.eps_cov = number("proj.eps_cov");
  c.tau = number("proj.tau");
  c.epochs = count("proj.epochs");
  c.batch_size = count("proj.batch_size");
  c.lr = number("proj.lr");
  c.seed = seed("proj.seed");
  if (c.k == 0 || !(c.tau > 0.0)) throw ConfigError("proj.k and proj.tau must be positive");
  return c;
}

Stage2Config RunConfig::stage2() const {
  Stage2Config c;
  c.mode = context_mode_from_string(get("flows.mode"));
  c.n_flows = count("flows.n_flows");
  c.context_dim = count("flows.context_dim");
  c.made_hidden = widths(get("flows.made_hidden"));
  c.epochs = count("flows.epochs");
  c.batch_size = count("flows.batch_size");
  c.lr = number("flows.lr");
  c.samples_per_datapoint = count("flows.samples");
  c.seed = seed("flows.seed");
  if (c.context_dim == 0 || c.batch_size == 0 || c.samples_per_datapoint == 0)
    throw ConfigError("flows.context_dim, flows.batch_size and flows.samples must be positive");
  return c;
}

HmcConfig RunConfig::hmc() const {
  HmcConfig c;
  c.n_transitions = count("hmc.steps");
  c.leapfrog_steps = count("hmc.leapfrog");
  c.step_size = number("hmc.step_size");
  c.warmup = count("hmc.warmup");
  c.seed = seed("hmc.seed");
  if (!(c.step_size > 0.0)) throw ConfigError("hmc.step_size must be positive");
  return c;
}

ClassifierConfig RunConfig::classifier() const {
  ClassifierConfig c;
  c.n_train = count("eval.classifier_n");
  c.epochs = count("eval.classifier_epochs");
  c.min_accuracy = number("eval.min_accuracy");
  c.seed = seed("eval.seed");
  if (c.n_train % 2) throw ConfigError("eval.classifier_n must be even");
  return c;
}

EvalConfig RunConfig::eval() const {
  EvalConfig c;
  c.n_conditional = count("eval.n_conditional");
  c.n_joint = count("eval.n_joint");
  c.seed = seed("eval.seed");
  return c;
}

}  // namespace jnflow
