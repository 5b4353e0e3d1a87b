#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "jnflow/hmc.hpp"
#include "jnflow/joint_vae.hpp"
#include "jnflow/metrics.hpp"
#include "jnflow/projectors.hpp"
#include "jnflow/unimodal.hpp"

namespace jnflow {

struct ConfigKey {
  std::string name;
  std::string default_value;
  std::string doc;
};

/// Every accepted key with its default, in documentation order.
const std::vector<ConfigKey>& config_keys();

/// Flat `section.key = value` settings. Blank lines and lines starting with
/// '#' are ignored; unknown keys are rejected.
class RunConfig {
 public:
  /// All defaults.
  RunConfig();
  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;
  double number(const std::string& key) const;
  std::size_t count(const std::string& key) const;
  std::uint64_t seed(const std::string& key) const;
  bool flag(const std::string& key) const;

  /// Sets every `*.seed` key to `s`.
  void set_all_seeds(std::uint64_t s);
  /// Canonical text: every key in documentation order.
  std::string text() const;
  const std::map<std::string, std::string>& values() const { return values_; }

  ToyDatasetConfig train_data() const;
  ToyDatasetConfig test_data() const;
  JointTrainConfig joint() const;
  ProjectorConfig projectors(ProjectorMethod method) const;
  Stage2Config stage2() const;
  HmcConfig hmc() const;
  ClassifierConfig classifier() const;
  EvalConfig eval() const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace jnflow
