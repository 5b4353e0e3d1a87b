#pragma once

#include <stdexcept>
#include <string>

namespace jnflow {

/// Precondition or shape rule violated by the caller.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Math function evaluated outside its domain (log of non-positive, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Non-finite or ill-conditioned intermediate values.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class OptimizerError : public std::runtime_error {
 public:
  OptimizerError(std::string param, const std::string& what)
      : std::runtime_error(what), param_(std::move(param)) {}
  const std::string& param() const { return param_; }

 private:
  std::string param_;
};

/// Training diverged. `term` names the loss component that went non-finite.
class TrainingError : public std::runtime_error {
 public:
  TrainingError(std::string term, const std::string& what)
      : std::runtime_error(what), term_(std::move(term)) {}
  const std::string& term() const { return term_; }

 private:
  std::string term_;
};

class SamplingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A pipeline stage was invoked without its prerequisite artifact, or with
/// an artifact produced for a different upstream stage.
class PipelineOrderError : public std::runtime_error {
 public:
  PipelineOrderError(std::string missing, const std::string& what)
      : std::runtime_error(what), missing_(std::move(missing)) {}
  const std::string& missing() const { return missing_; }

 private:
  std::string missing_;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace jnflow
