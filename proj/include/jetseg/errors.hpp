#pragma once

#include <stdexcept>
#include <string>

namespace jetseg {

/// A layer, block or config description that cannot be built.
class InvalidSpec : public std::invalid_argument {
 public:
  explicit InvalidSpec(const std::string& what) : std::invalid_argument(what) {}
};

/// Input data (tensor shape, label range, file contents) violating a precondition.
class InvalidInput : public std::invalid_argument {
 public:
  explicit InvalidInput(const std::string& what) : std::invalid_argument(what) {}
};

/// A ModelConfig field violating an invariant; `field()` names it.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string field, const std::string& what)
      : std::runtime_error(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// Metric with no defined value (e.g. mIoU when every class is absent).
class UndefinedMetric : public std::domain_error {
 public:
  explicit UndefinedMetric(const std::string& what) : std::domain_error(what) {}
};

}  // namespace jetseg
