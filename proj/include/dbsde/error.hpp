#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace dbsde {

/// Failure category, used by the CLI to pick an exit code.
enum class ErrorKind {
  Validation,  // bad inputs: market, grid, measure, config, preconditions
  Numerical,   // the scheme itself failed: singular regression, step size, divergence
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string code, const std::string& what)
      : std::runtime_error(what), kind_(kind), code_(std::move(code)) {}

  ErrorKind kind() const noexcept { return kind_; }
  /// Short machine-readable tag, e.g. "invalid_market".
  const std::string& code() const noexcept { return code_; }

 private:
  ErrorKind kind_;
  std::string code_;
};

struct InvalidMarket : Error {
  explicit InvalidMarket(const std::string& w) : Error(ErrorKind::Validation, "invalid_market", w) {}
};
struct InvalidGrid : Error {
  explicit InvalidGrid(const std::string& w) : Error(ErrorKind::Validation, "invalid_grid", w) {}
};
struct InvalidMeasureChange : Error {
  explicit InvalidMeasureChange(const std::string& w)
      : Error(ErrorKind::Validation, "invalid_measure_change", w) {}
};
struct PreconditionError : Error {
  explicit PreconditionError(const std::string& w) : Error(ErrorKind::Validation, "precondition", w) {}
};
struct UnsupportedCase : Error {
  explicit UnsupportedCase(const std::string& w) : Error(ErrorKind::Validation, "unsupported_case", w) {}
};
struct ConfigMismatch : Error {
  explicit ConfigMismatch(const std::string& w) : Error(ErrorKind::Validation, "config_mismatch", w) {}
};

/// Collects every violated invariant of a configuration.
struct ConfigError : Error {
  explicit ConfigError(std::vector<std::string> violations)
      : Error(ErrorKind::Validation, "invalid_config", join(violations)),
        violations_(std::move(violations)) {}
  const std::vector<std::string>& violations() const noexcept { return violations_; }

 private:
  static std::string join(const std::vector<std::string>& v) {
    std::string out;
    for (const auto& s : v) {
      if (!out.empty()) out += "; ";
      out += s;
    }
    return out;
  }
  std::vector<std::string> violations_;
};

struct SingularRegression : Error {
  explicit SingularRegression(const std::string& w) : Error(ErrorKind::Numerical, "singular_regression", w) {}
};
struct StepSizeError : Error {
  explicit StepSizeError(const std::string& w) : Error(ErrorKind::Numerical, "step_size", w) {}
};
struct DivergenceError : Error {
  explicit DivergenceError(const std::string& w) : Error(ErrorKind::Numerical, "divergence", w) {}
};
struct DegenerateBond : Error {
  explicit DegenerateBond(const std::string& w) : Error(ErrorKind::Numerical, "degenerate_bond", w) {}
};

}  // namespace dbsde
