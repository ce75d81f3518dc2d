#ifndef GTF_COMMON_HPP
#define GTF_COMMON_HPP

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace gtf {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

// Process exit codes shared by the library's error types and the CLI.
enum class ExitCode : int {
  Success = 0,
  Config = 2,
  Divergence = 3,
  Io = 4,
};

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual ExitCode exit_code() const noexcept { return ExitCode::Config; }
};

// Violated precondition (shape mismatch, out-of-range argument).
class ContractError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::Divergence; }
};

class DivergenceError : public NumericError {
 public:
  DivergenceError(const std::string& what, std::int64_t step)
      : NumericError(what + " (step " + std::to_string(step) + ")"), step_(step) {}
  std::int64_t step() const noexcept { return step_; }

 private:
  std::int64_t step_;
};

class ConditioningError : public NumericError {
 public:
  ConditioningError(const std::string& what, double condition_number)
      : NumericError(what + " (condition number " + std::to_string(condition_number) + ")"),
        condition_number_(condition_number) {}
  double condition_number() const noexcept { return condition_number_; }

 private:
  double condition_number_;
};

class IoError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::Io; }
};

// Malformed file contents: truncation, bad magic, wrong version, parse failures.
class FormatError : public IoError {
 public:
  using IoError::IoError;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ContractError(message);
}

inline bool all_finite(const Eigen::Ref<const Matrix>& m) { return m.allFinite(); }

}  // namespace gtf

#endif  // GTF_COMMON_HPP
