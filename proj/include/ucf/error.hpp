#pragma once

#include <stdexcept>
#include <string>

namespace ucf {

// Base of every error raised by the library. `kind()` is a short stable token
// used by the CLI when it prints machine-parseable failures.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

struct ShapeError : Error {
  explicit ShapeError(const std::string& what) : Error("shape", what) {}
};

// A caller broke a documented precondition.
struct ContractError : Error {
  explicit ContractError(const std::string& what) : Error("contract", what) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error("config", what) {}
};

struct ParseError : Error {
  ParseError(const std::string& what, std::size_t line)
      : Error("parse", "line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

struct IntegrityError : Error {
  explicit IntegrityError(const std::string& what) : Error("integrity", what) {}
};

struct InsufficientPositivesError : Error {
  explicit InsufficientPositivesError(const std::string& what)
      : Error("insufficient_positives", what) {}
};

struct UnfittableError : Error {
  explicit UnfittableError(const std::string& what) : Error("unfittable", what) {}
};

// AUC with one class absent.
struct UndefinedMetricError : Error {
  explicit UndefinedMetricError(const std::string& what) : Error("undefined_metric", what) {}
};

// A class has fewer members than folds.
struct StratificationError : Error {
  explicit StratificationError(const std::string& what) : Error("stratification", what) {}
};

struct NumericalError : Error {
  explicit NumericalError(const std::string& what) : Error("numerical", what) {}
};

struct MissingInputError : Error {
  explicit MissingInputError(const std::string& path)
      : Error("missing_input", "missing input artifact: " + path), path_(path) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

}  // namespace ucf
