#pragma once

#include <stdexcept>
#include <string>

namespace cilforge {

// Base for every error the framework raises. The harness catches this type at
// the task boundary and rethrows with task context.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define CILFORGE_DEFINE_ERROR(Name)                 \
  class Name : public Error {                       \
   public:                                          \
    using Error::Error;                             \
  }

CILFORGE_DEFINE_ERROR(DimensionError);
CILFORGE_DEFINE_ERROR(NumericInputError);
CILFORGE_DEFINE_ERROR(LabelError);
CILFORGE_DEFINE_ERROR(ContractError);
CILFORGE_DEFINE_ERROR(SpecError);
CILFORGE_DEFINE_ERROR(ConfigurationError);
CILFORGE_DEFINE_ERROR(RangeError);
CILFORGE_DEFINE_ERROR(SplitError);
CILFORGE_DEFINE_ERROR(FormatError);
CILFORGE_DEFINE_ERROR(SelectionError);
CILFORGE_DEFINE_ERROR(StateError);
CILFORGE_DEFINE_ERROR(FactoryError);
CILFORGE_DEFINE_ERROR(FitError);
CILFORGE_DEFINE_ERROR(EvaluationError);
CILFORGE_DEFINE_ERROR(IoError);

#undef CILFORGE_DEFINE_ERROR

/// Sinkhorn did not reach its marginal tolerance within the iteration budget.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double residual)
      : Error(what), residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

/// Invalid run configuration; `field()` names the offending key path.
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& what)
      : Error(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// A module error raised while a run was processing `task()`.
class TaskError : public Error {
 public:
  TaskError(std::size_t task, const std::string& what)
      : Error("task " + std::to_string(task) + ": " + what), task_(task) {}
  std::size_t task() const noexcept { return task_; }

 private:
  std::size_t task_;
};

}  // namespace cilforge
