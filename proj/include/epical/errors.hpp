#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace epical {

// Root of every error the library raises. `category()` decides the CLI exit
// status: data problems map to 2, numerical failures to 3.
class Error : public std::runtime_error {
 public:
  enum class Category { usage, data, numerical };

  Error(Category category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  Category category() const noexcept { return category_; }

 private:
  Category category_;
};

#define EPICAL_DEFINE_ERROR(Name, Cat)                                      \
  class Name : public Error {                                              \
   public:                                                                 \
    explicit Name(const std::string& what)                                 \
        : Error(Category::Cat, std::string(#Name ": ") + what) {}          \
  };

// autodiff
EPICAL_DEFINE_ERROR(InvalidValue, numerical)
EPICAL_DEFINE_ERROR(DomainError, numerical)
EPICAL_DEFINE_ERROR(StaleTape, numerical)

// neural
EPICAL_DEFINE_ERROR(ShapeError, usage)
EPICAL_DEFINE_ERROR(DivergedGradient, numerical)

// calibrate / mcmc / posterior
EPICAL_DEFINE_ERROR(SchemaError, data)
EPICAL_DEFINE_ERROR(DegenerateWeight, data)
EPICAL_DEFINE_ERROR(EnsembleFailed, numerical)
EPICAL_DEFINE_ERROR(OutOfSupport, numerical)
EPICAL_DEFINE_ERROR(GridMismatch, data)
EPICAL_DEFINE_ERROR(EmptyWindow, data)
EPICAL_DEFINE_ERROR(DegenerateLikelihoods, numerical)

// io
EPICAL_DEFINE_ERROR(GapError, data)
EPICAL_DEFINE_ERROR(ValueError, data)
EPICAL_DEFINE_ERROR(ConfigError, usage)

#undef EPICAL_DEFINE_ERROR

// Non-finite state produced by an integrator.
class BlowUp : public Error {
 public:
  explicit BlowUp(std::size_t step)
      : Error(Category::numerical,
              "BlowUp: non-finite state at step " + std::to_string(step)),
        step_(step) {}

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

class PretrainFailed : public Error {
 public:
  explicit PretrainFailed(double residual)
      : Error(Category::numerical,
              "PretrainFailed: residual " + std::to_string(residual) +
                  " after iteration cap"),
        residual_(residual) {}

  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

}  // namespace epical
