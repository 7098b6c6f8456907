#pragma once

#include <stdexcept>
#include <string>

namespace reparam {

// Base class for every error raised by this library.  Callers that want a
// single catch site can catch reparam::Error; the subclasses distinguish
// user mistakes (bad site names, malformed data) from numerical failures.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A model emitted two sample sites with the same name in one execution.
struct DuplicateSite : Error {
  explicit DuplicateSite(const std::string& m) : Error("duplicate site: " + m) {}
};

// A name was looked up (conditioning data, parameterisation key, ...) that
// does not correspond to any site of the model.
struct UnknownSite : Error {
  explicit UnknownSite(const std::string& m) : Error("unknown site: " + m) {}
};

// A distribution was constructed or evaluated with invalid parameters,
// e.g. a Normal scale that is zero, negative, or not finite.
struct InvalidDistribution : Error {
  explicit InvalidDistribution(const std::string& m) : Error("invalid distribution: " + m) {}
};

// Vector lengths disagree: site values vs. event size, flat input vs.
// layout dimension, parameter vectors vs. site shape.
struct DimensionMismatch : Error {
  explicit DimensionMismatch(const std::string& m) : Error("dimension mismatch: " + m) {}
};

// A differentiated function produced a non-finite value.
struct NonFiniteEvaluation : Error {
  explicit NonFiniteEvaluation(const std::string& m) : Error("non-finite evaluation: " + m) {}
};

// A partial-centring coefficient was requested outside [0, 1] or keyed by
// a site that is not reparameterisable.
struct InvalidParameterisation : Error {
  explicit InvalidParameterisation(const std::string& m) : Error("invalid parameterisation: " + m) {}
};

// A dataset file does not match its declared schema.
struct SchemaError : Error {
  explicit SchemaError(const std::string& m) : Error("schema error: " + m) {}
};

// Every branch of a variational optimisation diverged or went non-finite.
struct OptimisationFailed : Error {
  explicit OptimisationFailed(const std::string& m) : Error("optimisation failed: " + m) {}
};

}  // namespace reparam
