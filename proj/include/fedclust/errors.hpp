#pragma once

#include <stdexcept>
#include <string>

namespace fedclust {

struct NonFiniteInput : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct InvalidConfig : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct InvalidParams : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct OutOfRange : std::domain_error {
  using std::domain_error::domain_error;
};

struct MalformedPayload : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct MissingResidual : std::logic_error {
  using std::logic_error::logic_error;
};

struct DimensionMismatch : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct EmptyShard : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct InvalidWeights : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct EmptyLedger : std::logic_error {
  using std::logic_error::logic_error;
};

struct InfeasibleSpec : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

}  // namespace fedclust
