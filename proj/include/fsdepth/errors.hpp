#pragma once

#include <stdexcept>
#include <string>

namespace fsdepth {

/// Shape or width mismatch between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Input violates a documented value constraint (nonpositive depth, bad config key, ...).
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class BoundsError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// Caller broke an API precondition (e.g. backward from a non-scalar slot).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// The tape no longer agrees with its own recorded values.
class InternalError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Non-finite loss or gradient during training.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace fsdepth
