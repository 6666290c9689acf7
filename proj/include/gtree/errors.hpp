#pragma once

#include <stdexcept>
#include <string>

namespace gtree {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Problems with input data or configuration. The CLI maps these to exit code 2.
class DataError : public Error {
 public:
  using Error::Error;
};

// Numeric failures (non-finite values, degenerate geometry). CLI exit code 3.
class NumericFailure : public Error {
 public:
  using Error::Error;
};

// Misuse of an API contract (wrong shapes, wrong task kind, bad indices).
class ContractError : public Error {
 public:
  using Error::Error;
};

#define GTREE_DEFINE_ERROR(Name, Base) \
  class Name : public Base {           \
   public:                             \
    using Base::Base;                  \
  };

GTREE_DEFINE_ERROR(FormatError, DataError)
GTREE_DEFINE_ERROR(MultiRootError, DataError)
GTREE_DEFINE_ERROR(CycleError, DataError)
GTREE_DEFINE_ERROR(DegenerateEdgeError, DataError)
GTREE_DEFINE_ERROR(ConfigError, DataError)
GTREE_DEFINE_ERROR(CheckpointError, DataError)
GTREE_DEFINE_ERROR(MetricError, DataError)

GTREE_DEFINE_ERROR(NumericError, NumericFailure)
GTREE_DEFINE_ERROR(CollinearError, NumericFailure)
GTREE_DEFINE_ERROR(InfeasibleError, NumericFailure)
GTREE_DEFINE_ERROR(UnreachableNodeError, NumericFailure)

GTREE_DEFINE_ERROR(TransformError, ContractError)
GTREE_DEFINE_ERROR(ShapeError, ContractError)

#undef GTREE_DEFINE_ERROR

}  // namespace gtree
