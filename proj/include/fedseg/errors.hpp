#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fedseg {

// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

#define FEDSEG_DEFINE_ERROR(name)                               \
  class name : public Error {                                   \
   public:                                                      \
    explicit name(const std::string& what) : Error(what) {}     \
  }

// params
FEDSEG_DEFINE_ERROR(StructureMismatch);
FEDSEG_DEFINE_ERROR(NonFiniteResult);

class MalformedPayload : public Error {
 public:
  MalformedPayload(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

// models
FEDSEG_DEFINE_ERROR(ShapeMismatch);
FEDSEG_DEFINE_ERROR(NonFiniteLoss);
FEDSEG_DEFINE_ERROR(EmptyDataset);
FEDSEG_DEFINE_ERROR(SingularSystem);

// aggregate
FEDSEG_DEFINE_ERROR(EmptyUpdateSet);
FEDSEG_DEFINE_ERROR(ZeroTotalWeight);
FEDSEG_DEFINE_ERROR(MissingVariate);
FEDSEG_DEFINE_ERROR(StatefulModelRejected);

// transport
FEDSEG_DEFINE_ERROR(Timeout);
FEDSEG_DEFINE_ERROR(PeerDisconnected);
FEDSEG_DEFINE_ERROR(CrcMismatch);

class MalformedFrame : public Error {
 public:
  MalformedFrame(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

// workflows
FEDSEG_DEFINE_ERROR(ClientTimeout);
FEDSEG_DEFINE_ERROR(OrderResolutionError);
FEDSEG_DEFINE_ERROR(AggregatorClientFailure);
FEDSEG_DEFINE_ERROR(AggregationError);

// data
FEDSEG_DEFINE_ERROR(CapacityExceeded);
FEDSEG_DEFINE_ERROR(DatasetTooSmall);
FEDSEG_DEFINE_ERROR(InvalidK);

// metrics
FEDSEG_DEFINE_ERROR(EmptyEvaluationSet);
FEDSEG_DEFINE_ERROR(EmptyInput);

// accounting
FEDSEG_DEFINE_ERROR(NegativeDuration);
FEDSEG_DEFINE_ERROR(ZeroBaseline);

// experiment config
FEDSEG_DEFINE_ERROR(ConfigInvalid);

#undef FEDSEG_DEFINE_ERROR

}  // namespace fedseg
