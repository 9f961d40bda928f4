#pragma once

#include <stdexcept>
#include <string>

namespace pillarseg {

// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

#define PILLARSEG_DEFINE_ERROR(NAME)                              \
  class NAME : public Error {                                     \
   public:                                                        \
    explicit NAME(const std::string& what) : Error(#NAME ": " + what) {} \
  }

// dataset-io
PILLARSEG_DEFINE_ERROR(TruncatedScan);
PILLARSEG_DEFINE_ERROR(TruncatedLabels);
PILLARSEG_DEFINE_ERROR(NonFiniteValue);
PILLARSEG_DEFINE_ERROR(UnknownRawId);
PILLARSEG_DEFINE_ERROR(MalformedPoseLine);
PILLARSEG_DEFINE_ERROR(MissingCalibTr);
PILLARSEG_DEFINE_ERROR(PairMismatch);

// grid-geometry
PILLARSEG_DEFINE_ERROR(IndexOutOfGrid);
PILLARSEG_DEFINE_ERROR(InvalidGridSpec);

// pillar-encoder
PILLARSEG_DEFINE_ERROR(NotCropped);
PILLARSEG_DEFINE_ERROR(DuplicateCoord);

// occupancy-mapper
PILLARSEG_DEFINE_ERROR(DegenerateRay);

// tensor-engine
PILLARSEG_DEFINE_ERROR(ShapeMismatch);
PILLARSEG_DEFINE_ERROR(OddDimension);
PILLARSEG_DEFINE_ERROR(NonScalarLoss);
PILLARSEG_DEFINE_ERROR(TapeConsumed);

// segnet-model
PILLARSEG_DEFINE_ERROR(ModeMismatch);
PILLARSEG_DEFINE_ERROR(DivisibilityError);

// trainer
PILLARSEG_DEFINE_ERROR(EmptyDataset);
PILLARSEG_DEFINE_ERROR(DivergedLoss);

// metrics-eval
PILLARSEG_DEFINE_ERROR(LengthMismatch);
PILLARSEG_DEFINE_ERROR(MissingObservability);

// io / cli
PILLARSEG_DEFINE_ERROR(IoFailure);
PILLARSEG_DEFINE_ERROR(FormatError);
PILLARSEG_DEFINE_ERROR(ConfigError);

#undef PILLARSEG_DEFINE_ERROR

}  // namespace pillarseg
