#pragma once

#include <stdexcept>
#include <string>

namespace ulip {

// Base class for every error raised by this library. Subtypes exist so
// callers (and tests) can catch specific failure modes.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

#define ULIP_ERROR_TYPE(Name)                                                  \
    class Name : public Error {                                               \
      public:                                                                  \
        using Error::Error;                                                    \
    };

// tensor / autodiff
ULIP_ERROR_TYPE(ShapeMismatch)
ULIP_ERROR_TYPE(NonScalarLoss)
ULIP_ERROR_TYPE(GraphAlreadyConsumed)
ULIP_ERROR_TYPE(NonFiniteValue)
ULIP_ERROR_TYPE(DegenerateEmbedding)

// point clouds
ULIP_ERROR_TYPE(EmptyCloud)
ULIP_ERROR_TYPE(UnknownCategory)

// encoder
ULIP_ERROR_TYPE(BadArchitecture)
ULIP_ERROR_TYPE(RaggedBatch)

// anchors
ULIP_ERROR_TYPE(EmptyWord)
ULIP_ERROR_TYPE(NoCandidates)
ULIP_ERROR_TYPE(BadMagic)
ULIP_ERROR_TYPE(DimMismatch)
ULIP_ERROR_TYPE(TruncatedFile)

// renderer
ULIP_ERROR_TYPE(UnnormalizedCloud)
ULIP_ERROR_TYPE(ResolutionMismatch)
ULIP_ERROR_TYPE(IoError)
ULIP_ERROR_TYPE(BadHeader)

// training
ULIP_ERROR_TYPE(NonUnitRows)
ULIP_ERROR_TYPE(DivergedLoss)
ULIP_ERROR_TYPE(MissingModality)

// evaluation
ULIP_ERROR_TYPE(EmptySplit)
ULIP_ERROR_TYPE(UnknownSetName)
ULIP_ERROR_TYPE(LabelGap)
ULIP_ERROR_TYPE(LengthMismatch)
ULIP_ERROR_TYPE(EmptyGallery)
ULIP_ERROR_TYPE(FractionTooSmall)

// dataset / manifest
ULIP_ERROR_TYPE(BadManifest)

#undef ULIP_ERROR_TYPE

} // namespace ulip
