#pragma once

#include <stdexcept>
#include <string>

namespace fsps {

/// Base class for all domain errors raised by this library.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Dataset / episode sampling
struct SplitOverlapError : Error { using Error::Error; };
struct MissingClassError : Error { using Error::Error; };
struct InsufficientExamplesError : Error { using Error::Error; };
struct InsufficientClassesError : Error { using Error::Error; };
struct MissingTargetDomainError : Error { using Error::Error; };

// Numerics / model
struct ShapeError : Error { using Error::Error; };
struct NumericError : Error { using Error::Error; };
struct DegenerateVectorError : Error { using Error::Error; };
struct TrainingDivergedError : Error { using Error::Error; };
struct AdaptationDivergedError : Error { using Error::Error; };
struct StateMismatchError : Error { using Error::Error; };

// Decoding / evaluation
struct AlreadyDecodedError : Error { using Error::Error; };
struct UnknownPresetError : Error { using Error::Error; };
struct UnsupportedInputError : Error { using Error::Error; };
struct NothingToReportError : Error { using Error::Error; };

// Configuration / IO
struct ConfigError : Error { using Error::Error; };

}  // namespace fsps
