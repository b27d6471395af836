#pragma once

#include <stdexcept>
#include <string>

namespace regatta {

// Every failure the library can signal, one code per contract violation.
enum class ErrorCode {
  // configuration / validation
  InvalidCourse,
  InvalidScript,
  // geometry
  DegenerateConfiguration,
  InsufficientInliers,
  PointAtInfinity,
  SingularMatrix,
  // tracking
  DimensionMismatch,
  AnchorFitFailed,
  // localization
  WrongClass,
  WrongCount,
  OutOfFrame,
  IncompleteFrame,
  MissingTip,
  UnknownSeat,
  NoCompleteFrames,
  // kinematics
  BadTaps,
  TooShort,
  NoOverlap,
  // stroke rate
  TooSparse,
  MissingRaster,
  NoPeaks,
  TooFewPeaks,
  // metrics
  DegenerateRanks,
  ClassMismatch,
  SingleAthleteClass,
  // I/O
  IoError,
  ParseError,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + what),
        code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

inline const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidCourse: return "InvalidCourse";
    case ErrorCode::InvalidScript: return "InvalidScript";
    case ErrorCode::DegenerateConfiguration: return "DegenerateConfiguration";
    case ErrorCode::InsufficientInliers: return "InsufficientInliers";
    case ErrorCode::PointAtInfinity: return "PointAtInfinity";
    case ErrorCode::SingularMatrix: return "SingularMatrix";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::AnchorFitFailed: return "AnchorFitFailed";
    case ErrorCode::WrongClass: return "WrongClass";
    case ErrorCode::WrongCount: return "WrongCount";
    case ErrorCode::OutOfFrame: return "OutOfFrame";
    case ErrorCode::IncompleteFrame: return "IncompleteFrame";
    case ErrorCode::MissingTip: return "MissingTip";
    case ErrorCode::UnknownSeat: return "UnknownSeat";
    case ErrorCode::NoCompleteFrames: return "NoCompleteFrames";
    case ErrorCode::BadTaps: return "BadTaps";
    case ErrorCode::TooShort: return "TooShort";
    case ErrorCode::NoOverlap: return "NoOverlap";
    case ErrorCode::TooSparse: return "TooSparse";
    case ErrorCode::MissingRaster: return "MissingRaster";
    case ErrorCode::NoPeaks: return "NoPeaks";
    case ErrorCode::TooFewPeaks: return "TooFewPeaks";
    case ErrorCode::DegenerateRanks: return "DegenerateRanks";
    case ErrorCode::ClassMismatch: return "ClassMismatch";
    case ErrorCode::SingleAthleteClass: return "SingleAthleteClass";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::ParseError: return "ParseError";
  }
  return "UnknownError";
}

}  // namespace regatta
