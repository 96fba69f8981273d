#pragma once

#include <stdexcept>
#include <string>

namespace specagent {

// Every failure mode the library reports. Tests match on the code, messages
// carry the offending sample/row/step.
enum class ErrorCode {
  // dataset loading / validation
  NonUniformGrid,
  LengthMismatch,
  MissingLabel,
  ParseError,
  TooFewSamples,
  InsufficientReferenceSamples,
  // preprocessing
  SingularSystem,
  WindowTooLarge,
  ConstantSpectrum,
  DegenerateRegression,
  // feature extraction
  DimMismatch,
  DegenerateResponse,
  NonPositiveIntensity,
  ConstantReference,
  NegativeInput,
  // knowledge base
  EmptyCorpus,
  NoResolvablePlan,
  // llm gateway
  Timeout,
  RateLimited,
  ProviderError,
  BudgetExceeded,
  // response parsing
  UnparseableResponse,
  UnknownTaskType,
  MissingIds,
  DuplicateIds,
  // metrics
  IdMismatch,
  SingleClass,
  ConstantTruth,
  // baselines
  SingularCovariance,
  // cli
  ConfigError,
  AbortedByUser,
};

const char* to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void raise(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NonUniformGrid: return "NonUniformGrid";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::MissingLabel: return "MissingLabel";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::TooFewSamples: return "TooFewSamples";
    case ErrorCode::InsufficientReferenceSamples: return "InsufficientReferenceSamples";
    case ErrorCode::SingularSystem: return "SingularSystem";
    case ErrorCode::WindowTooLarge: return "WindowTooLarge";
    case ErrorCode::ConstantSpectrum: return "ConstantSpectrum";
    case ErrorCode::DegenerateRegression: return "DegenerateRegression";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::DegenerateResponse: return "DegenerateResponse";
    case ErrorCode::NonPositiveIntensity: return "NonPositiveIntensity";
    case ErrorCode::ConstantReference: return "ConstantReference";
    case ErrorCode::NegativeInput: return "NegativeInput";
    case ErrorCode::EmptyCorpus: return "EmptyCorpus";
    case ErrorCode::NoResolvablePlan: return "NoResolvablePlan";
    case ErrorCode::Timeout: return "Timeout";
    case ErrorCode::RateLimited: return "RateLimited";
    case ErrorCode::ProviderError: return "ProviderError";
    case ErrorCode::BudgetExceeded: return "BudgetExceeded";
    case ErrorCode::UnparseableResponse: return "UnparseableResponse";
    case ErrorCode::UnknownTaskType: return "UnknownTaskType";
    case ErrorCode::MissingIds: return "MissingIds";
    case ErrorCode::DuplicateIds: return "DuplicateIds";
    case ErrorCode::IdMismatch: return "IdMismatch";
    case ErrorCode::SingleClass: return "SingleClass";
    case ErrorCode::ConstantTruth: return "ConstantTruth";
    case ErrorCode::SingularCovariance: return "SingularCovariance";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::AbortedByUser: return "AbortedByUser";
  }
  return "UnknownError";
}

}  // namespace specagent
