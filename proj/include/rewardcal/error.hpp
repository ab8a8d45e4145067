// Copyright (C) 2026 The rewardcal Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace rewardcal {

enum class ErrorCode {
    // ingestion
    MalformedRecord,
    DuplicateId,
    MissingReference,
    ArityError,
    IoError,
    ConfigError,
    // calibration
    NonFiniteInput,
    NonPositiveTemperature,
    MissingCrossScore,
    MissingContrastSet,
    EmptyEnsemble,
    NegativeLambda,
    EmptyGrid,
    NoRetainedPrompts,
    // metrics
    OneClassOnly,
    LengthMismatch,
    KOutOfRange,
    DegenerateInput,
    MissingReward,
    // prompt synthesis
    WrongSet,
    InsufficientPrompts,
    UnknownCategory,
    EmptyCategories,
    EmptyResponse,
    LlmClientError,
    // selection
    EmptyInput,
    // simulator
    BadMisalignment,
    BadHyperparameter,
    TooShort,
    // reports
    NoEvaluation,
};

constexpr std::string_view to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::MalformedRecord: return "MalformedRecord";
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::MissingReference: return "MissingReference";
    case ErrorCode::ArityError: return "ArityError";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::NonFiniteInput: return "NonFiniteInput";
    case ErrorCode::NonPositiveTemperature: return "NonPositiveTemperature";
    case ErrorCode::MissingCrossScore: return "MissingCrossScore";
    case ErrorCode::MissingContrastSet: return "MissingContrastSet";
    case ErrorCode::EmptyEnsemble: return "EmptyEnsemble";
    case ErrorCode::NegativeLambda: return "NegativeLambda";
    case ErrorCode::EmptyGrid: return "EmptyGrid";
    case ErrorCode::NoRetainedPrompts: return "NoRetainedPrompts";
    case ErrorCode::OneClassOnly: return "OneClassOnly";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::KOutOfRange: return "KOutOfRange";
    case ErrorCode::DegenerateInput: return "DegenerateInput";
    case ErrorCode::MissingReward: return "MissingReward";
    case ErrorCode::WrongSet: return "WrongSet";
    case ErrorCode::InsufficientPrompts: return "InsufficientPrompts";
    case ErrorCode::UnknownCategory: return "UnknownCategory";
    case ErrorCode::EmptyCategories: return "EmptyCategories";
    case ErrorCode::EmptyResponse: return "EmptyResponse";
    case ErrorCode::LlmClientError: return "LlmClientError";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::BadMisalignment: return "BadMisalignment";
    case ErrorCode::BadHyperparameter: return "BadHyperparameter";
    case ErrorCode::TooShort: return "TooShort";
    case ErrorCode::NoEvaluation: return "NoEvaluation";
    }
    return "Unknown";
}

/// Every failure raised by the library carries a machine-readable code.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
    throw Error(code, message);
}

} // namespace rewardcal
