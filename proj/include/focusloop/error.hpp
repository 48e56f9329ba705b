#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace focusloop {

enum class ErrorCode {
    InvalidArgument,
    IndexOutOfRange,
    MalformedTrajectory,
    SchemaError,
    IoError,
    EmptyInput,
    ParseError,
    EmptySegments,
    InvalidSegment,
    InvalidRegion,
    InvalidDimension,
    EmptyGroup,
    NoTrainableTokens,
    Divergence,
    EmptyDemonstrations,
    UnknownResolution,
    ScriptExhausted,
    NotAnswered,
    EmptyCorpus,
    Timeout,
    TransportError,
    NonSuccessStatus,
    AuthMissing,
    EmptyManifest,
    Undefined,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Structured failure carried by every module. The code is stable and
/// machine-readable; the message is for humans.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace focusloop
