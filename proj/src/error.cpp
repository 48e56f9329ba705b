#include "focusloop/error.hpp"

namespace focusloop {

std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::InvalidArgument: return "InvalidArgument";
        case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
        case ErrorCode::MalformedTrajectory: return "MalformedTrajectory";
        case ErrorCode::SchemaError: return "SchemaError";
        case ErrorCode::IoError: return "IoError";
        case ErrorCode::EmptyInput: return "EmptyInput";
        case ErrorCode::ParseError: return "ParseError";
        case ErrorCode::EmptySegments: return "EmptySegments";
        case ErrorCode::InvalidSegment: return "InvalidSegment";
        case ErrorCode::InvalidRegion: return "InvalidRegion";
        case ErrorCode::InvalidDimension: return "InvalidDimension";
        case ErrorCode::EmptyGroup: return "EmptyGroup";
        case ErrorCode::NoTrainableTokens: return "NoTrainableTokens";
        case ErrorCode::Divergence: return "Divergence";
        case ErrorCode::EmptyDemonstrations: return "EmptyDemonstrations";
        case ErrorCode::UnknownResolution: return "UnknownResolution";
        case ErrorCode::ScriptExhausted: return "ScriptExhausted";
        case ErrorCode::NotAnswered: return "NotAnswered";
        case ErrorCode::EmptyCorpus: return "EmptyCorpus";
        case ErrorCode::Timeout: return "Timeout";
        case ErrorCode::TransportError: return "TransportError";
        case ErrorCode::NonSuccessStatus: return "NonSuccessStatus";
        case ErrorCode::AuthMissing: return "AuthMissing";
        case ErrorCode::EmptyManifest: return "EmptyManifest";
        case ErrorCode::Undefined: return "Undefined";
    }
    return "Unknown";
}

}  // namespace focusloop
