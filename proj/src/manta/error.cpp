#include "manta/error.hpp"

namespace manta {

std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::MalformedDecomposition: return "MalformedDecomposition";
    case ErrorCode::BudgetExceeded: return "BudgetExceeded";
    case ErrorCode::ProviderError: return "ProviderError";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::UnparseableVerdict: return "UnparseableVerdict";
    case ErrorCode::EmptyEnhancement: return "EmptyEnhancement";
    case ErrorCode::NonFiniteInput: return "NonFiniteInput";
    case ErrorCode::EmptyCollection: return "EmptyCollection";
    case ErrorCode::CorruptSnapshot: return "CorruptSnapshot";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::NoCheckpointAvailable: return "NoCheckpointAvailable";
    case ErrorCode::BackendUnavailable: return "BackendUnavailable";
    case ErrorCode::ModelNotFound: return "ModelNotFound";
    case ErrorCode::Timeout: return "Timeout";
    case ErrorCode::UnreadableFile: return "UnreadableFile";
    case ErrorCode::SchemaError: return "SchemaError";
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::MissingMetadata: return "MissingMetadata";
    case ErrorCode::NoVerdicts: return "NoVerdicts";
    case ErrorCode::UnknownRun: return "UnknownRun";
    case ErrorCode::UnknownImage: return "UnknownImage";
    case ErrorCode::Io: return "Io";
    }
    return "Unknown";
}

ErrorCode parse_error_code(std::string_view text) {
    for (int i = 0; i <= static_cast<int>(ErrorCode::Io); ++i) {
        auto code = static_cast<ErrorCode>(i);
        if (to_string(code) == text) return code;
    }
    throw Error(ErrorCode::SchemaError, "unknown error code '" + std::string(text) + "'");
}

} // namespace manta
