#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace manta {

enum class ErrorCode {
    InvalidArgument,
    MalformedDecomposition,
    BudgetExceeded,
    ProviderError,
    DimensionMismatch,
    UnparseableVerdict,
    EmptyEnhancement,
    NonFiniteInput,
    EmptyCollection,
    CorruptSnapshot,
    VersionMismatch,
    NoCheckpointAvailable,
    BackendUnavailable,
    ModelNotFound,
    Timeout,
    UnreadableFile,
    SchemaError,
    DuplicateId,
    MissingMetadata,
    NoVerdicts,
    UnknownRun,
    UnknownImage,
    Io,
};

std::string_view to_string(ErrorCode code) noexcept;
ErrorCode parse_error_code(std::string_view text);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

/// Provider failures carry whether another attempt could succeed (5xx, 429, transport).
class ProviderFailure : public Error {
public:
    ProviderFailure(const std::string& message, bool retryable, int http_status = 0)
        : Error(ErrorCode::ProviderError, message), retryable_(retryable), http_status_(http_status) {}

    bool retryable() const noexcept { return retryable_; }
    int http_status() const noexcept { return http_status_; }

private:
    bool retryable_;
    int http_status_;
};

} // namespace manta
