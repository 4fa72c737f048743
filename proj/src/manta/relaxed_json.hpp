#pragma once

#include <nlohmann/json.hpp>

#include <string_view>

namespace manta {

/// Parses the first JSON-like object or array embedded in LLM output.
///
/// Accepts strict JSON and the Python-literal dialect models tend to emit:
/// single-quoted strings, True/False/None, trailing commas. Leading prose and
/// code fences before the first '{' or '[' are skipped. Throws
/// Error(SchemaError) when no parseable value is found.
nlohmann::json parse_relaxed_json(std::string_view text);

} // namespace manta
