#pragma once

#include <string>
#include <string_view>

namespace manta {

/// "http://host:8080/v1" -> origin "http://host:8080", path prefix "/v1".
struct HttpUrl {
    std::string origin;
    std::string path_prefix;

    static HttpUrl parse(std::string_view url);
    std::string path(std::string_view suffix) const { return path_prefix + std::string(suffix); }
};

} // namespace manta
