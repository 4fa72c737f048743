#include "manta/http_url.hpp"

#include "manta/error.hpp"

namespace manta {

HttpUrl HttpUrl::parse(std::string_view url) {
    auto scheme_end = url.find("://");
    if (scheme_end == std::string_view::npos) throw Error(ErrorCode::InvalidArgument, "URL has no scheme: " + std::string(url));
    auto scheme = url.substr(0, scheme_end);
    if (scheme != "http" && scheme != "https") {
        throw Error(ErrorCode::InvalidArgument, "unsupported URL scheme: " + std::string(scheme));
    }
    auto path_start = url.find('/', scheme_end + 3);
    HttpUrl out;
    if (path_start == std::string_view::npos) {
        out.origin = std::string(url);
    } else {
        out.origin = std::string(url.substr(0, path_start));
        out.path_prefix = std::string(url.substr(path_start));
        while (!out.path_prefix.empty() && out.path_prefix.back() == '/') out.path_prefix.pop_back();
    }
    if (out.origin.size() <= scheme_end + 3) throw Error(ErrorCode::InvalidArgument, "URL has no host: " + std::string(url));
    return out;
}

} // namespace manta
