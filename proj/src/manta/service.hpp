#pragma once

#include "manta/pipeline.hpp"

#include <nlohmann/json.hpp>

#include <memory>
#include <string>

namespace manta {

/// OpenAPI 3 description of the /v1 endpoints, served at /v1/spec.
const nlohmann::ordered_json& openapi_document();

struct HttpResponse {
    int status = 200;
    std::string content_type = "application/json";
    std::string body;
};

/// JSON-over-HTTP facade over an Engine.
///
/// Generations beyond `queue_capacity` in flight are refused with 409. Once
/// `async_threshold` generations are in flight, further ones are accepted as
/// background jobs and answered with 202 and a poll URL under /v1/jobs.
class Service {
public:
    explicit Service(Engine& engine);
    ~Service();

    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    /// Binds the socket. Port 0 picks a free one; returns the bound port.
    int bind(const std::string& host, int port);
    /// Serves until stop(). Requires bind().
    void listen();
    /// bind() + listen() on a background thread; returns once accepting.
    int start(const std::string& host, int port);
    void stop();

    /// Routes one request without a socket.
    HttpResponse handle(const std::string& method, const std::string& path, const std::string& body = {});

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

} // namespace manta
