#include "manta/manta.h"

#include "manta/error.hpp"
#include "manta/pipeline.hpp"
#include "manta/service.hpp"

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <memory>
#include <string>

struct manta_engine {
    std::unique_ptr<manta::Engine> engine;
    std::unique_ptr<manta::Service> service;  // socketless routing for manta_request
};

struct manta_server {
    std::unique_ptr<manta::Service> service;
};

namespace {

thread_local std::string last_error;

manta_status status_of(manta::ErrorCode code) {
    return static_cast<manta_status>(static_cast<int>(code) + 1);
}

manta_status fail(manta_status s, std::string message) {
    last_error = std::move(message);
    return s;
}

char* dup(const std::string& s) {
    auto* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (out) std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

// Runs body() and converts exceptions into a status plus last_error.
template <typename Fn>
manta_status guarded(Fn&& body) {
    last_error.clear();
    try {
        return body();
    } catch (const manta::Error& e) {
        return fail(status_of(e.code()), e.what());
    } catch (const std::exception& e) {
        return fail(MANTA_E_INTERNAL, e.what());
    } catch (...) {
        return fail(MANTA_E_INTERNAL, "unknown failure");
    }
}

nlohmann::json parse_json_arg(const char* text, const char* what) {
    if (!text || !*text) return nlohmann::json::object();
    try {
        return nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw manta::Error(manta::ErrorCode::SchemaError, std::string(what) + ": " + e.what());
    }
}

manta_status record_out(const manta::RunRecord& r, char** out) {
    *out = dup(manta::to_json(r).dump(2));
    if (r.failure) {
        return fail(status_of(r.failure->code),
                    std::string(manta::to_string(r.failure->stage)) + ": " + r.failure->message);
    }
    return MANTA_OK;
}

} // namespace

extern "C" {

const char* manta_version(void) { return MANTA_VERSION_STRING; }

const char* manta_status_name(manta_status status) {
    static const char* const names[] = {"OK",
                                        "InvalidArgument",
                                        "MalformedDecomposition",
                                        "BudgetExceeded",
                                        "ProviderError",
                                        "DimensionMismatch",
                                        "UnparseableVerdict",
                                        "EmptyEnhancement",
                                        "NonFiniteInput",
                                        "EmptyCollection",
                                        "CorruptSnapshot",
                                        "VersionMismatch",
                                        "NoCheckpointAvailable",
                                        "BackendUnavailable",
                                        "ModelNotFound",
                                        "Timeout",
                                        "UnreadableFile",
                                        "SchemaError",
                                        "DuplicateId",
                                        "MissingMetadata",
                                        "NoVerdicts",
                                        "UnknownRun",
                                        "UnknownImage",
                                        "Io",
                                        "Internal"};
    auto i = static_cast<std::size_t>(status);
    return i < sizeof(names) / sizeof(names[0]) ? names[i] : "Unknown";
}

const char* manta_last_error(void) { return last_error.c_str(); }

void manta_string_free(char* s) { std::free(s); }

manta_status manta_engine_create(const char* config_path, const char* config_json, manta_engine** out) {
    return guarded([&] {
        if (!out) return fail(MANTA_E_INVALID_ARGUMENT, "out is NULL");
        *out = nullptr;
        if (config_path && config_json) return fail(MANTA_E_INVALID_ARGUMENT, "pass a config path or JSON, not both");
        manta::EngineConfig cfg = config_path ? manta::EngineConfig::load(config_path)
                                  : config_json
                                      ? manta::EngineConfig::from_json(parse_json_arg(config_json, "config"),
                                                                       std::filesystem::current_path())
                                      : manta::EngineConfig::desk_defaults(std::filesystem::current_path());
        auto handle = std::make_unique<manta_engine>();
        handle->engine = std::make_unique<manta::Engine>(std::move(cfg));
        handle->service = std::make_unique<manta::Service>(*handle->engine);
        *out = handle.release();
        return MANTA_OK;
    });
}

void manta_engine_destroy(manta_engine* engine) { delete engine; }

manta_status manta_ingest(manta_engine* engine, const char* input_path, const char* collection, const char* kind,
                          int metadata_baseline, char** out_report_json) {
    return guarded([&] {
        if (!engine || !input_path || !collection || !kind || !out_report_json) {
            return fail(MANTA_E_INVALID_ARGUMENT, "NULL argument");
        }
        auto report = engine->engine->ingest(input_path, collection, manta::parse_document_kind(kind), metadata_baseline != 0);
        *out_report_json = dup(manta::to_json(report).dump(2));
        return MANTA_OK;
    });
}

manta_status manta_run(manta_engine* engine, const char* prompt, const char* options_json, char** out_record_json) {
    return guarded([&] {
        if (!engine || !prompt || !out_record_json) return fail(MANTA_E_INVALID_ARGUMENT, "NULL argument");
        auto options = manta::run_options_from_json(parse_json_arg(options_json, "options"));
        return record_out(engine->engine->run(prompt, options), out_record_json);
    });
}

manta_status manta_compose(manta_engine* engine, const char* prompt, const char* options_json, char** out_record_json) {
    return guarded([&] {
        if (!engine || !prompt || !out_record_json) return fail(MANTA_E_INVALID_ARGUMENT, "NULL argument");
        auto options = manta::run_options_from_json(parse_json_arg(options_json, "options"));
        options.generate = false;
        options.persist = false;
        return record_out(engine->engine->run(prompt, options), out_record_json);
    });
}

manta_status manta_refine(manta_engine* engine, const char* run_id, size_t image_index, double denoise,
                          char** out_record_json) {
    return guarded([&] {
        if (!engine || !run_id || !out_record_json) return fail(MANTA_E_INVALID_ARGUMENT, "NULL argument");
        return record_out(engine->engine->refine(run_id, image_index, denoise), out_record_json);
    });
}

manta_status manta_evaluate(manta_engine* engine, const char* request_json, char** out_report_json) {
    return guarded([&] {
        if (!engine || !request_json || !out_report_json) return fail(MANTA_E_INVALID_ARGUMENT, "NULL argument");
        auto body = parse_json_arg(request_json, "request");
        manta::EvalRequest req;
        try {
            req.prompts = body.at("prompts").get<std::vector<std::string>>();
            if (body.contains("against")) req.against = manta::parse_eval_against(body.at("against").get<std::string>());
            if (body.contains("criteria")) {
                req.criteria.clear();
                for (const auto& c : body.at("criteria")) req.criteria.push_back(manta::parse_criterion(c.get<std::string>()));
            }
            if (body.contains("seed")) req.seed = body.at("seed").get<std::int64_t>();
        } catch (const nlohmann::json::exception& e) {
            return fail(MANTA_E_SCHEMA, std::string("request: ") + e.what());
        }
        *out_report_json = dup(manta::to_json(engine->engine->evaluate(req)).dump(2));
        return MANTA_OK;
    });
}

manta_status manta_request(manta_engine* engine, const char* method, const char* path, const char* body,
                           int* out_http_status, char** out_body) {
    return guarded([&] {
        if (!engine || !method || !path || !out_http_status || !out_body) {
            return fail(MANTA_E_INVALID_ARGUMENT, "NULL argument");
        }
        auto r = engine->service->handle(method, path, body ? body : "");
        *out_http_status = r.status;
        *out_body = dup(r.body);
        return MANTA_OK;
    });
}

manta_status manta_server_start(manta_engine* engine, const char* host, int port, int* out_bound_port,
                                manta_server** out) {
    return guarded([&] {
        if (!engine || !host || !out) return fail(MANTA_E_INVALID_ARGUMENT, "NULL argument");
        *out = nullptr;
        auto server = std::make_unique<manta_server>();
        server->service = std::make_unique<manta::Service>(*engine->engine);
        int bound = server->service->start(host, port);
        if (out_bound_port) *out_bound_port = bound;
        *out = server.release();
        return MANTA_OK;
    });
}

void manta_server_stop(manta_server* server) {
    if (!server) return;
    server->service->stop();
    delete server;
}

} // extern "C"
