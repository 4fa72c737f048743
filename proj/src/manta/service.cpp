#include "manta/service.hpp"

#include "manta/error.hpp"
#include "manta/util.hpp"

#include <httplib.h>

#include <atomic>
#include <map>
#include <mutex>
#include <regex>
#include <thread>

namespace manta {

using ojson = nlohmann::ordered_json;

namespace {

ojson obj(std::initializer_list<std::pair<const std::string, ojson>> props, std::vector<std::string> required = {}) {
    ojson s = {{"type", "object"}, {"properties", ojson::object()}};
    for (const auto& [k, v] : props) s["properties"][k] = v;
    if (!required.empty()) s["required"] = required;
    return s;
}

ojson ref(const std::string& name) { return {{"$ref", "#/components/schemas/" + name}}; }
ojson type(const char* t) { return {{"type", t}}; }
ojson nullable(const char* t) { return {{"type", ojson::array({t, "null"})}}; }
ojson array_of(ojson items) { return {{"type", "array"}, {"items", std::move(items)}}; }

ojson build_openapi() {
    ojson schemas;
    schemas["Error"] = obj({{"error", obj({{"code", type("string")}, {"message", type("string")}, {"stage", nullable("string")}},
                                          {"code", "message"})},
                            {"run_id", nullable("string")}},
                           {"error"});
    schemas["Concept"] = obj({{"name", type("string")},
                              {"styles", array_of(type("string"))},
                              {"details", array_of(type("string"))}},
                             {"name", "styles", "details"});
    schemas["ConceptMap"] = obj({{"main", ref("Concept")},
                                 {"support", array_of(ref("Concept"))},
                                 {"image", obj({{"styles", array_of(type("string"))}, {"details", array_of(type("string"))}},
                                               {"styles", "details"})}},
                                {"main", "support", "image"});
    schemas["Knobs"] = obj({{"cfg_scale", type("number")},
                            {"seed", type("integer")},
                            {"width", type("integer")},
                            {"height", type("integer")},
                            {"batch_size", type("integer")},
                            {"details", type("integer")}});
    schemas["Workflow"] = obj({{"checkpoint_id", type("string")},
                               {"base_model", type("string")},
                               {"adapters", array_of(obj({{"id", type("string")}, {"weight", type("number")}}, {"id", "weight"}))},
                               {"positive_prompt", type("string")},
                               {"negative_prompt", type("string")},
                               {"cfg_scale", type("number")},
                               {"seed", type("integer")},
                               {"width", type("integer")},
                               {"height", type("integer")},
                               {"batch_size", type("integer")}},
                              {"checkpoint_id", "adapters", "positive_prompt", "negative_prompt", "cfg_scale", "seed",
                               "width", "height", "batch_size"});
    schemas["Hit"] = obj({{"id", type("string")},
                          {"display_name", type("string")},
                          {"context", type("number")},
                          {"margin_sum", type("number")},
                          {"positive_similarity", type("number")}},
                         {"id", "context", "margin_sum"});
    schemas["Selection"] = obj({{"checkpoint", {{"type", ojson::array({"object", "null"})}}},
                                {"checkpoint_candidates", array_of(ref("Hit"))},
                                {"adapters", {{"type", ojson::array({"array", "null"})}}},
                                {"adapter_candidates", array_of(ref("Hit"))},
                                {"decay_iterations", type("integer")},
                                {"final_threshold", type("number")},
                                {"trace", array_of(type("string"))}},
                               {"checkpoint", "adapters", "trace"});
    schemas["Tokens"] = obj({{"completion_tokens", type("integer")},
                             {"embedding_tokens", type("integer")},
                             {"total", type("integer")},
                             {"budget", nullable("integer")},
                             {"by_stage", type("object")}},
                            {"completion_tokens", "embedding_tokens", "total"});
    schemas["Image"] = obj({{"index", type("integer")},
                            {"mime", type("string")},
                            {"seed_used", type("integer")},
                            {"url", type("string")},
                            {"data", type("string")}},
                           {"index", "mime", "seed_used", "url"});
    schemas["ComposeResponse"] = obj({{"concept_map", ref("ConceptMap")},
                                      {"decomposed_concept_map", ref("ConceptMap")},
                                      {"selection", ref("Selection")},
                                      {"workflow", ref("Workflow")},
                                      {"tokens", ref("Tokens")}},
                                     {"concept_map", "selection", "workflow", "tokens"});
    schemas["RunResponse"] = obj({{"run_id", type("string")},
                                  {"parent_id", nullable("string")},
                                  {"images", array_of(ref("Image"))},
                                  {"workflow", ref("Workflow")},
                                  {"tokens", ref("Tokens")}},
                                 {"run_id", "images", "workflow", "tokens"});
    schemas["Accepted"] = obj({{"job_id", type("string")}, {"poll", type("string")}, {"status", type("string")}},
                              {"job_id", "poll", "status"});
    schemas["Job"] = obj({{"job_id", type("string")},
                          {"status", type("string")},
                          {"http_status", type("integer")},
                          {"result", type("object")}},
                         {"job_id", "status"});
    schemas["RunRecord"] = obj({{"request_id", type("string")},
                                {"parent_id", nullable("string")},
                                {"input_prompt", type("string")},
                                {"status", type("string")},
                                {"stages", array_of(type("string"))},
                                {"failure", {{"type", ojson::array({"object", "null"})}}},
                                {"concept_map", {{"type", ojson::array({"object", "null"})}}},
                                {"enhanced_concept_map", {{"type", ojson::array({"object", "null"})}}},
                                {"selection", ref("Selection")},
                                {"workflow", {{"type", ojson::array({"object", "null"})}}},
                                {"images", array_of(type("object"))},
                                {"tokens", ref("Tokens")}},
                               {"request_id", "input_prompt", "status", "stages", "images", "tokens"});
    schemas["RunList"] = obj({{"runs", array_of(obj({{"run_id", type("string")},
                                                       {"parent_id", nullable("string")},
                                                       {"input_prompt", type("string")},
                                                       {"status", type("string")}},
                                                      {"run_id", "status"}))}},
                             {"runs"});
    schemas["Collections"] = obj({{"collections", array_of(obj({{"name", type("string")},
                                                                 {"kind", type("string")},
                                                                 {"dimension", type("integer")},
                                                                 {"size", type("integer")}},
                                                                {"name", "kind", "dimension", "size"}))}},
                                 {"collections"});
    schemas["EvalReport"] = obj({{"system_a", type("string")},
                                 {"system_b", type("string")},
                                 {"prompts", array_of(type("object"))},
                                 {"summary", array_of(obj({{"criterion", type("string")},
                                                           {"judged", type("integer")},
                                                           {"win_rate", type("number")},
                                                           {"loss_rate", type("number")},
                                                           {"inconsistent_rate", type("number")}},
                                                          {"criterion", "win_rate", "loss_rate", "inconsistent_rate"}))},
                                 {"failed_prompts", type("integer")},
                                 {"tokens", type("object")},
                                 {"token_report", type("object")}},
                                {"system_a", "system_b", "prompts", "summary"});

    auto json_body = [](ojson schema) { return ojson{{"content", {{"application/json", {{"schema", std::move(schema)}}}}}}; };
    auto reply = [&](const char* desc, ojson schema) {
        ojson r = json_body(std::move(schema));
        r["description"] = desc;
        return r;
    };
    auto errors = [&](ojson responses, std::initializer_list<const char*> codes) {
        for (const char* c : codes) responses[c] = reply("error", ref("Error"));
        return responses;
    };
    ojson prompt_req = obj({{"prompt", type("string")},
                            {"knobs", ref("Knobs")},
                            {"exclude_ids", array_of(type("string"))},
                            {"filter_words", array_of(type("string"))},
                            {"concept_map", ref("ConceptMap")}},
                           {"prompt"});

    ojson paths;
    paths["/v1/compose"]["post"] = {
        {"summary", "Decompose, enhance and select; no generation"},
        {"requestBody", json_body(prompt_req)},
        {"responses", errors({{"200", reply("dry-run workflow", ref("ComposeResponse"))}}, {"400", "502"})}};
    paths["/v1/generate"]["post"] = {
        {"summary", "Full pipeline run"},
        {"requestBody", json_body(prompt_req)},
        {"responses", errors({{"200", reply("finished run", ref("RunResponse"))},
                              {"202", reply("queued; poll the job URL", ref("Accepted"))}},
                             {"400", "409", "502"})}};
    paths["/v1/refine"]["post"] = {
        {"summary", "img2img on a stored image"},
        {"requestBody", json_body(obj({{"run_id", type("string")}, {"image_index", type("integer")}, {"denoise", type("number")}},
                                      {"run_id", "image_index", "denoise"}))},
        {"responses", errors({{"200", reply("child run", ref("RunResponse"))},
                              {"202", reply("queued; poll the job URL", ref("Accepted"))}},
                             {"400", "404", "409", "502"})}};
    paths["/v1/evaluate"]["post"] = {
        {"summary", "Pairwise judged comparison"},
        {"requestBody", json_body(obj({{"prompts", array_of(type("string"))},
                                       {"against", type("string")},
                                       {"criteria", array_of(type("string"))},
                                       {"seed", type("integer")}},
                                      {"prompts"}))},
        {"responses", errors({{"200", reply("report", ref("EvalReport"))}}, {"400", "502"})}};
    paths["/v1/runs"]["get"] = {{"summary", "Runs in creation order"},
                                {"responses", {{"200", reply("run list", ref("RunList"))}}}};
    paths["/v1/runs/{id}"]["get"] = {{"summary", "Stored run record"},
                                     {"responses", errors({{"200", reply("record", ref("RunRecord"))}}, {"404"})}};
    paths["/v1/runs/{id}/images/{i}"]["get"] = {
        {"summary", "Image payload"},
        {"responses", errors({{"200", {{"description", "image bytes"}}}}, {"404"})}};
    paths["/v1/jobs/{id}"]["get"] = {{"summary", "Background job status"},
                                     {"responses", errors({{"200", reply("job", ref("Job"))}}, {"404"})}};
    paths["/v1/collections"]["get"] = {{"summary", "Loaded collections"},
                                       {"responses", {{"200", reply("collections", ref("Collections"))}}}};
    paths["/v1/spec"]["get"] = {{"summary", "This document"}, {"responses", {{"200", {{"description", "OpenAPI"}}}}}};

    ojson doc;
    doc["openapi"] = "3.1.0";
    doc["info"] = {{"title", "manta"}, {"version", "1"}};
    doc["paths"] = std::move(paths);
    doc["components"] = {{"schemas", std::move(schemas)}};
    return doc;
}

int http_status_for(ErrorCode code) {
    switch (code) {
    case ErrorCode::InvalidArgument:
    case ErrorCode::SchemaError:
    case ErrorCode::MalformedDecomposition: return 400;
    case ErrorCode::UnknownRun:
    case ErrorCode::UnknownImage: return 404;
    default: return 502;
    }
}

HttpResponse json_response(int status, const ojson& body) { return {status, "application/json", body.dump()}; }

HttpResponse error_response(int status, ErrorCode code, const std::string& message,
                            std::optional<std::string> stage = std::nullopt, std::optional<std::string> run_id = std::nullopt) {
    ojson e = {{"code", to_string(code)}, {"message", message}, {"stage", stage ? ojson(*stage) : ojson(nullptr)}};
    return json_response(status, {{"error", e}, {"run_id", run_id ? ojson(*run_id) : ojson(nullptr)}});
}

// Reads a request body; anything malformed is a 400.
nlohmann::json parse_body(const std::string& body) {
    if (trim(body).empty()) return nlohmann::json::object();
    try {
        auto j = nlohmann::json::parse(body);
        if (!j.is_object()) throw Error(ErrorCode::SchemaError, "request body must be a JSON object");
        return j;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::SchemaError, std::string("malformed JSON: ") + e.what());
    }
}

template <typename T>
T field(const nlohmann::json& j, const char* key) {
    if (!j.contains(key)) throw Error(ErrorCode::SchemaError, std::string("missing field '") + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw Error(ErrorCode::SchemaError, std::string("field '") + key + "' has the wrong type");
    }
}

ojson images_json(const RunRecord& r, bool with_data) {
    auto rec = to_json(r);
    ojson out = ojson::array();
    for (std::size_t i = 0; i < r.images.size(); ++i) {
        ojson img = {{"index", i},
                     {"mime", rec["images"][i]["mime"]},
                     {"seed_used", r.images[i].seed_used},
                     {"url", "/v1/runs/" + r.request_id + "/images/" + std::to_string(i)}};
        if (with_data) img["data"] = base64_encode(r.images[i].bytes);
        out.push_back(std::move(img));
    }
    return out;
}

HttpResponse failed_run(const RunRecord& r) {
    const auto& f = *r.failure;
    return error_response(http_status_for(f.code), f.code, f.message, std::string(to_string(f.stage)),
                          r.request_id.empty() ? std::nullopt : std::optional<std::string>(r.request_id));
}

HttpResponse run_response(const RunRecord& r) {
    if (!r.ok()) return failed_run(r);
    auto rec = to_json(r);
    return json_response(200, {{"run_id", r.request_id},
                               {"parent_id", rec["parent_id"]},
                               {"images", images_json(r, true)},
                               {"workflow", rec["workflow"]},
                               {"tokens", rec["tokens"]}});
}

} // namespace

const ojson& openapi_document() {
    static const ojson doc = build_openapi();
    return doc;
}

struct Service::Impl {
    Engine& engine;
    httplib::Server server;
    std::thread listener;
    std::atomic<std::size_t> in_flight{0};

    struct Job {
        std::string status = "running";
        std::optional<HttpResponse> result;
    };
    std::mutex jobs_mutex;
    std::map<std::string, Job> jobs;
    std::vector<std::thread> workers;
    std::atomic<std::uint64_t> job_counter{0};

    explicit Impl(Engine& e) : engine(e) {}

    ~Impl() {
        server.stop();
        if (listener.joinable()) listener.join();
        std::lock_guard lock(jobs_mutex);
        for (auto& w : workers) {
            if (w.joinable()) w.join();
        }
    }

    // Admission for generation work: run inline, queue as a job, or refuse.
    template <typename Fn>
    HttpResponse admit(Fn&& work) {
        const std::size_t capacity = engine.config().queue_capacity;
        const std::size_t ahead = in_flight.fetch_add(1);
        if (ahead >= capacity) {
            in_flight.fetch_sub(1);
            return error_response(409, ErrorCode::BackendUnavailable,
                                  "backend queue is full (" + std::to_string(capacity) + " in flight)");
        }
        if (ahead < engine.config().async_threshold) {
            HttpResponse r = guarded(work);
            in_flight.fetch_sub(1);
            return r;
        }
        std::string id = "job-" + std::to_string(job_counter.fetch_add(1) + 1);
        std::lock_guard lock(jobs_mutex);
        jobs[id] = Job{};
        workers.emplace_back([this, id, work = std::forward<Fn>(work)]() mutable {
            HttpResponse r = guarded(work);
            in_flight.fetch_sub(1);
            std::lock_guard inner(jobs_mutex);
            jobs[id].status = r.status < 300 ? "done" : "failed";
            jobs[id].result = std::move(r);
        });
        return json_response(202, {{"job_id", id}, {"poll", "/v1/jobs/" + id}, {"status", "running"}});
    }

    template <typename Fn>
    static HttpResponse guarded(Fn& work) {
        try {
            return work();
        } catch (const Error& e) {
            return error_response(http_status_for(e.code()), e.code(), e.what());
        } catch (const std::exception& e) {
            return error_response(500, ErrorCode::Io, e.what());
        }
    }

    HttpResponse route(const std::string& method, const std::string& path, const std::string& body) {
        static const std::regex run_re(R"(^/v1/runs/([A-Za-z0-9_-]+)$)");
        static const std::regex image_re(R"(^/v1/runs/([A-Za-z0-9_-]+)/images/([0-9]+)$)");
        static const std::regex job_re(R"(^/v1/jobs/([A-Za-z0-9_-]+)$)");
        std::smatch m;
        if (method == "GET") {
            if (path == "/v1/spec") return json_response(200, openapi_document());
            if (path == "/v1/runs") return list_runs();
            if (path == "/v1/collections") return list_collections();
            if (std::regex_match(path, m, run_re)) return get_run(m[1]);
            if (std::regex_match(path, m, image_re)) {
                const std::string id = m[1];
                std::size_t index = 0;
                try {
                    index = std::stoul(m[2]);
                } catch (const std::exception&) {
                    throw Error(ErrorCode::UnknownImage, "image index out of range");
                }
                auto bytes = engine.store().image(id, index);
                return {200, sniff_mime(bytes), std::string(bytes.begin(), bytes.end())};
            }
            if (std::regex_match(path, m, job_re)) return get_job(m[1]);
        } else if (method == "POST") {
            if (path == "/v1/compose") return compose(parse_body(body));
            if (path == "/v1/generate") return generate(parse_body(body));
            if (path == "/v1/refine") return refine(parse_body(body));
            if (path == "/v1/evaluate") return evaluate(parse_body(body));
        }
        return error_response(404, ErrorCode::InvalidArgument, "no route for " + method + " " + path);
    }

    HttpResponse compose(const nlohmann::json& body) {
        std::string prompt = field<std::string>(body, "prompt");
        RunOptions o = run_options_from_json(body);
        o.generate = false;
        o.persist = false;
        RunRecord r = engine.run(prompt, o);
        if (!r.ok()) return failed_run(r);
        auto rec = to_json(r);
        ojson out;
        out["concept_map"] = r.enhanced_concept_map ? rec["enhanced_concept_map"] : rec["concept_map"];
        out["decomposed_concept_map"] = rec["concept_map"];
        out["selection"] = rec["selection"];
        out["workflow"] = rec["workflow"];
        out["tokens"] = rec["tokens"];
        return json_response(200, out);
    }

    HttpResponse generate(const nlohmann::json& body) {
        std::string prompt = field<std::string>(body, "prompt");
        RunOptions o = run_options_from_json(body);
        return admit([this, prompt, o] { return run_response(engine.run(prompt, o)); });
    }

    HttpResponse refine(const nlohmann::json& body) {
        std::string run_id = field<std::string>(body, "run_id");
        auto index = field<std::int64_t>(body, "image_index");
        double denoise = field<double>(body, "denoise");
        if (index < 0) throw Error(ErrorCode::UnknownImage, "image_index must be non-negative");
        if (!(denoise >= 0.0 && denoise <= 1.0)) throw Error(ErrorCode::InvalidArgument, "denoise must lie in [0, 1]");
        if (!engine.store().contains(run_id)) throw Error(ErrorCode::UnknownRun, "no run with id '" + run_id + "'");
        return admit([this, run_id, index, denoise] {
            return run_response(engine.refine(run_id, static_cast<std::size_t>(index), denoise));
        });
    }

    HttpResponse evaluate(const nlohmann::json& body) {
        EvalRequest req;
        req.prompts = field<std::vector<std::string>>(body, "prompts");
        if (body.contains("against")) req.against = parse_eval_against(field<std::string>(body, "against"));
        if (body.contains("criteria")) {
            req.criteria.clear();
            for (const auto& c : field<std::vector<std::string>>(body, "criteria")) req.criteria.push_back(parse_criterion(c));
        }
        if (body.contains("seed")) req.seed = field<std::int64_t>(body, "seed");
        return json_response(200, to_json(engine.evaluate(req)));
    }

    HttpResponse list_runs() {
        ojson runs = ojson::array();
        for (const auto& id : engine.store().list()) {
            auto j = engine.store().load_json(id);
            runs.push_back({{"run_id", id},
                            {"parent_id", j.value("parent_id", nlohmann::json())},
                            {"input_prompt", j.value("input_prompt", "")},
                            {"status", j.value("status", "")}});
        }
        return json_response(200, {{"runs", runs}});
    }

    HttpResponse get_run(const std::string& id) {
        auto j = engine.store().load_json(id);
        ojson out = ojson::parse(j.dump());
        for (std::size_t i = 0; i < out["images"].size(); ++i) {
            out["images"][i]["url"] = "/v1/runs/" + id + "/images/" + std::to_string(i);
        }
        return json_response(200, out);
    }

    HttpResponse get_job(const std::string& id) {
        std::lock_guard lock(jobs_mutex);
        auto it = jobs.find(id);
        if (it == jobs.end()) return error_response(404, ErrorCode::UnknownRun, "no job with id '" + id + "'");
        ojson out = {{"job_id", id}, {"status", it->second.status}};
        if (it->second.result) {
            out["http_status"] = it->second.result->status;
            out["result"] = ojson::parse(it->second.result->body);
        }
        return json_response(200, out);
    }

    HttpResponse list_collections() {
        ojson cols = ojson::array();
        for (const auto& [name, c] : engine.collections()) {
            cols.push_back({{"name", name}, {"kind", to_string(c.kind())}, {"dimension", c.dimension()}, {"size", c.size()}});
        }
        return json_response(200, {{"collections", cols}});
    }

    HttpResponse handle(const std::string& method, const std::string& path, const std::string& body) {
        try {
            return route(method, path, body);
        } catch (const Error& e) {
            return error_response(http_status_for(e.code()), e.code(), e.what());
        } catch (const std::exception& e) {
            return error_response(500, ErrorCode::Io, e.what());
        }
    }
};

Service::Service(Engine& engine) : impl_(std::make_unique<Impl>(engine)) {
    auto dispatch = [this](const httplib::Request& req, httplib::Response& res) {
        HttpResponse r = impl_->handle(req.method, req.path, req.body);
        res.status = r.status;
        res.set_content(r.body, r.content_type);
    };
    impl_->server.Get(R"(/v1/.*)", dispatch);
    impl_->server.Post(R"(/v1/.*)", dispatch);
}

Service::~Service() = default;

int Service::bind(const std::string& host, int port) {
    int bound = port == 0 ? impl_->server.bind_to_any_port(host) : (impl_->server.bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw Error(ErrorCode::Io, "cannot bind " + host + ":" + std::to_string(port));
    return bound;
}

void Service::listen() {
    if (!impl_->server.listen_after_bind()) throw Error(ErrorCode::Io, "server stopped unexpectedly");
}

int Service::start(const std::string& host, int port) {
    int bound = bind(host, port);
    impl_->listener = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
    return bound;
}

void Service::stop() {
    impl_->server.stop();
    if (impl_->listener.joinable()) impl_->listener.join();
}

HttpResponse Service::handle(const std::string& method, const std::string& path, const std::string& body) {
    return impl_->handle(method, path, body);
}

} // namespace manta
