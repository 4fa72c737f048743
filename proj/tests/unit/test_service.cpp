#include "manta/service.hpp"
#include "manta/util.hpp"

#include "engine_fixture.hpp"
#include "test_support.hpp"

#include <httplib.h>

#include <chrono>
#include <condition_variable>
#include <thread>

using namespace manta;
using testing::fixture_config;
using testing::fixture_engine;
using testing::kSamplePrompt;
using testing::TempDir;
using json = nlohmann::json;

namespace {

// Checks `value` against the subset of JSON Schema the published document uses:
// $ref, type (string or list), properties, required, items.
bool conforms(const json& value, const json& schema, const json& doc, std::string& why, const std::string& at = "$") {
    if (schema.contains("$ref")) {
        std::string ref = schema["$ref"];
        const std::string prefix = "#/components/schemas/";
        REQUIRE(ref.starts_with(prefix));
        return conforms(value, doc["components"]["schemas"][ref.substr(prefix.size())], doc, why, at);
    }
    if (schema.contains("type")) {
        std::vector<std::string> types;
        if (schema["type"].is_array()) types = schema["type"].get<std::vector<std::string>>();
        else types.push_back(schema["type"]);
        bool ok = false;
        for (const auto& t : types) {
            if (t == "object") ok |= value.is_object();
            else if (t == "array") ok |= value.is_array();
            else if (t == "string") ok |= value.is_string();
            else if (t == "integer") ok |= value.is_number_integer();
            else if (t == "number") ok |= value.is_number();
            else if (t == "boolean") ok |= value.is_boolean();
            else if (t == "null") ok |= value.is_null();
        }
        if (!ok) {
            why = at + ": expected " + schema["type"].dump() + ", got " + value.type_name();
            return false;
        }
    }
    if (value.is_object()) {
        for (const auto& r : schema.value("required", json::array())) {
            if (!value.contains(r.get<std::string>())) {
                why = at + ": missing " + r.get<std::string>();
                return false;
            }
        }
        if (schema.contains("properties")) {
            for (const auto& [k, sub] : schema["properties"].items()) {
                if (value.contains(k) && !conforms(value[k], sub, doc, why, at + "." + k)) return false;
            }
        }
    }
    if (value.is_array() && schema.contains("items")) {
        for (std::size_t i = 0; i < value.size(); ++i) {
            if (!conforms(value[i], schema["items"], doc, why, at + "[" + std::to_string(i) + "]")) return false;
        }
    }
    return true;
}

void check_schema(const HttpResponse& r, const std::string& schema_name) {
    json doc = json::parse(openapi_document().dump());
    std::string why;
    INFO(r.body.substr(0, 400));
    CHECK_MESSAGE(conforms(json::parse(r.body), doc["components"]["schemas"][schema_name], doc, why), why);
}

// Stub backend that holds txt2img until released.
class GatedBackend final : public GenerationBackend {
public:
    std::vector<GeneratedImage> txt2img(const GenerationWorkflow& w) override {
        {
            std::unique_lock lock(mutex_);
            ++waiting_;
            cv_.notify_all();
            cv_.wait(lock, [&] { return open_; });
        }
        return stub_.txt2img(w);
    }
    std::vector<GeneratedImage> img2img(const GeneratedImage& i, const GenerationWorkflow& w, double d) override {
        return stub_.img2img(i, w, d);
    }
    void set_checkpoint(const std::string&) override {}

    void wait_for(int n) {
        std::unique_lock lock(mutex_);
        cv_.wait(lock, [&] { return waiting_ >= n; });
    }
    void open() {
        std::lock_guard lock(mutex_);
        open_ = true;
        cv_.notify_all();
    }

private:
    StubBackend stub_{16};
    std::mutex mutex_;
    std::condition_variable cv_;
    int waiting_ = 0;
    bool open_ = false;
};

std::string generate_body(std::int64_t seed) {
    return json{{"prompt", kSamplePrompt}, {"knobs", {{"seed", seed}}}}.dump();
}

} // namespace

TEST_SUITE("service") {

TEST_CASE("openapi document lists every route") {
    const auto& doc = openapi_document();
    CHECK(doc["openapi"] == "3.1.0");
    for (const char* p : {"/v1/compose", "/v1/generate", "/v1/refine", "/v1/evaluate", "/v1/runs", "/v1/runs/{id}",
                          "/v1/runs/{id}/images/{i}", "/v1/jobs/{id}", "/v1/collections", "/v1/spec"}) {
        CHECK_MESSAGE(doc["paths"].contains(p), p);
    }
}

TEST_CASE("compose the sample prompt") {
    TempDir dir;
    auto engine = fixture_engine(dir.path());
    Service svc(*engine);
    auto r = svc.handle("POST", "/v1/compose", json{{"prompt", kSamplePrompt}, {"knobs", {{"seed", 42}}}}.dump());
    REQUIRE(r.status == 200);
    check_schema(r, "ComposeResponse");
    auto j = json::parse(r.body);
    CHECK(j["decomposed_concept_map"]["main"]["name"] == "techno samurai warrior");
    CHECK(j["decomposed_concept_map"]["support"][0]["name"] == "cyberpunk dog");
    CHECK_FALSE(j["concept_map"]["main"]["details"].empty());
    CHECK(j["selection"]["checkpoint"]["id"].is_string());
    CHECK(engine->store().list().empty());
}

TEST_CASE("generate, read back, fetch images, refine") {
    TempDir dir;
    auto engine = fixture_engine(dir.path());
    Service svc(*engine);
    auto gen = svc.handle("POST", "/v1/generate", generate_body(42));
    REQUIRE(gen.status == 200);
    check_schema(gen, "RunResponse");
    auto g = json::parse(gen.body);
    std::string id = g["run_id"];
    REQUIRE(g["images"].size() == 3);

    auto run = svc.handle("GET", "/v1/runs/" + id);
    REQUIRE(run.status == 200);
    check_schema(run, "RunRecord");
    CHECK(json::parse(run.body)["workflow"] == g["workflow"]);

    auto img = svc.handle("GET", "/v1/runs/" + id + "/images/1");
    REQUIRE(img.status == 200);
    CHECK(img.content_type == "image/x-portable-pixmap");
    CHECK(base64_encode(std::vector<std::uint8_t>(img.body.begin(), img.body.end())) == g["images"][1]["data"]);
    CHECK(svc.handle("GET", "/v1/runs/" + id + "/images/9").status == 404);

    auto ref = svc.handle("POST", "/v1/refine", json{{"run_id", id}, {"image_index", 0}, {"denoise", 0.5}}.dump());
    REQUIRE(ref.status == 200);
    check_schema(ref, "RunResponse");
    CHECK(json::parse(ref.body)["parent_id"] == id);

    auto list = svc.handle("GET", "/v1/runs");
    REQUIRE(list.status == 200);
    check_schema(list, "RunList");
    auto runs = json::parse(list.body)["runs"];
    REQUIRE(runs.size() == 2);
    CHECK(runs[0]["run_id"] == id);
    CHECK(runs[1]["parent_id"] == id);

    auto cols = svc.handle("GET", "/v1/collections");
    check_schema(cols, "Collections");
    CHECK(json::parse(cols.body)["collections"].size() == 2);
}

TEST_CASE("error statuses") {
    TempDir dir;
    auto engine = fixture_engine(dir.path());
    Service svc(*engine);
    auto unknown = svc.handle("POST", "/v1/refine", json{{"run_id", "run-nope"}, {"image_index", 0}, {"denoise", 0.5}}.dump());
    CHECK(unknown.status == 404);
    check_schema(unknown, "Error");
    CHECK(json::parse(unknown.body)["error"]["code"] == "UnknownRun");

    CHECK(svc.handle("GET", "/v1/runs/run-nope").status == 404);
    CHECK(svc.handle("POST", "/v1/generate", "{not json").status == 400);
    CHECK(svc.handle("POST", "/v1/generate", "[]").status == 400);
    CHECK(svc.handle("POST", "/v1/generate", "{}").status == 400);
    CHECK(svc.handle("POST", "/v1/generate", json{{"prompt", 3}}.dump()).status == 400);
    CHECK(svc.handle("POST", "/v1/generate", json{{"prompt", "x"}, {"knobs", {{"width", 10}}}}.dump()).status == 400);
    CHECK(svc.handle("POST", "/v1/refine", json{{"run_id", "x"}, {"image_index", 0}, {"denoise", 2}}.dump()).status == 400);
    CHECK(svc.handle("GET", "/v1/nothing").status == 404);

    auto empty = svc.handle("POST", "/v1/generate", json{{"prompt", "  "}}.dump());
    CHECK(empty.status == 400);
    auto e = json::parse(empty.body);
    CHECK(e["error"]["stage"] == "decompose");
}

TEST_CASE("provider failures are 502 with the stage") {
    TempDir dir;
    auto cfg = fixture_config(dir.path());
    cfg.token_budget = 100;
    auto engine = fixture_engine(dir.path(), cfg);
    Service svc(*engine);
    auto r = svc.handle("POST", "/v1/generate", generate_body(1));
    CHECK(r.status == 502);
    check_schema(r, "Error");
    auto j = json::parse(r.body);
    CHECK(j["error"]["code"] == "BudgetExceeded");
    CHECK(j["error"]["stage"].is_string());
}

TEST_CASE("evaluate endpoint") {
    TempDir dir;
    auto engine = fixture_engine(dir.path());
    Service svc(*engine);
    auto r = svc.handle("POST", "/v1/evaluate",
                        json{{"prompts", {kSamplePrompt, "a red fox"}}, {"against", "no-enhance"}, {"criteria", {"quality"}}}.dump());
    REQUIRE(r.status == 200);
    check_schema(r, "EvalReport");
    CHECK(json::parse(r.body)["summary"].size() == 1);
    CHECK(svc.handle("POST", "/v1/evaluate", json{{"prompts", {"x"}}, {"against", "moon"}}.dump()).status == 400);
}

TEST_CASE("restart preserves runs") {
    TempDir dir;
    std::string id;
    {
        auto engine = fixture_engine(dir.path());
        Service svc(*engine);
        id = json::parse(svc.handle("POST", "/v1/generate", generate_body(8)).body)["run_id"];
    }
    Engine engine(fixture_config(dir.path()));
    Service svc(engine);
    CHECK(svc.handle("GET", "/v1/runs/" + id).status == 200);
    CHECK(json::parse(svc.handle("GET", "/v1/runs").body)["runs"].size() == 1);
}

TEST_CASE("busy backend: 202 job beyond the threshold, 409 beyond capacity") {
    TempDir dir;
    auto cfg = fixture_config(dir.path());
    cfg.queue_capacity = 2;
    cfg.async_threshold = 1;
    auto backend = std::make_shared<GatedBackend>();
    Engine engine(cfg, nullptr, backend);
    engine.ingest(testing::fixture("stylus_docs.json"), "checkpoints", DocumentKind::checkpoint);
    engine.ingest(testing::fixture("stylus_docs.json"), "adapters", DocumentKind::adapter);
    Service svc(engine);

    HttpResponse inline_result;
    std::thread first([&] { inline_result = svc.handle("POST", "/v1/generate", generate_body(1)); });
    backend->wait_for(1);

    auto queued = svc.handle("POST", "/v1/generate", generate_body(2));
    REQUIRE(queued.status == 202);
    check_schema(queued, "Accepted");
    std::string poll = json::parse(queued.body)["poll"];

    auto refused = svc.handle("POST", "/v1/generate", generate_body(3));
    CHECK(refused.status == 409);

    backend->wait_for(2);
    auto pending = svc.handle("GET", poll);
    CHECK(json::parse(pending.body)["status"] == "running");

    backend->open();
    first.join();
    CHECK(inline_result.status == 200);

    json job;
    for (int i = 0; i < 500; ++i) {
        job = json::parse(svc.handle("GET", poll).body);
        if (job["status"] != "running") break;
        std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    CHECK(job["status"] == "done");
    CHECK(job["http_status"] == 200);
    CHECK(job["result"]["run_id"].is_string());
    CHECK(svc.handle("GET", "/v1/jobs/job-99").status == 404);
}

TEST_CASE("socket round trip") {
    TempDir dir;
    auto engine = fixture_engine(dir.path());
    Service svc(*engine);
    int port = svc.start("127.0.0.1", 0);
    REQUIRE(port > 0);
    httplib::Client client("127.0.0.1", port);
    client.set_read_timeout(30, 0);
    auto spec = client.Get("/v1/spec");
    REQUIRE(spec);
    CHECK(spec->status == 200);
    auto gen = client.Post("/v1/generate", generate_body(5), "application/json");
    REQUIRE(gen);
    CHECK(gen->status == 200);
    std::string id = json::parse(gen->body)["run_id"];
    auto img = client.Get("/v1/runs/" + id + "/images/0");
    REQUIRE(img);
    CHECK(img->status == 200);
    CHECK(img->get_header_value("Content-Type") == "image/x-portable-pixmap");
    svc.stop();
}

}
