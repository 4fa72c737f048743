#include "manta/backend.hpp"
#include "manta/util.hpp"

#include "test_support.hpp"

#include <httplib.h>

#include <cmath>
#include <thread>

using namespace manta;

namespace {

GenerationWorkflow workflow(double cfg = 7.0, std::string prompt = "fox, red fur, snow, moonlight") {
    GenerationWorkflow w;
    w.checkpoint_id = "ckpt-a";
    w.base_model = "sd15";
    w.positive_prompt = std::move(prompt);
    w.negative_prompt = "blurry";
    w.cfg_scale = cfg;
    w.seed = 1234;
    return w;
}

double distance(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

// Minimal scripted stand-in for the Automatic1111 web API.
struct FakeA1111 {
    httplib::Server server;
    std::thread thread;
    int port = 0;
    std::mutex mutex;
    std::string model = "ckpt-a.safetensors [abc]";
    std::vector<std::string> models{"ckpt-a.safetensors [abc]", "ckpt-b.safetensors [def]"};
    std::vector<std::pair<std::string, nlohmann::json>> calls;  // route, body
    std::vector<std::string> generated_under;

    FakeA1111() {
        server.Get("/sdapi/v1/sd-models", [this](const httplib::Request&, httplib::Response& res) {
            nlohmann::json list = nlohmann::json::array();
            for (const auto& m : models) list.push_back({{"title", m}, {"model_name", m.substr(0, m.find('.'))}});
            res.set_content(list.dump(), "application/json");
        });
        server.Post("/sdapi/v1/options", [this](const httplib::Request& req, httplib::Response& res) {
            std::lock_guard lock(mutex);
            auto body = nlohmann::json::parse(req.body);
            calls.emplace_back("options", body);
            model = body["sd_model_checkpoint"];
            res.set_content("null", "application/json");
        });
        auto gen = [this](const std::string& route) {
            return [this, route](const httplib::Request& req, httplib::Response& res) {
                std::lock_guard lock(mutex);
                auto body = nlohmann::json::parse(req.body);
                calls.emplace_back(route, body);
                generated_under.push_back(model);
                nlohmann::json images = nlohmann::json::array();
                std::vector<std::int64_t> seeds;
                for (int i = 0; i < body.value("batch_size", 1); ++i) {
                    std::vector<std::uint8_t> png{0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a, static_cast<std::uint8_t>(i)};
                    images.push_back(base64_encode(png));
                    seeds.push_back(body.value("seed", 0) + 100 + i);
                }
                nlohmann::json info = {{"all_seeds", seeds}};
                res.set_content(nlohmann::json{{"images", images}, {"info", info.dump()}}.dump(), "application/json");
            };
        };
        server.Post("/sdapi/v1/txt2img", gen("txt2img"));
        server.Post("/sdapi/v1/img2img", gen("img2img"));
        port = server.bind_to_any_port("127.0.0.1");
        thread = std::thread([this] { server.listen_after_bind(); });
        server.wait_until_ready();
    }
    ~FakeA1111() {
        server.stop();
        thread.join();
    }

    BackendConfig config() const {
        BackendConfig c;
        c.mode = BackendMode::http;
        c.base_url = "http://127.0.0.1:" + std::to_string(port);
        c.model_switch_timeout = 5;
        c.request_timeout = 5;
        return c;
    }
};

} // namespace

TEST_SUITE("backend") {

TEST_CASE("config validation") {
    BackendConfig c;
    CHECK_NOTHROW(c.validate());
    c.model_switch_timeout = 0;
    CHECK_ERROR_CODE(c.validate(), ErrorCode::InvalidArgument);
    c = {};
    c.mode = BackendMode::http;
    CHECK_ERROR_CODE(c.validate(), ErrorCode::InvalidArgument);
}

TEST_CASE("stub is deterministic and batch-sized") {
    StubBackend a, b;
    auto x = a.txt2img(workflow());
    auto y = b.txt2img(workflow());
    REQUIRE(x.size() == 3);
    CHECK(x == y);
    for (std::size_t i = 0; i < x.size(); ++i) {
        CHECK_FALSE(x[i].bytes.empty());
        CHECK(x[i].seed_used == 1234 + static_cast<std::int64_t>(i));
        REQUIRE(x[i].feature_vector);
        CHECK(x[i].feature_vector->size() == 16);
        CHECK(sniff_mime(x[i].bytes) == "image/x-portable-pixmap");
    }
    CHECK_NOTHROW(a.set_checkpoint("anything"));
}

TEST_CASE("stub features depend on cfg, prompt, checkpoint, adapters and seed") {
    StubBackend s;
    auto base = s.txt2img(workflow());
    CHECK(s.txt2img(workflow(4.0)).at(0).feature_vector != base[0].feature_vector);
    CHECK(s.txt2img(workflow(7.0, "wolf")).at(0).feature_vector != base[0].feature_vector);
    auto w = workflow();
    w.checkpoint_id = "ckpt-b";
    CHECK(s.txt2img(w).at(0).feature_vector != base[0].feature_vector);
    w = workflow();
    w.adapters.push_back({"ad", 1.0});
    CHECK(s.txt2img(w).at(0).feature_vector != base[0].feature_vector);
    w = workflow();
    w.seed = 1;
    CHECK(s.txt2img(w).at(0).feature_vector != base[0].feature_vector);
}

TEST_CASE("stub spread follows the variance model") {
    CHECK(StubBackend::spread(7, 0) == doctest::Approx(0.25));
    CHECK(StubBackend::spread(7, 1) == doctest::Approx(0.75));
    CHECK(StubBackend::prompt_richness("a, b, c <lora:x:1>") == doctest::Approx(3.0 / 12));
    CHECK(StubBackend::prompt_richness(std::string(50, ',')) == 0);
    std::string rich;
    for (int i = 0; i < 20; ++i) rich += "frag" + std::to_string(i) + ", ";
    CHECK(StubBackend::prompt_richness(rich) == 1.0);
    // Rich prompts spread more as cfg rises.
    CHECK(StubBackend::spread(11, 1) > StubBackend::spread(4, 1));
}

TEST_CASE("stub img2img limits") {
    StubBackend s;
    auto parent = s.txt2img(workflow()).at(0);
    auto w = workflow();
    w.batch_size = 2;
    auto same = s.img2img(parent, w, 0.0);
    REQUIRE(same.size() == 2);
    for (const auto& img : same) {
        REQUIRE(img.feature_vector);
        CHECK(*img.feature_vector == *parent.feature_vector);
    }
    auto fresh = s.txt2img(w);
    auto full = s.img2img(parent, w, 1.0);
    CHECK(full == fresh);

    auto half = s.img2img(parent, w, 0.5);
    double d_half = distance(*half[0].feature_vector, *parent.feature_vector);
    double d_full = distance(*fresh[0].feature_vector, *parent.feature_vector);
    CHECK(d_half == doctest::Approx(0.5 * d_full));

    CHECK_ERROR_CODE(s.img2img(parent, w, 1.5), ErrorCode::InvalidArgument);
    CHECK_ERROR_CODE(s.img2img(GeneratedImage{}, w, 0.5), ErrorCode::InvalidArgument);
}

TEST_CASE("mean pairwise distance") {
    std::vector<GeneratedImage> imgs{{{1}, 0, std::vector<double>{0, 0}},
                                     {{1}, 0, std::vector<double>{3, 4}},
                                     {{1}, 0, std::vector<double>{0, 0}}};
    CHECK(mean_pairwise_distance(imgs) == doctest::Approx((5.0 + 0.0 + 5.0) / 3));
    CHECK(mean_pairwise_distance(std::span(imgs).first(1)) == 0);
}

TEST_CASE("http txt2img request shape and model switch") {
    FakeA1111 fake;
    HttpBackend backend(fake.config());
    auto w = workflow();
    w.checkpoint_id = "ckpt-b";
    auto images = backend.txt2img(w);
    REQUIRE(images.size() == 3);
    CHECK(images[0].seed_used == 1234 + 100);
    CHECK(sniff_mime(images[0].bytes) == "image/png");

    REQUIRE(fake.calls.size() == 2);
    CHECK(fake.calls[0].first == "options");
    CHECK(fake.calls[0].second["sd_model_checkpoint"] == "ckpt-b.safetensors [def]");
    const auto& body = fake.calls[1].second;
    CHECK(fake.calls[1].first == "txt2img");
    CHECK(body["prompt"] == w.positive_prompt);
    CHECK(body["negative_prompt"] == "blurry");
    CHECK(body["cfg_scale"] == 7.0);
    CHECK(body["seed"] == 1234);
    CHECK(body["width"] == 512);
    CHECK(body["height"] == 512);
    CHECK(body["batch_size"] == 3);
    CHECK(fake.generated_under.back() == "ckpt-b.safetensors [def]");

    // Same checkpoint again: no second switch.
    backend.txt2img(w);
    CHECK(fake.calls.size() == 3);
}

TEST_CASE("http set_checkpoint then generate records the new model") {
    FakeA1111 fake;
    HttpBackend backend(fake.config());
    backend.set_checkpoint("ckpt-a");
    auto w = workflow();
    backend.txt2img(w);
    CHECK(fake.generated_under.back() == "ckpt-a.safetensors [abc]");
    CHECK_ERROR_CODE(backend.set_checkpoint("ckpt-missing"), ErrorCode::ModelNotFound);
    w.checkpoint_id = "nope";
    CHECK_ERROR_CODE(backend.txt2img(w), ErrorCode::ModelNotFound);
}

TEST_CASE("http img2img sends init_images") {
    FakeA1111 fake;
    HttpBackend backend(fake.config());
    GeneratedImage parent{{1, 2, 3, 4}, 9, std::nullopt};
    auto out = backend.img2img(parent, workflow(), 0.4);
    CHECK(out.size() == 3);
    const auto& body = fake.calls.back().second;
    CHECK(fake.calls.back().first == "img2img");
    REQUIRE(body.contains("init_images"));
    CHECK(body["init_images"][0] == base64_encode(parent.bytes));
    CHECK(body["denoising_strength"] == 0.4);
}

TEST_CASE("http backend unreachable") {
    BackendConfig c;
    c.mode = BackendMode::http;
    c.base_url = "http://127.0.0.1:1";
    c.model_switch_timeout = 1;
    c.request_timeout = 1;
    HttpBackend backend(c);
    CHECK_ERROR_CODE(backend.txt2img(workflow()), ErrorCode::BackendUnavailable);
}

}
