#include "manta/backend.hpp"

#include "manta/error.hpp"
#include "manta/http_url.hpp"
#include "manta/util.hpp"

#include <httplib.h>

#include <algorithm>
#include <cmath>

namespace manta {

void BackendConfig::validate() const {
    if (!(model_switch_timeout > 0) || !(request_timeout > 0)) {
        throw Error(ErrorCode::InvalidArgument, "backend timeouts must be positive");
    }
    if (mode == BackendMode::http && base_url.empty()) throw Error(ErrorCode::InvalidArgument, "http backend needs base_url");
    if (mode == BackendMode::stub && stub_feature_dimension == 0) {
        throw Error(ErrorCode::InvalidArgument, "stub feature dimension must be positive");
    }
}

std::unique_ptr<GenerationBackend> make_backend(const BackendConfig& cfg) {
    cfg.validate();
    if (cfg.mode == BackendMode::stub) return std::make_unique<StubBackend>(cfg.stub_feature_dimension);
    return std::make_unique<HttpBackend>(cfg);
}

namespace {

std::uint64_t workflow_identity(const GenerationWorkflow& w) {
    Fnv1a h;
    h.add(std::string_view(w.positive_prompt)).add(std::string_view(w.negative_prompt)).add(std::string_view(w.checkpoint_id));
    for (const auto& a : w.adapters) h.add(std::string_view(a.id)).add(a.weight);
    h.add(static_cast<std::uint64_t>(w.width)).add(static_cast<std::uint64_t>(w.height));
    return h.digest();
}

std::vector<double> gaussian_vector(std::uint64_t seed, std::size_t dim) {
    DeterministicRng rng(seed);
    std::vector<double> v(dim);
    for (double& x : v) x = rng.normal();
    return v;
}

std::vector<double> unit_vector(std::uint64_t seed, std::size_t dim) {
    auto v = gaussian_vector(seed, dim);
    double norm = 0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
    return v;
}

} // namespace

double StubBackend::prompt_richness(std::string_view positive_prompt) {
    std::size_t fragments = 0;
    std::size_t start = 0;
    while (start <= positive_prompt.size()) {
        std::size_t end = positive_prompt.find(',', start);
        if (end == std::string_view::npos) end = positive_prompt.size();
        std::string piece = trim(positive_prompt.substr(start, end - start));
        // Adapter activation tags are not prompt content.
        if (auto tag = piece.find("<lora:"); tag != std::string::npos) piece = trim(piece.substr(0, tag));
        if (!piece.empty()) ++fragments;
        start = end + 1;
    }
    return std::min(1.0, static_cast<double>(fragments) / static_cast<double>(kRichPromptFragments));
}

double StubBackend::spread(double cfg_scale, double richness) {
    return (7.0 * kModelVariance + kPromptVariance * richness * cfg_scale) / (cfg_scale + 7.0);
}

std::vector<std::uint8_t> StubBackend::render(std::span<const double> features, std::int64_t seed) {
    constexpr int side = 32;
    std::string header = "P6\n# manta-stub seed " + std::to_string(seed) + "\n" + std::to_string(side) + " " +
                         std::to_string(side) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    const std::size_t d = features.size();
    for (int y = 0; y < side; ++y) {
        for (int x = 0; x < side; ++x) {
            for (int c = 0; c < 3; ++c) {
                double f = features[static_cast<std::size_t>(x / 4 + 3 * (y / 4) + 5 * c) % d];
                double wave = std::sin(0.3 * x * (1 + f) + 0.2 * y * (c + 1));
                double v = 127.5 + 90.0 * std::tanh(f) + 37.0 * wave;
                out.push_back(static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)));
            }
        }
    }
    return out;
}

std::vector<GeneratedImage> StubBackend::txt2img(const GenerationWorkflow& w) {
    w.validate();
    std::lock_guard lock(mutex_);
    const std::uint64_t identity = workflow_identity(w);
    auto base = gaussian_vector(Fnv1a().add(identity).add(std::string_view("base")).digest(), dimension_);
    // Small cfg-dependent shift of the whole batch; does not change pairwise spread.
    auto drift = unit_vector(Fnv1a().add(identity).add(std::string_view("drift")).digest(), dimension_);
    const double sigma = spread(w.cfg_scale, prompt_richness(w.positive_prompt));

    std::vector<GeneratedImage> out;
    for (int i = 0; i < w.batch_size; ++i) {
        std::int64_t seed = w.seed + i;
        auto offset = unit_vector(Fnv1a().add(identity).add(static_cast<std::uint64_t>(seed)).digest(), dimension_);
        std::vector<double> f(dimension_);
        for (std::size_t k = 0; k < dimension_; ++k) f[k] = base[k] + 0.01 * w.cfg_scale * drift[k] + sigma * offset[k];
        out.push_back({render(f, seed), seed, std::move(f)});
    }
    return out;
}

std::vector<GeneratedImage> StubBackend::img2img(const GeneratedImage& image, const GenerationWorkflow& w,
                                                 double denoise) {
    if (image.bytes.empty()) throw Error(ErrorCode::InvalidArgument, "img2img input image is empty");
    if (!(denoise >= 0 && denoise <= 1)) throw Error(ErrorCode::InvalidArgument, "denoise must be in [0, 1]");
    std::vector<double> source = image.feature_vector && image.feature_vector->size() == dimension_
                                     ? *image.feature_vector
                                     : gaussian_vector(Fnv1a().add(std::span(image.bytes)).digest(), dimension_);
    auto fresh = txt2img(w);
    std::vector<GeneratedImage> out;
    for (auto& img : fresh) {
        std::vector<double> f(dimension_);
        for (std::size_t k = 0; k < dimension_; ++k) f[k] = (1.0 - denoise) * source[k] + denoise * (*img.feature_vector)[k];
        out.push_back({render(f, img.seed_used), img.seed_used, std::move(f)});
    }
    return out;
}

HttpBackend::HttpBackend(BackendConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    HttpUrl::parse(cfg_.base_url);
}

namespace {

httplib::Client make_client(const HttpUrl& url, double timeout_seconds) {
    httplib::Client client(url.origin);
    auto secs = static_cast<time_t>(timeout_seconds);
    auto usecs = static_cast<time_t>((timeout_seconds - static_cast<double>(secs)) * 1e6);
    client.set_connection_timeout(5, 0);
    client.set_read_timeout(secs, usecs);
    client.set_write_timeout(secs, usecs);
    return client;
}

[[noreturn]] void throw_transport(const httplib::Result& res, const std::string& what) {
    if (res.error() == httplib::Error::Read || res.error() == httplib::Error::Write) {
        throw Error(ErrorCode::Timeout, what + " timed out: " + httplib::to_string(res.error()));
    }
    throw Error(ErrorCode::BackendUnavailable, what + " failed: " + httplib::to_string(res.error()));
}

} // namespace

void HttpBackend::set_checkpoint(const std::string& checkpoint_id) {
    std::lock_guard lock(mutex_);
    switch_checkpoint(checkpoint_id);
}

void HttpBackend::ensure_checkpoint(const std::string& checkpoint_id) {
    if (checkpoint_id.empty() || current_checkpoint_ == checkpoint_id) return;
    switch_checkpoint(checkpoint_id);
}

void HttpBackend::switch_checkpoint(const std::string& checkpoint_id) {
    auto url = HttpUrl::parse(cfg_.base_url);
    auto client = make_client(url, cfg_.model_switch_timeout);

    auto models = client.Get(url.path("/sdapi/v1/sd-models"));
    if (!models) throw_transport(models, "listing models");
    if (models->status != 200) {
        throw Error(ErrorCode::BackendUnavailable, "listing models returned HTTP " + std::to_string(models->status));
    }
    std::optional<std::string> title;
    try {
        for (const auto& m : nlohmann::json::parse(models->body)) {
            std::string t = m.value("title", "");
            std::string name = m.value("model_name", "");
            if (name == checkpoint_id || t == checkpoint_id || t.starts_with(checkpoint_id + ".") ||
                t.starts_with(checkpoint_id + " ")) {
                title = t.empty() ? name : t;
                break;
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::BackendUnavailable, std::string("malformed model list: ") + e.what());
    }
    if (!title) throw Error(ErrorCode::ModelNotFound, "backend has no checkpoint '" + checkpoint_id + "'");

    nlohmann::json body = {{"sd_model_checkpoint", *title}};
    auto res = client.Post(url.path("/sdapi/v1/options"), body.dump(), "application/json");
    if (!res) throw_transport(res, "switching checkpoint");
    if (res->status != 200) {
        throw Error(ErrorCode::BackendUnavailable, "switching checkpoint returned HTTP " + std::to_string(res->status));
    }
    current_checkpoint_ = checkpoint_id;
}

std::vector<GeneratedImage> HttpBackend::generate(const std::string& route, const nlohmann::json& body,
                                                  std::int64_t seed) {
    auto url = HttpUrl::parse(cfg_.base_url);
    auto client = make_client(url, cfg_.request_timeout);
    auto res = client.Post(url.path(route), body.dump(), "application/json");
    if (!res) throw_transport(res, route);
    if (res->status != 200) {
        throw Error(ErrorCode::BackendUnavailable, route + " returned HTTP " + std::to_string(res->status));
    }
    std::vector<GeneratedImage> out;
    try {
        auto j = nlohmann::json::parse(res->body);
        std::vector<std::int64_t> seeds;
        if (j.contains("info") && j["info"].is_string()) {
            auto info = nlohmann::json::parse(j["info"].get<std::string>(), nullptr, false);
            if (!info.is_discarded() && info.contains("all_seeds")) seeds = info["all_seeds"].get<std::vector<std::int64_t>>();
        }
        const auto& images = j.at("images");
        for (std::size_t i = 0; i < images.size(); ++i) {
            GeneratedImage img;
            img.bytes = base64_decode(images[i].get<std::string>());
            if (img.bytes.empty()) throw Error(ErrorCode::BackendUnavailable, "backend returned an empty image");
            img.seed_used = i < seeds.size() ? seeds[i] : seed + static_cast<std::int64_t>(i);
            out.push_back(std::move(img));
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::BackendUnavailable, std::string("malformed generation response: ") + e.what());
    }
    return out;
}

namespace {

nlohmann::json generation_body(const GenerationWorkflow& w, int steps) {
    return {{"prompt", w.positive_prompt}, {"negative_prompt", w.negative_prompt},
            {"cfg_scale", w.cfg_scale},    {"seed", w.seed},
            {"width", w.width},            {"height", w.height},
            {"batch_size", w.batch_size},  {"steps", steps}};
}

} // namespace

std::vector<GeneratedImage> HttpBackend::txt2img(const GenerationWorkflow& w) {
    w.validate();
    std::lock_guard lock(mutex_);
    ensure_checkpoint(w.checkpoint_id);
    return generate("/sdapi/v1/txt2img", generation_body(w, cfg_.steps), w.seed);
}

std::vector<GeneratedImage> HttpBackend::img2img(const GeneratedImage& image, const GenerationWorkflow& w,
                                                 double denoise) {
    if (image.bytes.empty()) throw Error(ErrorCode::InvalidArgument, "img2img input image is empty");
    if (!(denoise > 0 && denoise < 1)) throw Error(ErrorCode::InvalidArgument, "denoise must be in (0, 1)");
    w.validate();
    std::lock_guard lock(mutex_);
    ensure_checkpoint(w.checkpoint_id);
    auto body = generation_body(w, cfg_.steps);
    body["init_images"] = nlohmann::json::array({base64_encode(image.bytes)});
    body["denoising_strength"] = denoise;
    return generate("/sdapi/v1/img2img", body, w.seed);
}

double mean_pairwise_distance(std::span<const GeneratedImage> images) {
    double total = 0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < images.size(); ++i) {
        for (std::size_t j = i + 1; j < images.size(); ++j) {
            const auto& a = images[i].feature_vector;
            const auto& b = images[j].feature_vector;
            if (!a || !b || a->size() != b->size()) {
                throw Error(ErrorCode::InvalidArgument, "images lack comparable feature vectors");
            }
            double d2 = 0;
            for (std::size_t k = 0; k < a->size(); ++k) d2 += ((*a)[k] - (*b)[k]) * ((*a)[k] - (*b)[k]);
            total += std::sqrt(d2);
            ++pairs;
        }
    }
    return pairs ? total / static_cast<double>(pairs) : 0.0;
}

} // namespace manta
