#include "manta/http_provider.hpp"

#include "manta/error.hpp"
#include "manta/util.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <cstdlib>

namespace manta {

HttpProvider::HttpProvider(ProviderConfig cfg) : cfg_(std::move(cfg)), url_(HttpUrl::parse(cfg_.endpoint)) {}

std::string HttpProvider::post_json(std::string_view suffix, const std::string& body) const {
    httplib::Client client(url_.origin);
    auto secs = static_cast<time_t>(cfg_.timeout_seconds);
    auto usecs = static_cast<time_t>((cfg_.timeout_seconds - static_cast<double>(secs)) * 1e6);
    client.set_connection_timeout(secs, usecs);
    client.set_read_timeout(secs, usecs);
    client.set_write_timeout(secs, usecs);

    httplib::Headers headers;
    if (!cfg_.api_key_env.empty()) {
        const char* key = std::getenv(cfg_.api_key_env.c_str());
        if (!key) throw ProviderFailure("environment variable " + cfg_.api_key_env + " is not set", false);
        headers.emplace("Authorization", std::string("Bearer ") + key);
    }

    auto res = client.Post(url_.path(suffix), headers, body, "application/json");
    if (!res) {
        throw ProviderFailure("request to " + url_.origin + url_.path(suffix) + " failed: " + httplib::to_string(res.error()),
                              true);
    }
    if (res->status >= 500 || res->status == 429) {
        throw ProviderFailure("provider returned HTTP " + std::to_string(res->status), true, res->status);
    }
    if (res->status >= 400) {
        throw ProviderFailure("provider returned HTTP " + std::to_string(res->status) + ": " + res->body, false,
                              res->status);
    }
    return res->body;
}

std::string HttpProvider::complete(const ChatRequest& request) {
    nlohmann::json content;
    if (request.images.empty()) {
        content = request.text;
    } else {
        content = nlohmann::json::array();
        content.push_back({{"type", "text"}, {"text", request.text}});
        std::size_t index = 0;
        std::string last_label;
        for (const auto& img : request.images) {
            if (img.label != last_label) index = 0;
            last_label = img.label;
            content.push_back({{"type", "text"}, {"text", "Set " + img.label + ", image " + std::to_string(++index) + ":"}});
            content.push_back({{"type", "image_url"},
                               {"image_url", {{"url", "data:" + img.mime + ";base64," + base64_encode(img.bytes)}}}});
        }
    }
    nlohmann::json body = {{"model", cfg_.model_id},
                           {"messages", nlohmann::json::array({{{"role", "user"}, {"content", content}}})}};

    std::string raw = post_json("/chat/completions", body.dump());
    try {
        auto j = nlohmann::json::parse(raw);
        return j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw ProviderFailure(std::string("malformed chat completion response: ") + e.what(), false);
    }
}

std::vector<std::vector<double>> HttpProvider::embed(std::span<const std::string> texts) {
    nlohmann::json body = {{"model", cfg_.model_id}, {"input", texts}};
    std::string raw = post_json("/embeddings", body.dump());
    try {
        auto j = nlohmann::json::parse(raw);
        const auto& data = j.at("data");
        std::vector<std::vector<double>> out(data.size());
        for (std::size_t i = 0; i < data.size(); ++i) {
            std::size_t slot = data[i].value("index", i);
            if (slot >= out.size()) throw ProviderFailure("embedding index out of range", false);
            out[slot] = data[i].at("embedding").get<std::vector<double>>();
        }
        return out;
    } catch (const nlohmann::json::exception& e) {
        throw ProviderFailure(std::string("malformed embedding response: ") + e.what(), false);
    }
}

} // namespace manta
