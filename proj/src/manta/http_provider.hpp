#pragma once

#include "manta/http_url.hpp"
#include "manta/llm.hpp"

namespace manta {

/// OpenAI-compatible chat/embedding client: POST {base}/chat/completions and {base}/embeddings.
class HttpProvider final : public Provider {
public:
    explicit HttpProvider(ProviderConfig cfg);

    std::string complete(const ChatRequest& request) override;
    std::vector<std::vector<double>> embed(std::span<const std::string> texts) override;

private:
    std::string post_json(std::string_view suffix, const std::string& body) const;

    ProviderConfig cfg_;
    HttpUrl url_;
};

} // namespace manta
