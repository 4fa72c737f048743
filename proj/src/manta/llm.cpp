#include "manta/llm.hpp"

#include "manta/error.hpp"
#include "manta/http_provider.hpp"
#include "manta/mock_provider.hpp"
#include "manta/templates.hpp"
#include "manta/util.hpp"

#include <chrono>
#include <cmath>
#include <regex>
#include <thread>

namespace manta {

void ProviderConfig::validate() const {
    if (endpoint.empty()) throw Error(ErrorCode::InvalidArgument, "provider endpoint is empty");
    if (!(timeout_seconds > 0)) throw Error(ErrorCode::InvalidArgument, "provider timeout must be positive");
    if (max_retries < 0) throw Error(ErrorCode::InvalidArgument, "max_retries must be >= 0");
}

EmbeddingVector::EmbeddingVector(std::vector<double> values) : values_(std::move(values)) {
    if (values_.empty()) throw Error(ErrorCode::InvalidArgument, "embedding has zero dimension");
    for (double v : values_) {
        if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteInput, "embedding contains a non-finite value");
    }
}

std::size_t WhitespaceTokenizer::count(std::string_view text) const {
    return count_tokens(text);
}

std::size_t count_tokens(std::string_view text) {
    std::size_t n = 0;
    bool in_token = false;
    for (char c : text) {
        bool space = c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
        if (!space && !in_token) ++n;
        in_token = !space;
    }
    return n;
}

TokenLedger::TokenLedger(std::optional<std::uint64_t> budget) : budget_(budget) {
    if (budget_ && *budget_ == 0) throw Error(ErrorCode::InvalidArgument, "token budget must be positive");
}

void TokenLedger::check_budget(std::uint64_t projected) const {
    if (!budget_) return;
    std::uint64_t used = total();
    if (used >= *budget_ || used + projected > *budget_) {
        throw Error(ErrorCode::BudgetExceeded, "token budget " + std::to_string(*budget_) + " exceeded: used " +
                                                   std::to_string(used) + ", next call needs " +
                                                   std::to_string(projected));
    }
}

void TokenLedger::charge_completion(std::uint64_t tokens) noexcept {
    completion_.fetch_add(tokens, std::memory_order_relaxed);
}

void TokenLedger::charge_embedding(std::uint64_t tokens) noexcept {
    embedding_.fetch_add(tokens, std::memory_order_relaxed);
}

std::uint64_t TokenLedger::total() const noexcept {
    return completion_.load(std::memory_order_relaxed) + embedding_.load(std::memory_order_relaxed);
}

TokenCounts TokenLedger::snapshot() const noexcept {
    return {completion_.load(), embedding_.load(), budget_};
}

std::shared_ptr<Provider> make_provider(const ProviderConfig& cfg) {
    cfg.validate();
    if (cfg.endpoint.starts_with("mock://")) return std::make_shared<MockProvider>(MockProvider::from_endpoint(cfg));
    return std::make_shared<HttpProvider>(cfg);
}

std::string_view to_string(Criterion c) noexcept {
    switch (c) {
    case Criterion::diversity: return "diversity";
    case Criterion::quality: return "quality";
    case Criterion::alignment: return "alignment";
    }
    return "diversity";
}

std::string_view to_string(Winner w) noexcept {
    return w == Winner::A ? "A" : "B";
}

Criterion parse_criterion(std::string_view text) {
    std::string t = to_lower(trim(text));
    if (t == "diversity") return Criterion::diversity;
    if (t == "quality" || t == "image quality") return Criterion::quality;
    if (t == "alignment") return Criterion::alignment;
    throw Error(ErrorCode::InvalidArgument, "unknown criterion '" + std::string(text) + "'");
}

JudgeVerdict parse_verdict(std::string_view response, Criterion criterion) {
    static const std::regex winner_line(R"(^\s*\**\s*WINNER\s*:\s*\**\s*([AB])\b)", std::regex::icase);
    std::optional<Winner> winner;
    std::string rationale;
    std::size_t start = 0;
    while (start <= response.size()) {
        std::size_t end = response.find('\n', start);
        if (end == std::string_view::npos) end = response.size();
        std::string line(response.substr(start, end - start));
        std::smatch m;
        if (std::regex_search(line, m, winner_line)) {
            winner = (m[1].str() == "A" || m[1].str() == "a") ? Winner::A : Winner::B;
        } else if (!trim(line).empty()) {
            if (!rationale.empty()) rationale += '\n';
            rationale += trim(line);
        }
        start = end + 1;
    }
    if (!winner) throw Error(ErrorCode::UnparseableVerdict, "judge response has no WINNER line");
    return {criterion, *winner, rationale};
}

LlmGateway::LlmGateway(ProviderConfig cfg, std::shared_ptr<Provider> provider,
                       std::shared_ptr<const Tokenizer> tokenizer)
    : cfg_(std::move(cfg)),
      provider_(provider ? std::move(provider) : make_provider(cfg_)),
      tokenizer_(tokenizer ? std::move(tokenizer) : std::make_shared<WhitespaceTokenizer>()),
      judge_template_(default_template(TemplateId::judge_pair)) {
    cfg_.validate();
}

template <typename Fn>
auto LlmGateway::with_retries(Fn&& fn) -> decltype(fn()) {
    for (int attempt = 0;; ++attempt) {
        attempts_.fetch_add(1);
        try {
            return fn();
        } catch (const ProviderFailure& failure) {
            if (!failure.retryable() || attempt >= cfg_.max_retries) throw;
        }
        if (cfg_.retry_backoff_ms > 0) {
            std::this_thread::sleep_for(std::chrono::milliseconds(cfg_.retry_backoff_ms << attempt));
        }
    }
}

std::string LlmGateway::complete(std::string_view prompt, TokenLedger& ledger) {
    return complete(ChatRequest{std::string(prompt), {}}, ledger);
}

std::string LlmGateway::complete(const ChatRequest& request, TokenLedger& ledger) {
    std::uint64_t prompt_tokens = count_tokens(request.text);
    ledger.check_budget(prompt_tokens);
    std::string reply = with_retries([&] { return provider_->complete(request); });
    ledger.charge_completion(prompt_tokens + count_tokens(reply));
    return reply;
}

std::vector<EmbeddingVector> LlmGateway::embed(std::span<const std::string> texts, TokenLedger& ledger) {
    if (texts.empty()) throw Error(ErrorCode::InvalidArgument, "embed called with no texts");
    std::uint64_t tokens = 0;
    for (const auto& t : texts) tokens += count_tokens(t);
    ledger.check_budget(tokens);

    auto raw = with_retries([&] { return provider_->embed(texts); });
    if (raw.size() != texts.size()) {
        throw Error(ErrorCode::DimensionMismatch, "provider returned " + std::to_string(raw.size()) +
                                                      " embeddings for " + std::to_string(texts.size()) + " texts");
    }
    std::vector<EmbeddingVector> out;
    out.reserve(raw.size());
    for (auto& v : raw) {
        if (!out.empty() && v.size() != out.front().dimension()) {
            throw Error(ErrorCode::DimensionMismatch, "provider returned ragged embeddings");
        }
        out.emplace_back(std::move(v));
    }
    ledger.charge_embedding(tokens);
    return out;
}

JudgeVerdict LlmGateway::judge_pair(std::span<const std::vector<std::uint8_t>> images_a,
                                    std::span<const std::vector<std::uint8_t>> images_b, Criterion criterion,
                                    std::string_view generation_prompt, TokenLedger& ledger) {
    if (images_a.empty() || images_b.empty()) {
        throw Error(ErrorCode::InvalidArgument, "judge_pair needs two non-empty image sets");
    }
    ChatRequest request;
    request.text = render_judge_prompt(judge_template_, criterion, generation_prompt, images_a.size(), images_b.size());
    for (const auto& img : images_a) request.images.push_back({"A", img, sniff_mime(img)});
    for (const auto& img : images_b) request.images.push_back({"B", img, sniff_mime(img)});
    std::string reply = complete(request, ledger);
    return parse_verdict(reply, criterion);
}

} // namespace manta
