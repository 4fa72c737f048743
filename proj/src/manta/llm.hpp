#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace manta {

struct ProviderConfig {
    std::string endpoint;       // "mock://<seed>[?judge=coin]" or an OpenAI-compatible base URL
    std::string model_id;
    std::string api_key_env;    // name of the environment variable holding the key
    double timeout_seconds = 60.0;
    int max_retries = 2;
    int retry_backoff_ms = 200;
    std::size_t mock_embedding_dimension = 64;

    void validate() const;
};

class EmbeddingVector {
public:
    explicit EmbeddingVector(std::vector<double> values);

    std::size_t dimension() const noexcept { return values_.size(); }
    std::span<const double> values() const noexcept { return values_; }
    double operator[](std::size_t i) const { return values_[i]; }

    bool operator==(const EmbeddingVector&) const = default;

private:
    std::vector<double> values_;
};

class Tokenizer {
public:
    virtual ~Tokenizer() = default;
    virtual std::size_t count(std::string_view text) const = 0;
};

class WhitespaceTokenizer final : public Tokenizer {
public:
    std::size_t count(std::string_view text) const override;
};

/// Whitespace-split count; total over arbitrary bytes.
std::size_t count_tokens(std::string_view text);

struct TokenCounts {
    std::uint64_t completion_tokens = 0;
    std::uint64_t embedding_tokens = 0;
    std::optional<std::uint64_t> budget;

    std::uint64_t total() const noexcept { return completion_tokens + embedding_tokens; }
    bool operator==(const TokenCounts&) const = default;
};

/// Running token count for one run. Counters only grow; safe for concurrent callers.
class TokenLedger {
public:
    explicit TokenLedger(std::optional<std::uint64_t> budget = std::nullopt);

    /// Throws BudgetExceeded when the ledger is exhausted or `projected` more tokens would overflow it.
    void check_budget(std::uint64_t projected) const;

    void charge_completion(std::uint64_t tokens) noexcept;
    void charge_embedding(std::uint64_t tokens) noexcept;

    std::uint64_t total() const noexcept;
    TokenCounts snapshot() const noexcept;
    std::optional<std::uint64_t> budget() const noexcept { return budget_; }

private:
    std::atomic<std::uint64_t> completion_{0};
    std::atomic<std::uint64_t> embedding_{0};
    std::optional<std::uint64_t> budget_;
};

struct ImageAttachment {
    std::string label;  // which presentation set the image belongs to ("A" / "B")
    std::vector<std::uint8_t> bytes;
    std::string mime = "image/png";
};

struct ChatRequest {
    std::string text;
    std::vector<ImageAttachment> images;
};

/// Raw provider transport; the gateway adds accounting and retries on top.
class Provider {
public:
    virtual ~Provider() = default;
    virtual std::string complete(const ChatRequest& request) = 0;
    virtual std::vector<std::vector<double>> embed(std::span<const std::string> texts) = 0;
};

std::shared_ptr<Provider> make_provider(const ProviderConfig& cfg);

enum class Criterion { diversity, quality, alignment };
enum class Winner { A, B };

std::string_view to_string(Criterion c) noexcept;
std::string_view to_string(Winner w) noexcept;
Criterion parse_criterion(std::string_view text);

struct JudgeVerdict {
    Criterion criterion;
    Winner winner;
    std::string rationale;

    bool operator==(const JudgeVerdict&) const = default;
};

/// Reads the last "WINNER: A|B" line. Throws UnparseableVerdict when there is none.
JudgeVerdict parse_verdict(std::string_view response, Criterion criterion);

class LlmGateway {
public:
    explicit LlmGateway(ProviderConfig cfg, std::shared_ptr<Provider> provider = nullptr,
                        std::shared_ptr<const Tokenizer> tokenizer = nullptr);

    std::string complete(std::string_view prompt, TokenLedger& ledger);
    std::string complete(const ChatRequest& request, TokenLedger& ledger);
    std::vector<EmbeddingVector> embed(std::span<const std::string> texts, TokenLedger& ledger);

    JudgeVerdict judge_pair(std::span<const std::vector<std::uint8_t>> images_a,
                            std::span<const std::vector<std::uint8_t>> images_b, Criterion criterion,
                            std::string_view generation_prompt, TokenLedger& ledger);

    std::size_t count_tokens(std::string_view text) const { return tokenizer_->count(text); }

    /// Overrides the packaged judge template; placeholders {criterion}, {question}, {prompt}, {count_a}, {count_b}.
    void set_judge_template(std::string text) { judge_template_ = std::move(text); }

    const ProviderConfig& config() const noexcept { return cfg_; }
    std::uint64_t attempts() const noexcept { return attempts_.load(); }

private:
    template <typename Fn>
    auto with_retries(Fn&& fn) -> decltype(fn());

    ProviderConfig cfg_;
    std::shared_ptr<Provider> provider_;
    std::shared_ptr<const Tokenizer> tokenizer_;
    std::string judge_template_;
    std::atomic<std::uint64_t> attempts_{0};
};

} // namespace manta
