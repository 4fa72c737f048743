#pragma once

#include "manta/llm.hpp"

#include <cstdint>
#include <string>

namespace manta {

/// Offline provider: every reply is a pure function of (seed, request).
///
/// It recognizes the packaged prompt shapes and answers them plausibly:
///  - decomposition requests ("Prompt: ..." with the concept-map schema) get a
///    rule-based split into main and supporting subjects;
///  - detail requests ("{n} extremely specific details" / "Concept: ...") get n
///    comma-separated fragments drawn from a fixed vocabulary;
///  - judge requests (labelled image attachments) get a "WINNER:" line.
/// Anything else gets a short hash-derived reply.
///
/// Embeddings are signed feature-hashed bags of words, L2-normalized, so texts
/// sharing words have positive cosine similarity.
class MockProvider final : public Provider {
public:
    enum class JudgeMode {
        consistent,  // per-set score, so swapping A and B flips the winner; equal sets go to A
        coin,        // hash of the full ordered request; position-sensitive
    };

    struct Options {
        std::uint64_t seed = 0;
        std::size_t embedding_dimension = 64;
        JudgeMode judge_mode = JudgeMode::consistent;
    };

    explicit MockProvider(Options options) : options_(options) {}

    /// Parses "mock://<seed>[?judge=coin|consistent]".
    static MockProvider from_endpoint(const ProviderConfig& cfg);

    std::string complete(const ChatRequest& request) override;
    std::vector<std::vector<double>> embed(std::span<const std::string> texts) override;

    std::vector<double> embed_one(std::string_view text) const;
    std::string decompose(std::string_view prompt) const;
    std::string enhance(std::string_view concept_text, std::size_t n) const;

private:
    std::string judge(const ChatRequest& request) const;

    Options options_;
};

} // namespace manta
