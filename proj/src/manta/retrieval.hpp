#pragma once

#include "manta/concept.hpp"
#include "manta/llm.hpp"
#include "manta/vector_index.hpp"

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace manta {

inline constexpr std::string_view kDefaultNegativeQuery = "low quality, deformed, disfigured, watermark, text";

struct RetrievalPolicy {
    double omega_c = 0.35;        // checkpoint relevancy threshold on margin_sum
    std::size_t k_adapters = 3;
    double init_thresh = 0.6;
    double decay = 0.95;
    std::size_t max_decay_iters = 25;
    std::string negative_query{kDefaultNegativeQuery};

    void validate() const;
    /// init_thresh * decay^m, computed in closed form so the loop cannot drift.
    double threshold_after(std::size_t decays) const;
};

struct Guardrails {
    std::set<std::string> id_blacklist;
    std::set<std::string> word_filters;  // case-insensitive substrings of display_name / exemplar_prompt

    bool rejects(const DocumentRecord& r) const;
    /// Union of both rule sets.
    Guardrails merged(const Guardrails& other) const;

    /// One entry per line: "id:<id>" blacklists an id, any other non-empty line is a filter word.
    /// Lines starting with '#' are comments.
    static Guardrails parse(std::string_view text);
    static Guardrails load(const std::filesystem::path& path);
};

std::vector<ScoredHit> apply_guardrails(std::vector<ScoredHit> hits, const Guardrails& rails);

struct QuerySet {
    std::vector<EmbeddingVector> positives;  // main concept first, then supports
    EmbeddingVector negative;
    std::vector<std::string> positive_texts;
};

QuerySet build_queries(const ConceptMap& m, LlmGateway& gateway, std::string_view negative_query, TokenLedger& ledger);

struct CheckpointChoice {
    DocumentRecord checkpoint;
    ScoredHit hit;
    bool threshold_met = false;
    std::vector<ScoredHit> candidates;  // guardrail survivors, ranked
    std::vector<std::string> trace;
};

/// Highest-ranked survivor with context == 0 and margin_sum >= omega_c, else the
/// best survivor (fallback noted in the trace). Throws NoCheckpointAvailable.
CheckpointChoice select_checkpoint(const Collection& col, std::span<const EmbeddingVector> positives,
                                   const EmbeddingVector& negative, const RetrievalPolicy& policy,
                                   const Guardrails& rails);

struct WeightedAdapter {
    DocumentRecord record;
    double weight = 1.0;
    double margin_sum = 0;
    double context = 0;

    bool operator==(const WeightedAdapter&) const = default;
};

struct AdapterChoice {
    std::vector<WeightedAdapter> adapters;
    std::size_t decay_iterations = 0;
    double final_threshold = 0;
    std::vector<ScoredHit> candidates;
    std::vector<std::string> trace;
};

/// Threshold-decay gating loop. Keeps up to k guardrail-surviving adapters with
/// margin_sum >= threshold, relaxing the threshold by `decay` until k are found
/// or max_decay_iters is reached. An empty result is valid. When
/// `base_model` is set, adapters for other base models are skipped.
AdapterChoice query_loras(const Collection& col, std::span<const EmbeddingVector> positives,
                          const EmbeddingVector& negative, const RetrievalPolicy& policy, const Guardrails& rails,
                          const std::optional<std::string>& base_model = std::nullopt);

struct SelectionResult {
    DocumentRecord checkpoint;
    std::vector<WeightedAdapter> adapters;
    std::vector<std::string> trace;
};

} // namespace manta
