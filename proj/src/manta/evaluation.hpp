#pragma once

#include "manta/backend.hpp"
#include "manta/llm.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace manta {

double win_rate(std::span<const JudgeVerdict> verdicts, Criterion criterion);

/// Equal-dimension feature vectors, at least two so covariance is defined.
class FeatureSet {
public:
    explicit FeatureSet(std::vector<std::vector<double>> vectors);

    std::size_t size() const noexcept { return vectors_.size(); }
    std::size_t dimension() const noexcept { return vectors_.front().size(); }
    const std::vector<std::vector<double>>& vectors() const noexcept { return vectors_; }

    FeatureSet merged(const FeatureSet& other) const;

private:
    std::vector<std::vector<double>> vectors_;
};

/// Stub-backend feature vectors of a batch.
FeatureSet features_of(std::span<const GeneratedImage> images);

inline constexpr double kFrechetJitter = 1e-6;

/// ||mu_a - mu_b||^2 + tr(Sa + Sb - 2 (Sa Sb)^(1/2)), sample covariances with
/// kFrechetJitter added to both diagonals. The cross term uses the symmetric
/// form tr((sqrt(Sa) Sb sqrt(Sa))^(1/2)). Clamped at 0.
double frechet_distance(const FeatureSet& a, const FeatureSet& b);

struct ExpansionStep {
    std::size_t batch_index = 0;
    double distance = 0;
    bool accepted = false;
};

struct ExpansionResult {
    std::vector<std::size_t> accepted;  // indices into the candidate list
    std::vector<ExpansionStep> trace;
    FeatureSet reference;
};

/// Accepts each batch, in order, whose distance to the growing reference set is below threshold.
ExpansionResult synthetic_expand(const FeatureSet& dataset, std::span<const FeatureSet> candidates, double threshold);

enum class PairOutcome { a_wins, b_wins, inconsistent };

std::string_view to_string(PairOutcome o) noexcept;

struct PromptEvaluation {
    std::string prompt;
    bool failed = false;
    std::string error;
    std::vector<std::pair<Criterion, PairOutcome>> outcomes;
    std::vector<JudgeVerdict> raw_verdicts;  // A-first then B-first per criterion
    std::size_t images_a = 0;
    std::size_t images_b = 0;
};

struct CriterionSummary {
    Criterion criterion;
    std::size_t a_wins = 0;
    std::size_t b_wins = 0;
    std::size_t inconsistent = 0;

    std::size_t judged() const noexcept { return a_wins + b_wins + inconsistent; }
    double win_rate() const;
    double loss_rate() const;
    double inconsistent_rate() const;
};

struct EvalRun {
    std::vector<std::string> prompt_set;
    std::string system_a;
    std::string system_b;
    std::vector<PromptEvaluation> prompts;
    TokenCounts tokens_a;
    TokenCounts tokens_b;
    TokenCounts judge_tokens;

    std::vector<CriterionSummary> summary(std::span<const Criterion> criteria) const;
    std::size_t failed() const;
};

nlohmann::ordered_json to_json(const EvalRun& run, std::span<const Criterion> criteria);

/// A system under test: generates a batch for a prompt, charging its own ledger.
using Generator = std::function<std::vector<GeneratedImage>(const std::string& prompt, TokenLedger& ledger)>;

struct EvalOptions {
    std::string system_a = "A";
    std::string system_b = "B";
    std::size_t parallelism = 1;
};

/// Judges every criterion in both presentation orders; a verdict counts only when both orders agree.
/// Generator or judge failures mark the prompt failed and the run continues.
EvalRun evaluate_pair(std::span<const std::string> prompts, const Generator& gen_a, const Generator& gen_b,
                      LlmGateway& judge, std::span<const Criterion> criteria, TokenLedger& judge_ledger,
                      const EvalOptions& options = {});

struct SystemTokens {
    std::string label;
    std::vector<TokenCounts> runs;
    std::size_t images = 0;
};

struct TokenReportRow {
    std::string label;
    std::uint64_t total_tokens = 0;
    std::size_t runs = 0;
    std::size_t images = 0;
    std::optional<double> mean_per_image;  // absent when no images
};

struct TokenReport {
    std::vector<TokenReportRow> rows;
    /// rows[1].mean / rows[0].mean when both exist: how many times more the second system spends.
    std::optional<double> ratio;
};

TokenReport token_report(std::span<const SystemTokens> systems);
nlohmann::ordered_json to_json(const TokenReport& report);

} // namespace manta
