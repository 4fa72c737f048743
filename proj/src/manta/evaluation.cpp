#include "manta/evaluation.hpp"

#include "manta/error.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <future>

namespace manta {

double win_rate(std::span<const JudgeVerdict> verdicts, Criterion criterion) {
    std::size_t total = 0, wins = 0;
    for (const auto& v : verdicts) {
        if (v.criterion != criterion) continue;
        ++total;
        if (v.winner == Winner::A) ++wins;
    }
    if (total == 0) throw Error(ErrorCode::NoVerdicts, "no verdicts for " + std::string(to_string(criterion)));
    return static_cast<double>(wins) / static_cast<double>(total);
}

FeatureSet::FeatureSet(std::vector<std::vector<double>> vectors) : vectors_(std::move(vectors)) {
    if (vectors_.size() < 2) throw Error(ErrorCode::InvalidArgument, "a feature set needs at least two vectors");
    const std::size_t d = vectors_.front().size();
    if (d == 0) throw Error(ErrorCode::InvalidArgument, "feature vectors have zero dimension");
    for (const auto& v : vectors_) {
        if (v.size() != d) throw Error(ErrorCode::DimensionMismatch, "feature vectors differ in dimension");
        for (double x : v) {
            if (!std::isfinite(x)) throw Error(ErrorCode::NonFiniteInput, "feature vector has a non-finite value");
        }
    }
}

FeatureSet FeatureSet::merged(const FeatureSet& other) const {
    if (other.dimension() != dimension()) throw Error(ErrorCode::DimensionMismatch, "feature sets differ in dimension");
    auto all = vectors_;
    all.insert(all.end(), other.vectors_.begin(), other.vectors_.end());
    return FeatureSet(std::move(all));
}

FeatureSet features_of(std::span<const GeneratedImage> images) {
    std::vector<std::vector<double>> v;
    for (const auto& img : images) {
        if (!img.feature_vector) throw Error(ErrorCode::InvalidArgument, "image has no feature vector");
        v.push_back(*img.feature_vector);
    }
    return FeatureSet(std::move(v));
}

namespace {

struct Moments {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
};

Moments moments(const FeatureSet& s) {
    const auto n = static_cast<Eigen::Index>(s.size());
    const auto d = static_cast<Eigen::Index>(s.dimension());
    Eigen::MatrixXd x(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < d; ++j) x(i, j) = s.vectors()[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    }
    Eigen::VectorXd mean = x.colwise().mean();
    Eigen::MatrixXd centered = x.rowwise() - mean.transpose();
    Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n - 1);
    return {mean, cov};
}

// Symmetric PSD square root; tiny negative eigenvalues from rounding are clamped.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    Eigen::VectorXd roots = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * roots.asDiagonal() * es.eigenvectors().transpose();
}

} // namespace

double frechet_distance(const FeatureSet& a, const FeatureSet& b) {
    if (a.dimension() != b.dimension()) {
        throw Error(ErrorCode::DimensionMismatch, "frechet_distance of sets with dimensions " +
                                                      std::to_string(a.dimension()) + " and " +
                                                      std::to_string(b.dimension()));
    }
    auto ma = moments(a);
    auto mb = moments(b);
    const auto d = ma.cov.rows();
    Eigen::MatrixXd jitter = kFrechetJitter * Eigen::MatrixXd::Identity(d, d);
    Eigen::MatrixXd sa = ma.cov + jitter;
    Eigen::MatrixXd sb = mb.cov + jitter;

    Eigen::MatrixXd root_a = psd_sqrt(sa);
    Eigen::MatrixXd inner = root_a * sb * root_a;
    inner = 0.5 * (inner + inner.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(inner, Eigen::EigenvaluesOnly);
    double cross_trace = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();

    double mean_term = (ma.mean - mb.mean).squaredNorm();
    double fd = mean_term + sa.trace() + sb.trace() - 2.0 * cross_trace;
    return std::max(fd, 0.0);
}

ExpansionResult synthetic_expand(const FeatureSet& dataset, std::span<const FeatureSet> candidates, double threshold) {
    if (!(threshold > 0)) {
        // Nothing can be strictly below a non-positive distance bound.
        ExpansionResult out{{}, {}, dataset};
        for (std::size_t i = 0; i < candidates.size(); ++i) {
            out.trace.push_back({i, frechet_distance(dataset, candidates[i]), false});
        }
        return out;
    }
    ExpansionResult out{{}, {}, dataset};
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        double fd = frechet_distance(out.reference, candidates[i]);
        bool accept = fd < threshold;
        out.trace.push_back({i, fd, accept});
        if (accept) {
            out.accepted.push_back(i);
            out.reference = out.reference.merged(candidates[i]);
        }
    }
    return out;
}

std::string_view to_string(PairOutcome o) noexcept {
    switch (o) {
    case PairOutcome::a_wins: return "A";
    case PairOutcome::b_wins: return "B";
    case PairOutcome::inconsistent: return "inconsistent";
    }
    return "inconsistent";
}

double CriterionSummary::win_rate() const {
    return judged() ? static_cast<double>(a_wins) / static_cast<double>(judged()) : 0.0;
}

double CriterionSummary::loss_rate() const {
    return judged() ? static_cast<double>(b_wins) / static_cast<double>(judged()) : 0.0;
}

double CriterionSummary::inconsistent_rate() const {
    return judged() ? static_cast<double>(inconsistent) / static_cast<double>(judged()) : 0.0;
}

std::vector<CriterionSummary> EvalRun::summary(std::span<const Criterion> criteria) const {
    std::vector<CriterionSummary> out;
    for (Criterion c : criteria) {
        CriterionSummary s{c};
        for (const auto& p : prompts) {
            if (p.failed) continue;
            for (const auto& [crit, outcome] : p.outcomes) {
                if (crit != c) continue;
                if (outcome == PairOutcome::a_wins) ++s.a_wins;
                else if (outcome == PairOutcome::b_wins) ++s.b_wins;
                else ++s.inconsistent;
            }
        }
        out.push_back(s);
    }
    return out;
}

std::size_t EvalRun::failed() const {
    return static_cast<std::size_t>(std::count_if(prompts.begin(), prompts.end(), [](const auto& p) { return p.failed; }));
}

namespace {

nlohmann::ordered_json counts_json(const TokenCounts& t) {
    return {{"completion_tokens", t.completion_tokens}, {"embedding_tokens", t.embedding_tokens}, {"total", t.total()}};
}

} // namespace

nlohmann::ordered_json to_json(const EvalRun& run, std::span<const Criterion> criteria) {
    nlohmann::ordered_json j;
    j["system_a"] = run.system_a;
    j["system_b"] = run.system_b;
    j["prompts"] = nlohmann::ordered_json::array();
    for (const auto& p : run.prompts) {
        nlohmann::ordered_json pj;
        pj["prompt"] = p.prompt;
        pj["failed"] = p.failed;
        if (p.failed) pj["error"] = p.error;
        pj["verdicts"] = nlohmann::ordered_json::object();
        for (const auto& [c, o] : p.outcomes) pj["verdicts"][std::string(to_string(c))] = to_string(o);
        j["prompts"].push_back(std::move(pj));
    }
    j["summary"] = nlohmann::ordered_json::array();
    for (const auto& s : run.summary(criteria)) {
        j["summary"].push_back({{"criterion", to_string(s.criterion)},
                                {"judged", s.judged()},
                                {"win_rate", s.win_rate()},
                                {"loss_rate", s.loss_rate()},
                                {"inconsistent_rate", s.inconsistent_rate()}});
    }
    j["failed_prompts"] = run.failed();
    j["tokens"] = {{run.system_a, counts_json(run.tokens_a)},
                   {run.system_b, counts_json(run.tokens_b)},
                   {"judge", counts_json(run.judge_tokens)}};
    return j;
}

EvalRun evaluate_pair(std::span<const std::string> prompts, const Generator& gen_a, const Generator& gen_b,
                      LlmGateway& judge, std::span<const Criterion> criteria, TokenLedger& judge_ledger,
                      const EvalOptions& options) {
    if (criteria.empty()) throw Error(ErrorCode::InvalidArgument, "evaluate_pair needs at least one criterion");
    EvalRun run;
    run.prompt_set.assign(prompts.begin(), prompts.end());
    run.system_a = options.system_a;
    run.system_b = options.system_b;
    TokenLedger ledger_a, ledger_b;

    auto evaluate_one = [&](const std::string& prompt) {
        PromptEvaluation pe;
        pe.prompt = prompt;
        try {
            auto images_a = gen_a(prompt, ledger_a);
            auto images_b = gen_b(prompt, ledger_b);
            pe.images_a = images_a.size();
            pe.images_b = images_b.size();
            std::vector<std::vector<std::uint8_t>> bytes_a, bytes_b;
            for (auto& i : images_a) bytes_a.push_back(std::move(i.bytes));
            for (auto& i : images_b) bytes_b.push_back(std::move(i.bytes));
            for (Criterion c : criteria) {
                auto forward = judge.judge_pair(bytes_a, bytes_b, c, prompt, judge_ledger);
                auto swapped = judge.judge_pair(bytes_b, bytes_a, c, prompt, judge_ledger);
                PairOutcome outcome = PairOutcome::inconsistent;
                if (forward.winner == Winner::A && swapped.winner == Winner::B) outcome = PairOutcome::a_wins;
                if (forward.winner == Winner::B && swapped.winner == Winner::A) outcome = PairOutcome::b_wins;
                pe.outcomes.emplace_back(c, outcome);
                pe.raw_verdicts.push_back(std::move(forward));
                pe.raw_verdicts.push_back(std::move(swapped));
            }
        } catch (const std::exception& e) {
            pe.failed = true;
            pe.error = e.what();
            pe.outcomes.clear();
        }
        return pe;
    };

    const std::size_t workers = std::max<std::size_t>(1, options.parallelism);
    for (std::size_t start = 0; start < prompts.size(); start += workers) {
        std::vector<std::future<PromptEvaluation>> wave;
        for (std::size_t i = start; i < std::min(prompts.size(), start + workers); ++i) {
            wave.push_back(std::async(workers == 1 ? std::launch::deferred : std::launch::async, evaluate_one,
                                      std::cref(prompts[i])));
        }
        for (auto& f : wave) run.prompts.push_back(f.get());
    }
    run.tokens_a = ledger_a.snapshot();
    run.tokens_b = ledger_b.snapshot();
    run.judge_tokens = judge_ledger.snapshot();
    return run;
}

TokenReport token_report(std::span<const SystemTokens> systems) {
    TokenReport report;
    for (const auto& s : systems) {
        TokenReportRow row;
        row.label = s.label;
        row.runs = s.runs.size();
        row.images = s.images;
        for (const auto& r : s.runs) row.total_tokens += r.total();
        if (s.images > 0) row.mean_per_image = static_cast<double>(row.total_tokens) / static_cast<double>(s.images);
        report.rows.push_back(std::move(row));
    }
    if (report.rows.size() >= 2 && report.rows[0].mean_per_image && report.rows[1].mean_per_image &&
        *report.rows[0].mean_per_image > 0) {
        report.ratio = *report.rows[1].mean_per_image / *report.rows[0].mean_per_image;
    }
    return report;
}

nlohmann::ordered_json to_json(const TokenReport& report) {
    nlohmann::ordered_json j;
    j["systems"] = nlohmann::ordered_json::array();
    for (const auto& r : report.rows) {
        nlohmann::ordered_json row = {{"label", r.label}, {"runs", r.runs}, {"images", r.images}, {"total_tokens", r.total_tokens}};
        row["mean_tokens_per_image"] = r.mean_per_image ? nlohmann::ordered_json(*r.mean_per_image) : nlohmann::ordered_json(nullptr);
        j["systems"].push_back(std::move(row));
    }
    j["ratio"] = report.ratio ? nlohmann::ordered_json(*report.ratio) : nlohmann::ordered_json(nullptr);
    return j;
}

} // namespace manta
