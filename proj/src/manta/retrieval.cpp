#include "manta/retrieval.hpp"

#include "manta/error.hpp"
#include "manta/util.hpp"

#include <cmath>

namespace manta {

void RetrievalPolicy::validate() const {
    if (!(decay > 0 && decay < 1)) throw Error(ErrorCode::InvalidArgument, "decay must be in (0, 1)");
    if (!(init_thresh > 0)) throw Error(ErrorCode::InvalidArgument, "init_thresh must be positive");
    if (k_adapters < 1) throw Error(ErrorCode::InvalidArgument, "k_adapters must be >= 1");
    if (max_decay_iters < 1) throw Error(ErrorCode::InvalidArgument, "max_decay_iters must be >= 1");
}

double RetrievalPolicy::threshold_after(std::size_t decays) const {
    return init_thresh * std::pow(decay, static_cast<double>(decays));
}

bool Guardrails::rejects(const DocumentRecord& r) const {
    if (id_blacklist.contains(r.id) || r.flags.contains("blacklisted")) return true;
    for (const auto& word : word_filters) {
        if (icontains(r.display_name, word) || icontains(r.exemplar_prompt, word)) return true;
    }
    return false;
}

Guardrails Guardrails::merged(const Guardrails& other) const {
    Guardrails out = *this;
    out.id_blacklist.insert(other.id_blacklist.begin(), other.id_blacklist.end());
    out.word_filters.insert(other.word_filters.begin(), other.word_filters.end());
    return out;
}

Guardrails Guardrails::parse(std::string_view text) {
    Guardrails g;
    std::size_t start = 0;
    while (start < text.size()) {
        std::size_t end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        std::string line = trim(text.substr(start, end - start));
        start = end + 1;
        if (line.empty() || line.starts_with('#')) continue;
        if (line.starts_with("id:")) {
            std::string id = trim(std::string_view(line).substr(3));
            if (!id.empty()) g.id_blacklist.insert(id);
        } else {
            g.word_filters.insert(line);
        }
    }
    return g;
}

Guardrails Guardrails::load(const std::filesystem::path& path) {
    return parse(read_text_file(path));
}

std::vector<ScoredHit> apply_guardrails(std::vector<ScoredHit> hits, const Guardrails& rails) {
    std::erase_if(hits, [&](const ScoredHit& h) { return rails.rejects(h.record); });
    return hits;
}

QuerySet build_queries(const ConceptMap& m, LlmGateway& gateway, std::string_view negative_query, TokenLedger& ledger) {
    std::vector<std::string> texts;
    for (const Concept* c : m.concepts()) texts.push_back(flatten_to_query(*c));
    texts.emplace_back(negative_query);
    auto vectors = gateway.embed(texts, ledger);
    EmbeddingVector negative = vectors.back();
    vectors.pop_back();
    texts.pop_back();
    return {std::move(vectors), std::move(negative), std::move(texts)};
}

namespace {

std::vector<std::string> filtered_ids_trace(const std::vector<ScoredHit>& before, const Guardrails& rails) {
    std::vector<std::string> trace;
    for (const auto& h : before) {
        if (rails.rejects(h.record)) trace.push_back("guardrail removed " + h.record.id);
    }
    return trace;
}

std::string describe(const ScoredHit& h) {
    return h.record.id + " (context " + format_number(h.context) + ", margin_sum " + format_number(h.margin_sum) + ")";
}

} // namespace

CheckpointChoice select_checkpoint(const Collection& col, std::span<const EmbeddingVector> positives,
                                   const EmbeddingVector& negative, const RetrievalPolicy& policy,
                                   const Guardrails& rails) {
    if (col.kind() != DocumentKind::checkpoint) {
        throw Error(ErrorCode::InvalidArgument, "select_checkpoint needs a checkpoint collection");
    }
    CheckpointChoice out{};
    if (col.empty()) throw Error(ErrorCode::NoCheckpointAvailable, "checkpoint collection is empty");
    auto ranked = rank_all(col, positives, negative);
    out.trace = filtered_ids_trace(ranked, rails);
    out.candidates = apply_guardrails(std::move(ranked), rails);
    if (out.candidates.empty()) {
        throw Error(ErrorCode::NoCheckpointAvailable, "every checkpoint was removed by guardrails");
    }
    for (const auto& h : out.candidates) {
        if (h.context == 0.0 && h.margin_sum >= policy.omega_c) {
            out.hit = h;
            out.threshold_met = true;
            out.trace.push_back("checkpoint threshold met: " + describe(h) + " >= omega_c " + format_number(policy.omega_c));
            break;
        }
    }
    if (!out.threshold_met) {
        out.hit = out.candidates.front();
        out.trace.push_back("checkpoint fallback: no candidate reached omega_c " + format_number(policy.omega_c) +
                            ", using best-ranked " + describe(out.hit));
    }
    out.checkpoint = out.hit.record;
    return out;
}

AdapterChoice query_loras(const Collection& col, std::span<const EmbeddingVector> positives,
                          const EmbeddingVector& negative, const RetrievalPolicy& policy, const Guardrails& rails,
                          const std::optional<std::string>& base_model) {
    policy.validate();
    if (col.kind() != DocumentKind::adapter) throw Error(ErrorCode::InvalidArgument, "query_loras needs an adapter collection");
    AdapterChoice out;
    out.final_threshold = policy.init_thresh;
    if (col.empty()) {
        out.trace.push_back("adapter gating exhausted: collection is empty");
        return out;
    }

    auto ranked = rank_all(col, positives, negative);
    out.trace = filtered_ids_trace(ranked, rails);
    auto survivors = apply_guardrails(std::move(ranked), rails);
    if (base_model) {
        std::erase_if(survivors, [&](const ScoredHit& h) {
            bool other = !h.record.base_model.empty() && !iequals(h.record.base_model, *base_model);
            if (other) out.trace.push_back("skipped " + h.record.id + ": base model " + h.record.base_model);
            return other;
        });
    }
    out.candidates = survivors;

    std::vector<ScoredHit> selected;
    for (std::size_t decays = 0;; ++decays) {
        double threshold = policy.threshold_after(decays);
        selected.clear();
        for (const auto& h : survivors) {
            if (selected.size() == policy.k_adapters) break;
            if (h.margin_sum >= threshold) selected.push_back(h);
        }
        out.decay_iterations = decays;
        out.final_threshold = threshold;
        out.trace.push_back("threshold " + format_number(threshold) + " after " + std::to_string(decays) +
                            " decays: " + std::to_string(selected.size()) + " adapters pass");
        if (selected.size() >= policy.k_adapters) break;
        if (decays >= policy.max_decay_iters) {
            out.trace.push_back("adapter gating exhausted after " + std::to_string(decays) + " decays with " +
                                std::to_string(selected.size()) + " of " + std::to_string(policy.k_adapters) +
                                " adapters");
            break;
        }
    }

    double weight = selected.empty() ? 0.0 : 1.0 / static_cast<double>(selected.size());
    for (const auto& h : selected) out.adapters.push_back({h.record, weight, h.margin_sum, h.context});
    return out;
}

} // namespace manta
