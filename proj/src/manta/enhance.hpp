#pragma once

#include "manta/concept.hpp"
#include "manta/llm.hpp"

#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace manta {

struct EnhancementRequest {
    Concept concept_to_enhance;
    std::size_t n = 8;  // detail count, >= 1
};

/// Fragments longer than this are treated as prose and dropped.
inline constexpr std::size_t kMaxFragmentLength = 80;

/// Optional post-parse filter (e.g. a part-of-speech check). Returns false to drop a fragment.
using FragmentValidator = std::function<bool(std::string_view)>;

std::string render_detail_prompt(std::string_view tpl, const EnhancementRequest& req);

/// Splits an LLM reply on commas and newlines. Strips bullets, numbering,
/// quotes and brackets; drops empty, ellipsis-only and over-long fragments.
std::vector<std::string> parse_detail_fragments(std::string_view response);

class DetailEnhancer {
public:
    explicit DetailEnhancer(LlmGateway& gateway, std::string tpl = {}, FragmentValidator validator = {});

    std::string render(const EnhancementRequest& req) const { return render_detail_prompt(template_, req); }

    /// Adds up to n new details. Throws EmptyEnhancement when the reply has no usable fragment.
    Concept enhance(const EnhancementRequest& req, TokenLedger& ledger) const;

private:
    LlmGateway& gateway_;
    std::string template_;
    FragmentValidator validator_;
};

} // namespace manta
