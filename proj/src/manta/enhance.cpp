#include "manta/enhance.hpp"

#include "manta/error.hpp"
#include "manta/templates.hpp"
#include "manta/util.hpp"

#include <cctype>

namespace manta {

namespace {

bool is_noise(char c) {
    return std::isspace(static_cast<unsigned char>(c)) || c == '"' || c == '\'' || c == '`' || c == '[' ||
           c == ']' || c == '*' || c == '-' || c == '.' || c == ';';
}

std::string clean_fragment(std::string_view raw) {
    std::string s = trim(raw);
    if (s.starts_with("•")) s.erase(0, 3);  // bullet
    // Leading list numbering: "1." / "2)".
    std::size_t digits = 0;
    while (digits < s.size() && std::isdigit(static_cast<unsigned char>(s[digits]))) ++digits;
    if (digits > 0 && digits < s.size() && (s[digits] == '.' || s[digits] == ')')) s.erase(0, digits + 1);
    std::size_t b = 0;
    while (b < s.size() && is_noise(s[b])) ++b;
    std::size_t e = s.size();
    while (e > b && is_noise(s[e - 1])) --e;
    s = s.substr(b, e - b);
    if (auto colon = s.find(':'); colon != std::string::npos && iequals(trim(s.substr(0, colon)), "response")) {
        s = trim(s.substr(colon + 1));
    }
    return collapse_whitespace(s);
}

} // namespace

std::string render_detail_prompt(std::string_view tpl, const EnhancementRequest& req) {
    if (req.n < 1) throw Error(ErrorCode::InvalidArgument, "detail count must be at least 1");
    return render_template(tpl, {{"n", std::to_string(req.n)}, {"concept", flatten_to_query(req.concept_to_enhance)}});
}

std::vector<std::string> parse_detail_fragments(std::string_view response) {
    std::vector<std::string> out;
    std::string current;
    auto flush = [&] {
        std::string f = clean_fragment(current);
        current.clear();
        if (f.empty() || f.size() > kMaxFragmentLength) return;
        bool has_alnum = false;
        for (char c : f) has_alnum |= std::isalnum(static_cast<unsigned char>(c)) != 0;
        if (has_alnum) out.push_back(std::move(f));
    };
    for (char c : response) {
        if (c == ',' || c == '\n') {
            flush();
        } else {
            current.push_back(c);
        }
    }
    flush();
    return out;
}

DetailEnhancer::DetailEnhancer(LlmGateway& gateway, std::string tpl, FragmentValidator validator)
    : gateway_(gateway),
      template_(tpl.empty() ? std::string(default_template(TemplateId::detail_enhancement)) : std::move(tpl)),
      validator_(std::move(validator)) {}

Concept DetailEnhancer::enhance(const EnhancementRequest& req, TokenLedger& ledger) const {
    if (req.n < 1) throw Error(ErrorCode::InvalidArgument, "detail count must be >= 1");
    std::string reply = gateway_.complete(render(req), ledger);

    auto fragments = parse_detail_fragments(reply);
    if (validator_) std::erase_if(fragments, [&](const std::string& f) { return !validator_(f); });
    if (fragments.empty()) {
        throw Error(ErrorCode::EmptyEnhancement, "no usable details for '" + req.concept_to_enhance.name() + "'");
    }
    if (fragments.size() > req.n) fragments.resize(req.n);
    return merge_details(req.concept_to_enhance, fragments);
}

} // namespace manta
