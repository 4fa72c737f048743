#include "manta/concept.hpp"

#include "manta/error.hpp"
#include "manta/relaxed_json.hpp"
#include "manta/util.hpp"

#include <algorithm>

namespace manta {

namespace {

void append_unique(std::vector<std::string>& out, std::string_view fragment) {
    std::string clean = collapse_whitespace(fragment);
    if (clean.empty()) return;
    bool seen = std::any_of(out.begin(), out.end(), [&](const std::string& s) { return iequals(s, clean); });
    if (!seen) out.push_back(std::move(clean));
}

std::vector<std::string> normalize_fragments(const std::vector<std::string>& in) {
    std::vector<std::string> out;
    out.reserve(in.size());
    for (const auto& f : in) append_unique(out, f);
    return out;
}

std::vector<std::string> string_list(const nlohmann::json& obj, const char* key, const char* where) {
    if (!obj.contains(key) || obj.at(key).is_null()) return {};
    const auto& v = obj.at(key);
    if (!v.is_array()) {
        throw Error(ErrorCode::MalformedDecomposition, std::string(where) + "." + key + " is not a list");
    }
    std::vector<std::string> out;
    for (const auto& item : v) {
        if (!item.is_string()) {
            throw Error(ErrorCode::MalformedDecomposition, std::string(where) + "." + key + " has a non-text entry");
        }
        out.push_back(item.get<std::string>());
    }
    return out;
}

Concept concept_from_json(const nlohmann::json& obj, const char* where) {
    if (!obj.is_object()) throw Error(ErrorCode::MalformedDecomposition, std::string(where) + " is not a mapping");
    if (!obj.contains("name") || !obj.at("name").is_string()) {
        throw Error(ErrorCode::MalformedDecomposition, std::string(where) + " has no name");
    }
    try {
        return Concept(obj.at("name").get<std::string>(), string_list(obj, "details", where),
                       string_list(obj, "styles", where));
    } catch (const Error& e) {
        if (e.code() == ErrorCode::InvalidArgument) throw Error(ErrorCode::MalformedDecomposition, e.what());
        throw;
    }
}

} // namespace

Concept::Concept(std::string_view name, std::vector<std::string> details, std::vector<std::string> styles)
    : name_(collapse_whitespace(name)),
      details_(normalize_fragments(details)),
      styles_(normalize_fragments(styles)) {
    if (name_.empty()) throw Error(ErrorCode::InvalidArgument, "concept name is empty");
}

ConceptMap::ConceptMap(Concept main, std::vector<Concept> support, ImageAttributes image)
    : main_(std::move(main)), image_{normalize_fragments(image.styles), normalize_fragments(image.details)} {
    for (auto& s : support) {
        if (iequals(s.name(), main_.name())) continue;
        bool dup = std::any_of(support_.begin(), support_.end(),
                               [&](const Concept& c) { return iequals(c.name(), s.name()); });
        if (!dup) support_.push_back(std::move(s));
    }
}

std::vector<const Concept*> ConceptMap::concepts() const {
    std::vector<const Concept*> out{&main_};
    for (const auto& s : support_) out.push_back(&s);
    return out;
}

ConceptMap ConceptMap::with_main(Concept main) const {
    return ConceptMap(std::move(main), support_, image_);
}

ConceptMap ConceptMap::with_support(std::size_t index, Concept replacement) const {
    auto support = support_;
    support.at(index) = std::move(replacement);
    return ConceptMap(main_, std::move(support), image_);
}

ConceptMap concept_map_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw Error(ErrorCode::MalformedDecomposition, "decomposition is not a mapping");
    if (!j.contains("main") || j.at("main").is_null()) {
        throw Error(ErrorCode::MalformedDecomposition, "decomposition has no main concept");
    }
    Concept main = concept_from_json(j.at("main"), "main");

    std::vector<Concept> support;
    if (j.contains("support") && !j.at("support").is_null()) {
        const auto& s = j.at("support");
        if (!s.is_array()) throw Error(ErrorCode::MalformedDecomposition, "support is not a list");
        for (const auto& item : s) support.push_back(concept_from_json(item, "support[]"));
    }

    ImageAttributes image;
    if (j.contains("image") && j.at("image").is_object()) {
        image.styles = string_list(j.at("image"), "styles", "image");
        image.details = string_list(j.at("image"), "details", "image");
    }
    return ConceptMap(std::move(main), std::move(support), std::move(image));
}

ConceptMap parse_concept_map(const RawDecomposition& raw) {
    nlohmann::json j;
    try {
        j = parse_relaxed_json(raw.source_text);
    } catch (const Error& e) {
        throw Error(ErrorCode::MalformedDecomposition, e.what());
    }
    return concept_map_from_json(j);
}

nlohmann::ordered_json to_json(const Concept& c) {
    nlohmann::ordered_json j;
    j["name"] = c.name();
    j["styles"] = c.styles();
    j["details"] = c.details();
    return j;
}

nlohmann::ordered_json to_json(const ConceptMap& m) {
    nlohmann::ordered_json j;
    j["main"] = to_json(m.main());
    j["support"] = nlohmann::ordered_json::array();
    for (const auto& s : m.support()) j["support"].push_back(to_json(s));
    j["image"] = {{"styles", m.image().styles}, {"details", m.image().details}};
    return j;
}

std::string flatten_to_query(const Concept& c) {
    std::string out = c.name();
    for (const auto& d : c.details()) out += " " + d;
    for (const auto& s : c.styles()) out += " " + s;
    return collapse_whitespace(out);
}

std::string assemble_prompt(const ConceptMap& m) {
    std::vector<std::string> parts;
    for (const Concept* c : m.concepts()) {
        parts.push_back(c->name());
        parts.insert(parts.end(), c->details().begin(), c->details().end());
        parts.insert(parts.end(), c->styles().begin(), c->styles().end());
    }
    parts.insert(parts.end(), m.image().styles.begin(), m.image().styles.end());
    parts.insert(parts.end(), m.image().details.begin(), m.image().details.end());
    return join(parts, ", ");
}

Concept merge_details(const Concept& c, std::span<const std::string> extra) {
    std::vector<std::string> details = c.details();
    details.insert(details.end(), extra.begin(), extra.end());
    return Concept(c.name(), std::move(details), c.styles());
}

} // namespace manta
