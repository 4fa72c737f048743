#pragma once

#include <nlohmann/json.hpp>

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace manta {

/// A named subject with descriptive details and rendering styles.
///
/// Construction trims the name and every fragment, drops empty fragments and
/// removes case-insensitive duplicates (first casing wins). The name must be
/// non-empty after trimming.
class Concept {
public:
    explicit Concept(std::string_view name, std::vector<std::string> details = {},
                     std::vector<std::string> styles = {});

    const std::string& name() const noexcept { return name_; }
    const std::vector<std::string>& details() const noexcept { return details_; }
    const std::vector<std::string>& styles() const noexcept { return styles_; }

    bool operator==(const Concept&) const = default;

private:
    std::string name_;
    std::vector<std::string> details_;
    std::vector<std::string> styles_;
};

/// Image-wide fragments that are not attached to any single subject.
struct ImageAttributes {
    std::vector<std::string> styles;
    std::vector<std::string> details;

    bool operator==(const ImageAttributes&) const = default;
};

class ConceptMap {
public:
    explicit ConceptMap(Concept main, std::vector<Concept> support = {}, ImageAttributes image = {});

    const Concept& main() const noexcept { return main_; }
    const std::vector<Concept>& support() const noexcept { return support_; }
    const ImageAttributes& image() const noexcept { return image_; }

    /// Main first, then supports in order.
    std::vector<const Concept*> concepts() const;

    ConceptMap with_main(Concept main) const;
    ConceptMap with_support(std::size_t index, Concept replacement) const;

    bool operator==(const ConceptMap&) const = default;

private:
    Concept main_;
    std::vector<Concept> support_;
    ImageAttributes image_;
};

/// Verbatim LLM output kept for audit.
struct RawDecomposition {
    std::string source_text;
};

ConceptMap parse_concept_map(const RawDecomposition& raw);
ConceptMap concept_map_from_json(const nlohmann::json& j);
nlohmann::ordered_json to_json(const Concept& c);
nlohmann::ordered_json to_json(const ConceptMap& m);

/// name, details, styles joined by single spaces.
std::string flatten_to_query(const Concept& c);

/// Comma-separated positive prompt: main query, support queries, image styles, image details.
std::string assemble_prompt(const ConceptMap& m);

Concept merge_details(const Concept& c, std::span<const std::string> extra);

} // namespace manta
