#pragma once

#include "manta/concept.hpp"
#include "manta/retrieval.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace manta {

struct AdapterRef {
    std::string id;
    double weight = 1.0;

    bool operator==(const AdapterRef&) const = default;
};

struct GenerationWorkflow {
    std::string checkpoint_id;
    std::string base_model;
    std::vector<AdapterRef> adapters;
    std::string positive_prompt;
    std::string negative_prompt;
    double cfg_scale = 7.0;
    std::int64_t seed = 0;
    int width = 512;
    int height = 512;
    int batch_size = 3;

    /// Throws InvalidArgument on size < 512 or not a multiple of 8, cfg <= 0, batch < 1.
    void validate() const;
    bool operator==(const GenerationWorkflow&) const = default;
};

nlohmann::ordered_json to_json(const GenerationWorkflow& w);
GenerationWorkflow workflow_from_json(const nlohmann::json& j);

struct GenerationKnobs {
    double cfg_scale = 7.0;
    std::optional<std::int64_t> seed;  // random when unset
    int width = 512;
    int height = 512;
    int batch_size = 3;
};

/// "<lora:{id}:{weight}>"
std::string adapter_tag(const AdapterRef& a);

/// Positive prompt is assemble_prompt(m) followed by one activation tag per adapter.
/// Adapters flagged "blacklisted" are never emitted.
GenerationWorkflow compose(const ConceptMap& m, const SelectionResult& sel, const GenerationKnobs& knobs,
                           std::string_view negative_prompt);

std::vector<GenerationWorkflow> vary_cfg(const GenerationWorkflow& w, std::span<const double> values);

/// Hook for future alignment passes; currently the identity.
GenerationWorkflow refine_passthrough(const GenerationWorkflow& w);

} // namespace manta
