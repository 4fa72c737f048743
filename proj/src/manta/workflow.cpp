#include "manta/workflow.hpp"

#include "manta/error.hpp"
#include "manta/util.hpp"

#include <random>

namespace manta {

void GenerationWorkflow::validate() const {
    auto check_side = [](int px, const char* what) {
        if (px < 512 || px % 8 != 0) {
            throw Error(ErrorCode::InvalidArgument,
                        std::string(what) + " must be >= 512 and a multiple of 8, got " + std::to_string(px));
        }
    };
    check_side(width, "width");
    check_side(height, "height");
    if (!(cfg_scale > 0)) throw Error(ErrorCode::InvalidArgument, "cfg_scale must be positive");
    if (batch_size < 1) throw Error(ErrorCode::InvalidArgument, "batch_size must be >= 1");
    for (const auto& a : adapters) {
        if (!(a.weight > 0 && a.weight <= 1)) throw Error(ErrorCode::InvalidArgument, "adapter weight must be in (0, 1]");
    }
}

nlohmann::ordered_json to_json(const GenerationWorkflow& w) {
    nlohmann::ordered_json j;
    j["checkpoint_id"] = w.checkpoint_id;
    j["base_model"] = w.base_model;
    j["adapters"] = nlohmann::ordered_json::array();
    for (const auto& a : w.adapters) j["adapters"].push_back({{"id", a.id}, {"weight", a.weight}});
    j["positive_prompt"] = w.positive_prompt;
    j["negative_prompt"] = w.negative_prompt;
    j["cfg_scale"] = w.cfg_scale;
    j["seed"] = w.seed;
    j["width"] = w.width;
    j["height"] = w.height;
    j["batch_size"] = w.batch_size;
    return j;
}

GenerationWorkflow workflow_from_json(const nlohmann::json& j) {
    try {
        GenerationWorkflow w;
        w.checkpoint_id = j.at("checkpoint_id").get<std::string>();
        w.base_model = j.value("base_model", "");
        for (const auto& a : j.at("adapters")) w.adapters.push_back({a.at("id").get<std::string>(), a.at("weight").get<double>()});
        w.positive_prompt = j.at("positive_prompt").get<std::string>();
        w.negative_prompt = j.at("negative_prompt").get<std::string>();
        w.cfg_scale = j.at("cfg_scale").get<double>();
        w.seed = j.at("seed").get<std::int64_t>();
        w.width = j.at("width").get<int>();
        w.height = j.at("height").get<int>();
        w.batch_size = j.at("batch_size").get<int>();
        w.validate();
        return w;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::SchemaError, std::string("invalid workflow: ") + e.what());
    }
}

std::string adapter_tag(const AdapterRef& a) {
    return "<lora:" + a.id + ":" + format_number(a.weight) + ">";
}

GenerationWorkflow compose(const ConceptMap& m, const SelectionResult& sel, const GenerationKnobs& knobs,
                           std::string_view negative_prompt) {
    GenerationWorkflow w;
    w.checkpoint_id = sel.checkpoint.id;
    w.base_model = sel.checkpoint.base_model;
    w.positive_prompt = assemble_prompt(m);
    for (const auto& a : sel.adapters) {
        if (a.record.flags.contains("blacklisted")) continue;
        AdapterRef ref{a.record.id, a.weight};
        w.positive_prompt += " " + adapter_tag(ref);
        w.adapters.push_back(std::move(ref));
    }
    w.negative_prompt = std::string(negative_prompt);
    w.cfg_scale = knobs.cfg_scale;
    if (knobs.seed) {
        w.seed = *knobs.seed;
    } else {
        std::random_device rd;
        w.seed = static_cast<std::int64_t>((static_cast<std::uint64_t>(rd()) << 31) ^ rd()) & 0x7fffffff;
    }
    w.width = knobs.width;
    w.height = knobs.height;
    w.batch_size = knobs.batch_size;
    w.validate();
    return w;
}

std::vector<GenerationWorkflow> vary_cfg(const GenerationWorkflow& w, std::span<const double> values) {
    if (values.empty()) throw Error(ErrorCode::InvalidArgument, "vary_cfg needs at least one value");
    std::vector<GenerationWorkflow> out;
    out.reserve(values.size());
    for (double v : values) {
        GenerationWorkflow clone = w;
        clone.cfg_scale = v;
        clone.validate();
        out.push_back(std::move(clone));
    }
    return out;
}

GenerationWorkflow refine_passthrough(const GenerationWorkflow& w) {
    return w;
}

} // namespace manta
