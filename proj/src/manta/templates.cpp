#include "manta/templates.hpp"

#include "manta/util.hpp"

namespace manta {

namespace {
#include "templates_data.inc"
} // namespace

std::string_view default_template(TemplateId id) {
    switch (id) {
    case TemplateId::decompose: return kDecomposeTemplate;
    case TemplateId::detail_enhancement: return kDetailEnhancementTemplate;
    case TemplateId::judge_pair: return kJudgePairTemplate;
    }
    return {};
}

std::string_view template_file_name(TemplateId id) {
    switch (id) {
    case TemplateId::decompose: return "decompose.txt";
    case TemplateId::detail_enhancement: return "detail_enhancement.txt";
    case TemplateId::judge_pair: return "judge_pair.txt";
    }
    return {};
}

std::string load_template(TemplateId id, const std::filesystem::path& dir) {
    if (!dir.empty()) {
        auto path = dir / template_file_name(id);
        if (std::filesystem::exists(path)) return read_text_file(path);
    }
    return std::string(default_template(id));
}

std::string render_template(std::string_view tpl, const std::vector<std::pair<std::string, std::string>>& values) {
    std::string out(tpl);
    for (const auto& [key, value] : values) out = replace_all(std::move(out), "{" + key + "}", value);
    return out;
}

std::string render_judge_prompt(std::string_view tpl, Criterion criterion, std::string_view generation_prompt,
                                std::size_t count_a, std::size_t count_b) {
    std::string question;
    switch (criterion) {
    case Criterion::diversity:
        question = "Which set varies more in content, style and theme across its images?";
        break;
    case Criterion::quality:
        question = "Which set contains the higher-quality images: sharper, more coherent, fewer artifacts?";
        break;
    case Criterion::alignment:
        question = "Which set depicts the prompt more faithfully?";
        break;
    }
    return render_template(tpl, {{"criterion", std::string(to_string(criterion))},
                                 {"question", question},
                                 {"prompt", std::string(generation_prompt)},
                                 {"count_a", std::to_string(count_a)},
                                 {"count_b", std::to_string(count_b)}});
}

} // namespace manta
