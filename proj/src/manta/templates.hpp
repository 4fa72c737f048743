#pragma once

#include "manta/llm.hpp"

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace manta {

enum class TemplateId { decompose, detail_enhancement, judge_pair };

/// Packaged copy of assets/prompts/<name>.txt, compiled in at build time.
std::string_view default_template(TemplateId id);
std::string_view template_file_name(TemplateId id);

/// Loads a template from `dir` when the file exists there, otherwise the packaged default.
std::string load_template(TemplateId id, const std::filesystem::path& dir);

/// Substitutes every "{key}" occurrence. Unknown placeholders are left untouched.
std::string render_template(std::string_view tpl, const std::vector<std::pair<std::string, std::string>>& values);

std::string render_judge_prompt(std::string_view tpl, Criterion criterion, std::string_view generation_prompt,
                                std::size_t count_a, std::size_t count_b);

} // namespace manta
