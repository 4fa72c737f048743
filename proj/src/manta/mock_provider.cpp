#include "manta/mock_provider.hpp"

#include "manta/error.hpp"
#include "manta/util.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <regex>
#include <set>

namespace manta {

namespace {

const std::set<std::string, std::less<>> kDeterminers = {
    "a", "an", "the", "his", "her", "their", "its", "my", "our", "your", "some", "this", "that", "these", "those",
};

// Words that end one subject phrase and start the next.
const std::set<std::string, std::less<>> kBreakWords = {
    "and", "with", "on", "in", "at", "by", "near", "beside", "next", "to", "of", "under", "over", "behind",
    "from", "into", "onto", "while", "top", "front", "inside", "outside", "above", "below", "for", "is",
    "are", "sits", "sit", "stands", "stand", "carries", "holds", "has", "have", "rides", "plays", "eats",
    "looks", "walks", "runs", "flies", "lies", "who", "which", "that", "against", "around", "along", "across",
};

const std::set<std::string, std::less<>> kEmbeddingStopwords = {
    "a", "an", "the", "of", "and", "with", "in", "on", "at", "to", "for", "by", "is", "are", "his", "her",
};

constexpr std::array kAdjectives = {
    "intricate", "weathered", "glowing", "polished", "ornate", "tattered", "iridescent", "matte", "gilded",
    "cracked", "translucent", "braided", "embroidered", "rusted", "luminous", "jagged", "velvet", "frosted",
    "crimson", "cobalt", "emerald", "obsidian", "ivory", "amber", "silver", "neon", "charcoal", "pearl",
};

constexpr std::array kMaterials = {
    "leather", "steel", "silk", "bronze", "porcelain", "carbon fiber", "wool", "glass", "oak", "jade",
    "chrome", "linen", "bone", "copper", "marble", "canvas",
};

constexpr std::array kParts = {
    "collar", "gauntlets", "visor", "trim", "belt buckle", "shoulder plates", "cape", "boots", "mask",
    "sash", "pendant", "gloves", "headband", "bracers", "hood", "armband", "circuits", "stitching",
    "markings", "insignia",
};

std::string strip_punct(std::string word) {
    while (!word.empty() && !std::isalnum(static_cast<unsigned char>(word.back()))) word.pop_back();
    std::size_t i = 0;
    while (i < word.size() && !std::isalnum(static_cast<unsigned char>(word[i]))) ++i;
    return word.substr(i);
}

bool is_gerund(std::string_view w) {
    return w.size() > 5 && w.ends_with("ing");
}

std::string after_last_marker(std::string_view text, std::string_view marker) {
    auto pos = text.rfind(marker);
    if (pos == std::string_view::npos) return {};
    auto rest = text.substr(pos + marker.size());
    auto eol = rest.find('\n');
    return trim(rest.substr(0, eol));
}

} // namespace

MockProvider MockProvider::from_endpoint(const ProviderConfig& cfg) {
    std::string_view rest = cfg.endpoint;
    rest.remove_prefix(std::string_view("mock://").size());
    Options options;
    options.embedding_dimension = cfg.mock_embedding_dimension;
    auto query = rest.find('?');
    std::string seed_text(rest.substr(0, query));
    if (!seed_text.empty()) {
        char* end = nullptr;
        options.seed = std::strtoull(seed_text.c_str(), &end, 10);
        if (*end != '\0') throw Error(ErrorCode::InvalidArgument, "mock endpoint seed is not a number: " + seed_text);
    }
    if (query != std::string_view::npos) {
        std::string_view params = rest.substr(query + 1);
        if (params == "judge=coin") options.judge_mode = JudgeMode::coin;
        else if (params == "judge=consistent") options.judge_mode = JudgeMode::consistent;
        else throw Error(ErrorCode::InvalidArgument, "unknown mock endpoint option: " + std::string(params));
    }
    if (options.embedding_dimension == 0) throw Error(ErrorCode::InvalidArgument, "mock embedding dimension is 0");
    return MockProvider(options);
}

std::string MockProvider::complete(const ChatRequest& request) {
    const std::string& text = request.text;
    if (!request.images.empty() && text.find("WINNER:") != std::string::npos) return judge(request);

    static const std::regex detail_count(R"((\d+) extremely specific details)");
    std::smatch m;
    if (std::regex_search(text, m, detail_count) && text.find("Concept:") != std::string::npos) {
        std::size_t n = std::stoul(m[1].str());
        return enhance(after_last_marker(text, "Concept:"), n);
    }
    if (text.find("\"main\"") != std::string::npos && text.find("Prompt:") != std::string::npos) {
        return decompose(after_last_marker(text, "Prompt:"));
    }
    return "mock reply " + hex64(Fnv1a().add(options_.seed).add(std::string_view(text)).digest());
}

std::vector<std::vector<double>> MockProvider::embed(std::span<const std::string> texts) {
    std::vector<std::vector<double>> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back(embed_one(t));
    return out;
}

std::vector<double> MockProvider::embed_one(std::string_view text) const {
    std::vector<double> v(options_.embedding_dimension, 0.0);
    for (auto& raw : split_whitespace(to_lower(text))) {
        std::string word = strip_punct(raw);
        if (word.empty() || kEmbeddingStopwords.contains(word)) continue;
        std::uint64_t h = Fnv1a().add(options_.seed).add(std::string_view(word)).digest();
        std::size_t bucket = h % v.size();
        double sign = ((h >> 32) & 1U) ? 1.0 : -1.0;
        v[bucket] += sign;
        // A second, weaker bucket reduces collision damage at small dimensions.
        std::size_t bucket2 = (h >> 40) % v.size();
        v[bucket2] += 0.5 * (((h >> 33) & 1U) ? 1.0 : -1.0);
    }
    double norm = 0;
    for (double x : v) norm += x * x;
    if (norm > 0) {
        norm = std::sqrt(norm);
        for (double& x : v) x /= norm;
    }
    return v;
}

std::string MockProvider::decompose(std::string_view prompt) const {
    std::vector<std::string> words;
    for (auto& raw : split_whitespace(to_lower(prompt))) {
        std::string w = strip_punct(raw);
        if (!w.empty()) words.push_back(w);
    }

    std::vector<std::string> styles;
    std::vector<std::vector<std::string>> phrases(1);
    for (std::size_t i = 0; i < words.size(); ++i) {
        const std::string& w = words[i];
        if (w == "style" && !phrases.back().empty()) {
            // "<x> style" is an image-wide style, not a subject.
            styles.push_back(phrases.back().back() + " style");
            phrases.back().pop_back();
            continue;
        }
        if (kBreakWords.contains(w) || is_gerund(w)) {
            if (!phrases.back().empty()) phrases.emplace_back();
            continue;
        }
        if (kDeterminers.contains(w)) continue;
        phrases.back().push_back(w);
    }

    std::vector<std::string> names;
    for (const auto& p : phrases) {
        if (p.empty()) continue;
        std::string name = join(p, " ");
        bool dup = std::any_of(names.begin(), names.end(), [&](const std::string& n) { return n == name; });
        if (!dup) names.push_back(name);
    }

    nlohmann::ordered_json j;
    auto concept_json = [](const std::string& name) {
        nlohmann::ordered_json c;
        c["name"] = name;
        c["styles"] = nlohmann::ordered_json::array();
        c["details"] = nlohmann::ordered_json::array();
        return c;
    };
    j["main"] = names.empty() ? nlohmann::ordered_json(nullptr) : concept_json(names.front());
    j["support"] = nlohmann::ordered_json::array();
    for (std::size_t i = 1; i < names.size(); ++i) j["support"].push_back(concept_json(names[i]));
    j["image"] = {{"styles", styles}, {"details", nlohmann::ordered_json::array()}};
    return j.dump();
}

std::string MockProvider::enhance(std::string_view concept_text, std::size_t n) const {
    DeterministicRng rng(Fnv1a().add(options_.seed).add(to_lower(trim(concept_text))).digest());
    std::vector<std::string> out;
    std::size_t guard = 0;
    while (out.size() < n && guard++ < n * 20 + 20) {
        std::string fragment = std::string(kAdjectives[rng.below(kAdjectives.size())]) + " " +
                               kMaterials[rng.below(kMaterials.size())] + " " + kParts[rng.below(kParts.size())];
        if (std::find(out.begin(), out.end(), fragment) == out.end()) out.push_back(std::move(fragment));
    }
    return join(out, ", ");
}

std::string MockProvider::judge(const ChatRequest& request) const {
    std::string criterion = after_last_marker(request.text, "criterion:");
    if (!criterion.empty() && criterion.back() == '.') criterion.pop_back();

    Winner winner = Winner::A;
    if (options_.judge_mode == JudgeMode::coin) {
        Fnv1a h;
        h.add(options_.seed).add(std::string_view(request.text));
        for (const auto& img : request.images) h.add(std::string_view(img.label)).add(std::span(img.bytes));
        winner = (h.digest() >> 17) & 1U ? Winner::B : Winner::A;
    } else {
        auto score = [&](std::string_view label) {
            Fnv1a h;
            h.add(options_.seed).add(std::string_view(criterion));
            for (const auto& img : request.images) {
                if (img.label == label) h.add(std::span(img.bytes));
            }
            return h.digest();
        };
        winner = score("B") > score("A") ? Winner::B : Winner::A;
    }
    return "Compared both sets for " + criterion + ".\nWINNER: " + std::string(to_string(winner));
}

} // namespace manta
