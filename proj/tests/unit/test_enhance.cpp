#include "manta/enhance.hpp"
#include "manta/templates.hpp"

#include "test_support.hpp"

#include <random>

using namespace manta;
using testing::ScriptedProvider;

namespace {

ProviderConfig scripted_cfg() {
    ProviderConfig c;
    c.endpoint = "mock://0";
    c.model_id = "scripted";
    c.max_retries = 0;
    return c;
}

} // namespace

TEST_SUITE("enhance") {

TEST_CASE("render substitutes n and the flattened concept") {
    auto tpl = std::string(default_template(TemplateId::detail_enhancement));
    auto text = render_detail_prompt(tpl, {Concept("alien"), 5});
    CHECK(text.find("5 extremely specific details") != std::string::npos);
    CHECK(text.find("Concept: alien") != std::string::npos);
    CHECK(text.find("{n}") == std::string::npos);
    CHECK(text.find("{concept}") == std::string::npos);
    CHECK(render_detail_prompt(tpl, {Concept("alien"), 1}).find("1 extremely specific details") != std::string::npos);
    CHECK(text == render_detail_prompt(tpl, {Concept("alien"), 5}));

    Concept rich("robot", {"chrome skin"}, {"noir"});
    CHECK(render_detail_prompt(tpl, {rich, 3}).find("Concept: robot chrome skin noir") != std::string::npos);
}

TEST_CASE("render rejects n = 0") {
    CHECK_ERROR_CODE(render_detail_prompt("{n}", {Concept("x"), 0}), ErrorCode::InvalidArgument);
}

TEST_CASE("parses a python-style list reply") {
    auto frags = parse_detail_fragments(R"([
    'sleek metallic armor', 'glowing neon blue circuits', 'retractable energy katana', 'cybernetic enhancements',
    'black visor helmet', 'steel-toed combat boots', 'metallic plate gauntlets',
    'reinforced synthetic leather waist armor',
    ...,
])");
    std::vector<std::string> expected{"sleek metallic armor",      "glowing neon blue circuits",
                                      "retractable energy katana", "cybernetic enhancements",
                                      "black visor helmet",        "steel-toed combat boots",
                                      "metallic plate gauntlets",  "reinforced synthetic leather waist armor"};
    CHECK(frags == expected);
}

TEST_CASE("parse strips bullets, numbering and quotes; drops prose") {
    auto frags = parse_detail_fragments("- \"red scarf\"\n2. brass buttons\n* 'tall boots'\n\n" + std::string(90, 'x'));
    CHECK(frags == std::vector<std::string>{"red scarf", "brass buttons", "tall boots"});
    CHECK(parse_detail_fragments(std::string(80, 'y')).size() == 1);
    CHECK(parse_detail_fragments(" , ,\n...").empty());
}

TEST_CASE("truncates to n in emitted order") {
    auto provider = std::make_shared<ScriptedProvider>();
    provider->reply("a, b, c");
    LlmGateway g(scripted_cfg(), provider);
    DetailEnhancer enhancer(g);
    TokenLedger ledger;
    auto out = enhancer.enhance({Concept("thing"), 2}, ledger);
    CHECK(out.details() == std::vector<std::string>{"a", "b"});
    REQUIRE(provider->requests.size() == 1);
    CHECK(provider->requests[0].text.find("2 extremely specific details") != std::string::npos);
}

TEST_CASE("existing details only leaves the concept unchanged") {
    auto provider = std::make_shared<ScriptedProvider>();
    provider->reply("Red Scarf, brass buttons");
    LlmGateway g(scripted_cfg(), provider);
    DetailEnhancer enhancer(g);
    TokenLedger ledger;
    Concept c("knight", {"red scarf", "brass buttons"}, {"oil painting"});
    CHECK(enhancer.enhance({c, 4}, ledger) == c);
}

TEST_CASE("empty replies raise EmptyEnhancement") {
    auto provider = std::make_shared<ScriptedProvider>();
    provider->reply("  ...  ");
    provider->reply(std::string(120, 'z'));
    LlmGateway g(scripted_cfg(), provider);
    DetailEnhancer enhancer(g);
    TokenLedger ledger;
    CHECK_ERROR_CODE(enhancer.enhance({Concept("x"), 3}, ledger), ErrorCode::EmptyEnhancement);
    CHECK_ERROR_CODE(enhancer.enhance({Concept("x"), 3}, ledger), ErrorCode::EmptyEnhancement);
}

TEST_CASE("budget exhaustion propagates") {
    auto provider = std::make_shared<ScriptedProvider>();
    provider->reply("a");
    LlmGateway g(scripted_cfg(), provider);
    DetailEnhancer enhancer(g);
    TokenLedger ledger(10);
    CHECK_ERROR_CODE(enhancer.enhance({Concept("x"), 3}, ledger), ErrorCode::BudgetExceeded);
    CHECK(provider->requests.empty());
}

TEST_CASE("validator hook drops fragments") {
    auto provider = std::make_shared<ScriptedProvider>();
    provider->reply("running fast, blue cape, jumping high");
    LlmGateway g(scripted_cfg(), provider);
    DetailEnhancer enhancer(g, {}, [](std::string_view f) { return f.find("ing") == std::string_view::npos; });
    TokenLedger ledger;
    CHECK(enhancer.enhance({Concept("hero"), 3}, ledger).details() == std::vector<std::string>{"blue cape"});
}

TEST_CASE("mock enhancement of the example concept") {
    ProviderConfig cfg;
    cfg.endpoint = "mock://7";
    cfg.model_id = "mock";
    LlmGateway g(cfg);
    DetailEnhancer enhancer(g, std::string(default_template(TemplateId::detail_enhancement)));
    TokenLedger ledger;
    auto out = enhancer.enhance({Concept("techno samurai warrior"), 8}, ledger);
    CHECK(out.name() == "techno samurai warrior");
    CHECK(out.details().size() >= 1);
    CHECK(out.details().size() <= 8);
    for (const auto& d : out.details()) CHECK(d.size() <= kMaxFragmentLength);
}

TEST_CASE("property: growth bound and prefix preservation") {
    std::mt19937_64 rng(77);
    const std::vector<std::string> pool{"alpha", "beta", "gamma", "delta", "Alpha", "eps", "zeta", "eta"};
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<std::string> existing;
        for (std::size_t i = 0; i < rng() % 4; ++i) existing.push_back(pool[rng() % pool.size()]);
        std::string reply;
        for (std::size_t i = 0; i < 1 + rng() % 6; ++i) reply += pool[rng() % pool.size()] + ", ";
        auto provider = std::make_shared<ScriptedProvider>();
        provider->reply(reply);
        LlmGateway g(scripted_cfg(), provider);
        DetailEnhancer enhancer(g);
        TokenLedger ledger;
        Concept c("subject", existing);
        std::size_t n = 1 + rng() % 5;
        auto out = enhancer.enhance({c, n}, ledger);
        REQUIRE(out.details().size() <= c.details().size() + n);
        for (std::size_t i = 0; i < c.details().size(); ++i) CHECK(out.details()[i] == c.details()[i]);
    }
}

}
