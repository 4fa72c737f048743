#include "manta/pipeline.hpp"

#include "engine_fixture.hpp"
#include "test_support.hpp"

#include <fstream>
#include <thread>

using namespace manta;
using testing::fixture;
using testing::fixture_config;
using testing::fixture_engine;
using testing::kSamplePrompt;
using testing::seeded;
using testing::TempDir;

namespace {

std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

} // namespace

TEST_SUITE("pipeline") {

TEST_CASE("config loading resolves paths and validates") {
    auto cfg = EngineConfig::load(fixture("manta.json"));
    CHECK(cfg.llm.endpoint == "mock://7");
    REQUIRE(cfg.judge);
    CHECK(cfg.judge->endpoint == "mock://11?judge=consistent");
    CHECK(cfg.token_budget == 20000u);
    REQUIRE(cfg.guardrails_file);
    CHECK(cfg.guardrails_file->is_absolute());
    CHECK(cfg.backend.mode == BackendMode::stub);
    CHECK(cfg.collections_dir == fixture("collections"));

    CHECK_ERROR_CODE(EngineConfig::from_json(nlohmann::json::array()), ErrorCode::SchemaError);
    CHECK_ERROR_CODE(EngineConfig::from_json({{"llm", {{"endpoint", "mock://1"}}}, {"backend", {{"mode", "gpu"}}}}),
                     ErrorCode::SchemaError);
    auto bad = cfg;
    bad.details = 0;
    CHECK_ERROR_CODE(bad.validate(), ErrorCode::InvalidArgument);
    CHECK_ERROR_CODE(EngineConfig::load("/nonexistent/manta.json"), ErrorCode::UnreadableFile);

    auto round = EngineConfig::from_json(to_json(cfg));
    CHECK(to_json(round) == to_json(cfg));
}

TEST_CASE("stage names") {
    for (Stage s : {Stage::decompose, Stage::enhance, Stage::queries, Stage::select_checkpoint, Stage::query_loras,
                    Stage::compose, Stage::refine_passthrough, Stage::txt2img, Stage::img2img}) {
        CHECK(parse_stage(to_string(s)) == s);
    }
    CHECK_ERROR_CODE(parse_stage("warp"), ErrorCode::SchemaError);
}

TEST_CASE("sample prompt runs every stage") {
    TempDir dir;
    auto engine = fixture_engine(dir.path());
    auto rec = engine->run(kSamplePrompt, seeded(42));
    REQUIRE_MESSAGE(rec.ok(), rec.failure->message);
    CHECK(rec.stages.size() == 8);
    CHECK(rec.stages.back() == Stage::txt2img);
    REQUIRE(rec.concept_map);
    CHECK(rec.concept_map->main().name() == "techno samurai warrior");
    REQUIRE(rec.concept_map->support().size() == 1);
    CHECK(rec.concept_map->support()[0].name() == "cyberpunk dog");
    REQUIRE(rec.enhanced_concept_map);
    CHECK(rec.enhanced_concept_map->main().details().size() > rec.concept_map->main().details().size());
    CHECK(rec.positive_queries.size() == 2);
    REQUIRE(rec.checkpoint);
    CHECK_FALSE(rec.checkpoint->checkpoint.flags.count("blacklisted"));
    REQUIRE(rec.adapters);
    CHECK(rec.adapters->adapters.size() <= 3);
    REQUIRE(rec.workflow);
    CHECK(rec.workflow->seed == 42);
    CHECK(rec.workflow->positive_prompt.starts_with("techno samurai warrior"));
    for (const auto& a : rec.adapters->adapters) {
        CHECK(rec.workflow->positive_prompt.find("<lora:" + a.record.id + ":") != std::string::npos);
        CHECK(a.record.id != "lora-banned-style");
        CHECK(a.record.id != "lora-nsfw-pinup");
    }
    CHECK(rec.images.size() == 3);
    CHECK(rec.tokens.total() < 8000);
    CHECK(rec.tokens.budget == 20000u);
    CHECK(engine->store().contains(rec.request_id));
}

TEST_CASE("ledger is conserved across stages") {
    TempDir dir;
    auto engine = fixture_engine(dir.path());
    auto rec = engine->run(kSamplePrompt, seeded(3));
    REQUIRE(rec.ok());
    std::uint64_t sum = 0;
    for (const auto& [stage, tokens] : rec.stage_tokens) sum += tokens;
    CHECK(sum == rec.tokens.total());
    CHECK(rec.stage_tokens.at("decompose") > 0);
    CHECK(rec.stage_tokens.at("enhance") > 0);
    CHECK(rec.stage_tokens.at("queries") > 0);
    CHECK(rec.stage_tokens.at("txt2img") == 0);
}

TEST_CASE("runs are deterministic across engines and stores") {
    TempDir a, b;
    auto ea = fixture_engine(a.path());
    auto eb = fixture_engine(b.path());
    auto ra = ea->run(kSamplePrompt, seeded(42));
    auto rb = eb->run(kSamplePrompt, seeded(42));
    CHECK(ra.request_id == rb.request_id);
    CHECK(to_json(ra).dump() == to_json(rb).dump());
    CHECK(read_file(a.path() / "runs" / ra.request_id / "record.json") ==
          read_file(b.path() / "runs" / rb.request_id / "record.json"));
    auto other = ea->run(kSamplePrompt, seeded(43));
    CHECK(other.request_id != ra.request_id);
}

TEST_CASE("repeated identical request gets a suffixed id") {
    TempDir dir;
    auto engine = fixture_engine(dir.path());
    auto first = engine->run(kSamplePrompt, seeded(1));
    auto second = engine->run(kSamplePrompt, seeded(1));
    CHECK(second.request_id == first.request_id + "-2");
    CHECK(engine->store().list() == std::vector<std::string>{first.request_id, second.request_id});
}

TEST_CASE("empty prompt fails at decompose") {
    TempDir dir;
    auto engine = fixture_engine(dir.path());
    auto rec = engine->run("   ", seeded(1));
    REQUIRE(rec.failure);
    CHECK(rec.failure->stage == Stage::decompose);
    CHECK(rec.failure->code == ErrorCode::InvalidArgument);
    CHECK(rec.stages.empty());
    CHECK_FALSE(rec.workflow);
    CHECK(rec.tokens.total() == 0);
}

TEST_CASE("budget exhaustion stops at the charging stage") {
    TempDir dir;
    auto cfg = fixture_config(dir.path());
    cfg.token_budget = 150;
    auto engine = fixture_engine(dir.path(), cfg);
    auto rec = engine->run(kSamplePrompt, seeded(1));
    REQUIRE(rec.failure);
    CHECK(rec.failure->code == ErrorCode::BudgetExceeded);
    CHECK(rec.tokens.total() <= 150);
    CHECK_FALSE(rec.images.size());
}

TEST_CASE("missing collections fail at checkpoint selection") {
    TempDir dir;
    Engine engine(fixture_config(dir.path()));
    auto rec = engine.run(kSamplePrompt, seeded(1));
    REQUIRE(rec.failure);
    CHECK(rec.failure->stage == Stage::select_checkpoint);
    CHECK(rec.failure->code == ErrorCode::NoCheckpointAvailable);
}

TEST_CASE("edited concept map skips decomposition") {
    TempDir dir;
    auto engine = fixture_engine(dir.path());
    auto opts = seeded(5);
    opts.concept_map = ConceptMap(Concept("lighthouse", {"red stripes"}), {}, {{"watercolor"}, {}});
    auto rec = engine->run("ignored", opts);
    REQUIRE(rec.ok());
    CHECK(rec.stages.front() == Stage::queries);
    CHECK(rec.workflow->positive_prompt.starts_with("lighthouse, red stripes, watercolor"));
    CHECK(rec.stage_tokens.count("decompose") == 0);
}

TEST_CASE("dry runs are not persisted") {
    TempDir dir;
    auto engine = fixture_engine(dir.path());
    auto opts = seeded(5);
    opts.generate = false;
    auto rec = engine->run(kSamplePrompt, opts);
    REQUIRE(rec.ok());
    CHECK(rec.stages.back() == Stage::refine_passthrough);
    CHECK(rec.images.empty());
    CHECK_FALSE(engine->store().contains(rec.request_id));
}

TEST_CASE("per-request guardrails remove candidates") {
    TempDir dir;
    auto engine = fixture_engine(dir.path());
    auto base = engine->run(kSamplePrompt, seeded(9));
    REQUIRE(base.ok());
    auto opts = seeded(9);
    opts.extra_guardrails.id_blacklist.insert(base.checkpoint->checkpoint.id);
    auto rec = engine->run(kSamplePrompt, opts);
    REQUIRE(rec.ok());
    CHECK(rec.checkpoint->checkpoint.id != base.checkpoint->checkpoint.id);
}

TEST_CASE("refine creates a child run") {
    TempDir dir;
    auto engine = fixture_engine(dir.path());
    auto parent = engine->run(kSamplePrompt, seeded(42));
    REQUIRE(parent.ok());

    auto child = engine->refine(parent.request_id, 0, 0.5);
    REQUIRE(child.ok());
    CHECK(child.parent_id == parent.request_id);
    CHECK(child.workflow == parent.workflow);
    REQUIRE(child.images.size() == parent.images.size());
    // Image 0 shares the parent's seed, so only the other batch members move.
    REQUIRE(child.images.size() > 1);
    CHECK(child.images[1].feature_vector != parent.images[1].feature_vector);
    CHECK(engine->store().contains(child.request_id));
    auto stored = engine->store().load_json(child.request_id);
    CHECK(stored["parent_id"] == parent.request_id);

    auto still = engine->refine(parent.request_id, 1, 0.0);
    for (const auto& img : still.images) CHECK(img.feature_vector == parent.images[1].feature_vector);

    CHECK_ERROR_CODE(engine->refine("run-missing", 0, 0.5), ErrorCode::UnknownRun);
    CHECK_ERROR_CODE(engine->refine(parent.request_id, 7, 0.5), ErrorCode::UnknownImage);
    CHECK_ERROR_CODE(engine->refine(parent.request_id, 0, 1.5), ErrorCode::InvalidArgument);
}

TEST_CASE("store round trip") {
    TempDir dir;
    auto engine = fixture_engine(dir.path());
    auto rec = engine->run(kSamplePrompt, seeded(11));
    auto loaded = engine->store().load(rec.request_id);
    CHECK(loaded.request_id == rec.request_id);
    CHECK(loaded.workflow == rec.workflow);
    CHECK(loaded.concept_map == rec.concept_map);
    REQUIRE(loaded.images.size() == rec.images.size());
    for (std::size_t i = 0; i < rec.images.size(); ++i) {
        CHECK(loaded.images[i].bytes == rec.images[i].bytes);
        CHECK(loaded.images[i].feature_vector == rec.images[i].feature_vector);
        CHECK(engine->store().image(rec.request_id, i) == rec.images[i].bytes);
    }
    CHECK_ERROR_CODE(engine->store().image(rec.request_id, 9), ErrorCode::UnknownImage);
    CHECK_ERROR_CODE(engine->store().load_json("nope"), ErrorCode::UnknownRun);
    CHECK(std::filesystem::exists(dir.path() / "runs" / rec.request_id / "timings.json"));
    auto j = engine->store().load_json(rec.request_id);
    CHECK_FALSE(j.contains("timings"));

    // A fresh engine over the same directories sees the run.
    Engine reopened(fixture_config(dir.path()));
    CHECK(reopened.store().contains(rec.request_id));
    CHECK(reopened.collections().size() == 2);
}

TEST_CASE("concurrent runs each persist") {
    TempDir dir;
    auto engine = fixture_engine(dir.path());
    std::vector<std::thread> threads;
    std::vector<RunRecord> out(4);
    for (int i = 0; i < 4; ++i) {
        threads.emplace_back([&, i] { out[static_cast<std::size_t>(i)] = engine->run(kSamplePrompt, seeded(100 + i)); });
    }
    for (auto& t : threads) t.join();
    CHECK(engine->store().list().size() == 4);
    for (const auto& r : out) CHECK(r.ok());
}

TEST_CASE("ingest report") {
    TempDir dir;
    Engine engine(fixture_config(dir.path()));
    auto r = engine.ingest(fixture("stylus_docs.json"), "checkpoints", DocumentKind::checkpoint);
    CHECK(r.entries == 50);
    CHECK(r.stored == 12);
    CHECK(r.skipped == 38);
    CHECK(r.tokens.embedding_tokens > 0);
    CHECK(std::filesystem::exists(r.snapshot));
    auto meta = engine.ingest(fixture("stylus_docs.json"), "ck-meta", DocumentKind::checkpoint, true);
    CHECK(meta.tokens.embedding_tokens >= 5 * r.tokens.embedding_tokens);
    CHECK_ERROR_CODE(engine.ingest(fixture("stylus_docs.json"), "../x", DocumentKind::checkpoint), ErrorCode::InvalidArgument);
    CHECK(to_json(r)["stored"] == 12);
}

TEST_CASE("run options from json") {
    auto o = run_options_from_json({{"knobs", {{"cfg_scale", 4.5}, {"seed", 9}, {"batch_size", 2}, {"details", 3}}},
                                    {"exclude_ids", {"x"}},
                                    {"filter_words", {"pinup"}}});
    CHECK(o.knobs.cfg_scale == 4.5);
    CHECK(o.knobs.seed == 9);
    CHECK(o.knobs.batch_size == 2);
    CHECK(o.details == 3u);
    CHECK(o.extra_guardrails.id_blacklist.count("x") == 1);
    CHECK(o.extra_guardrails.word_filters.count("pinup") == 1);
    CHECK_ERROR_CODE(run_options_from_json({{"knobs", {{"width", 100}}}}), ErrorCode::InvalidArgument);
    CHECK_ERROR_CODE(run_options_from_json({{"knobs", {{"seed", "x"}}}}), ErrorCode::SchemaError);
    CHECK_ERROR_CODE(run_options_from_json(nlohmann::json::array()), ErrorCode::SchemaError);
}

TEST_CASE("evaluation against each baseline") {
    TempDir dir;
    auto engine = fixture_engine(dir.path());
    EvalRequest req;
    req.prompts = {kSamplePrompt, "a lighthouse on a cliff at dusk", "an old wizard reading by candlelight"};
    req.seed = 4;
    for (auto against : {EvalAgainst::base, EvalAgainst::no_enhance, EvalAgainst::random_adapters}) {
        req.against = against;
        auto report = engine->evaluate(req);
        CHECK(report.run.failed() == 0);
        CHECK(report.run.system_b == std::string(to_string(against)));
        for (const auto& s : report.run.summary(report.criteria)) {
            CHECK(s.judged() == 3);
            CHECK(s.win_rate() + s.loss_rate() + s.inconsistent_rate() == doctest::Approx(1.0));
        }
        auto again = engine->evaluate(req);
        CHECK(to_json(again).dump() == to_json(report).dump());
    }
    CHECK(engine->store().list().empty());
    CHECK(parse_eval_against("no-enhance") == EvalAgainst::no_enhance);
    CHECK_ERROR_CODE(parse_eval_against("other"), ErrorCode::InvalidArgument);
    CHECK_ERROR_CODE(engine->evaluate(EvalRequest{}), ErrorCode::InvalidArgument);
}

}
