#pragma once

#include "manta/backend.hpp"
#include "manta/concept.hpp"
#include "manta/error.hpp"
#include "manta/evaluation.hpp"
#include "manta/ingest.hpp"
#include "manta/llm.hpp"
#include "manta/retrieval.hpp"
#include "manta/vector_index.hpp"
#include "manta/workflow.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

namespace manta {

/// Engine configuration. Loaded from JSON; relative paths resolve against the file's directory.
struct EngineConfig {
    ProviderConfig llm;
    std::optional<ProviderConfig> judge;  // defaults to llm
    std::optional<std::uint64_t> token_budget;
    RetrievalPolicy policy;
    std::optional<std::filesystem::path> guardrails_file;
    BackendConfig backend;
    std::filesystem::path collections_dir = "collections";
    std::string checkpoint_collection = "checkpoints";
    std::string adapter_collection = "adapters";
    std::filesystem::path store_dir = "runs";
    std::optional<std::filesystem::path> templates_dir;
    std::size_t details = 8;
    bool enhance_support = true;
    bool match_adapter_base_model = false;
    std::size_t eval_parallelism = 1;
    std::size_t queue_capacity = 4;   // concurrent generations the service admits
    std::size_t async_threshold = 1;  // in-flight generations beyond which the service answers 202

    void validate() const;

    static EngineConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
    static EngineConfig load(const std::filesystem::path& path);
    /// Mock providers, stub backend, everything under `root`.
    static EngineConfig desk_defaults(const std::filesystem::path& root);
};

nlohmann::ordered_json to_json(const EngineConfig& cfg);

enum class Stage {
    decompose,
    enhance,
    queries,
    select_checkpoint,
    query_loras,
    compose,
    refine_passthrough,
    txt2img,
    img2img,
};

std::string_view to_string(Stage s) noexcept;
Stage parse_stage(std::string_view text);

enum class AdapterStrategy { retrieve, random, none };

struct RunOptions {
    GenerationKnobs knobs;
    std::optional<std::size_t> details;        // overrides config
    std::optional<ConceptMap> concept_map;     // edited map: skips decompose and enhance
    Guardrails extra_guardrails;               // per-request exclusions
    bool decompose = true;                     // false: the prompt itself is the only concept
    bool enhance = true;
    AdapterStrategy adapters = AdapterStrategy::retrieve;
    std::optional<std::string> checkpoint_override;
    bool generate = true;                      // false stops after refine_passthrough
    bool persist = true;
};

/// Request-body shape shared by the service and the C API:
/// {"knobs": {cfg_scale, seed, width, height, batch_size, details}, "exclude_ids": [...],
///  "filter_words": [...], "concept_map": {...}}. Throws SchemaError / InvalidArgument.
RunOptions run_options_from_json(const nlohmann::json& body);

struct StageFailure {
    Stage stage;
    ErrorCode code;
    std::string message;
};

struct StoredImage {
    std::string file;
    std::string mime;
    std::int64_t seed_used = 0;
    std::optional<std::vector<double>> features;
};

struct RunRecord {
    std::string request_id;
    std::optional<std::string> parent_id;
    std::string input_prompt;
    std::vector<Stage> stages;  // completed, in order
    std::optional<StageFailure> failure;
    std::optional<std::string> raw_decomposition;
    std::optional<ConceptMap> concept_map;
    std::optional<ConceptMap> enhanced_concept_map;
    std::vector<std::string> positive_queries;
    std::string negative_query;
    std::optional<CheckpointChoice> checkpoint;
    std::optional<AdapterChoice> adapters;
    std::optional<GenerationWorkflow> workflow;
    std::optional<std::pair<std::size_t, double>> refined_from;  // image index, denoise
    std::vector<GeneratedImage> images;
    TokenCounts tokens;
    std::map<std::string, std::uint64_t> stage_tokens;
    std::map<std::string, double> timings_ms;  // kept out of the record file; wall-clock

    bool ok() const noexcept { return !failure.has_value(); }
    SelectionResult selection() const;
};

/// Deterministic record JSON (no timings).
nlohmann::ordered_json to_json(const RunRecord& r);
nlohmann::ordered_json to_json(const DocumentRecord& d);

/// One directory per run: record.json, image_<i>.<ext>, timings.json. index.txt keeps creation order.
class RunStore {
public:
    explicit RunStore(std::filesystem::path root);

    const std::filesystem::path& root() const noexcept { return root_; }

    /// Persists the record, renaming its id with a "-2", "-3", ... suffix if already taken.
    void save(RunRecord& record);

    /// Throws UnknownRun.
    nlohmann::json load_json(const std::string& id) const;
    RunRecord load(const std::string& id) const;
    bool contains(const std::string& id) const;
    std::vector<std::string> list() const;

    /// Throws UnknownRun / UnknownImage.
    std::vector<std::uint8_t> image(const std::string& id, std::size_t index) const;

private:
    std::filesystem::path dir_of(const std::string& id) const;

    std::filesystem::path root_;
    mutable std::shared_mutex mutex_;
};

struct IngestReport {
    std::string collection;
    DocumentKind kind;
    bool metadata_baseline = false;
    std::size_t entries = 0;
    std::size_t stored = 0;
    std::size_t skipped = 0;
    TokenCounts tokens;
    std::filesystem::path snapshot;
};

nlohmann::ordered_json to_json(const IngestReport& r);

enum class EvalAgainst { base, no_enhance, random_adapters };

EvalAgainst parse_eval_against(std::string_view text);
std::string_view to_string(EvalAgainst a) noexcept;

struct EvalRequest {
    std::vector<std::string> prompts;
    EvalAgainst against = EvalAgainst::base;
    std::vector<Criterion> criteria{Criterion::diversity, Criterion::quality, Criterion::alignment};
    std::int64_t seed = 0;  // per-prompt generation seeds derive from this
};

struct EvalReport {
    EvalRun run;
    std::vector<Criterion> criteria;
    TokenReport tokens;
};

nlohmann::ordered_json to_json(const EvalReport& r);

/// Orchestrates the full generation run. Safe for concurrent run/refine calls.
class Engine {
public:
    explicit Engine(EngineConfig cfg, std::shared_ptr<Provider> llm_provider = nullptr,
                    std::shared_ptr<GenerationBackend> backend = nullptr,
                    std::shared_ptr<Provider> judge_provider = nullptr);

    const EngineConfig& config() const noexcept { return cfg_; }

    /// Never throws for stage errors: the failed stage is recorded and the partial record returned.
    RunRecord run(const std::string& prompt, const RunOptions& options = {});

    /// img2img on a stored image. Throws UnknownRun / UnknownImage.
    RunRecord refine(const std::string& run_id, std::size_t image_index, double denoise);

    IngestReport ingest(const std::filesystem::path& input, const std::string& collection, DocumentKind kind,
                        bool metadata_baseline = false);

    EvalReport evaluate(const EvalRequest& request);

    /// Reloads snapshots from collections_dir.
    void reload_collections();
    std::vector<std::pair<std::string, Collection>> collections() const;

    RunStore& store() noexcept { return store_; }
    LlmGateway& gateway() noexcept { return *llm_; }

private:
    void run_stages(RunRecord& rec, const RunOptions& options, TokenLedger& ledger, std::int64_t seed);
    std::shared_ptr<const Collection> collection(const std::string& name) const;
    Guardrails guardrails() const;

    EngineConfig cfg_;
    std::unique_ptr<LlmGateway> llm_;
    std::unique_ptr<LlmGateway> judge_;
    std::shared_ptr<GenerationBackend> backend_;
    std::string decompose_template_;
    std::string detail_template_;
    RunStore store_;
    mutable std::shared_mutex collections_mutex_;
    std::map<std::string, std::shared_ptr<const Collection>> collections_;
};

} // namespace manta
