#include "manta/pipeline.hpp"

#include "manta/enhance.hpp"
#include "manta/error.hpp"
#include "manta/templates.hpp"
#include "manta/util.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <random>

namespace manta {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

// ---- configuration ----------------------------------------------------------

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
    fs::path path(p);
    return path.is_absolute() || base.empty() ? path : base / path;
}

template <typename T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<T>();
}

ProviderConfig provider_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw Error(ErrorCode::SchemaError, "provider config must be an object");
    ProviderConfig p;
    read_opt(j, "endpoint", p.endpoint);
    read_opt(j, "model_id", p.model_id);
    read_opt(j, "api_key_env", p.api_key_env);
    read_opt(j, "timeout_seconds", p.timeout_seconds);
    read_opt(j, "max_retries", p.max_retries);
    read_opt(j, "retry_backoff_ms", p.retry_backoff_ms);
    read_opt(j, "embedding_dimension", p.mock_embedding_dimension);
    return p;
}

ojson provider_json(const ProviderConfig& p) {
    return {{"endpoint", p.endpoint},
            {"model_id", p.model_id},
            {"api_key_env", p.api_key_env},
            {"timeout_seconds", p.timeout_seconds},
            {"max_retries", p.max_retries},
            {"retry_backoff_ms", p.retry_backoff_ms},
            {"embedding_dimension", p.mock_embedding_dimension}};
}

} // namespace

void EngineConfig::validate() const {
    llm.validate();
    if (judge) judge->validate();
    policy.validate();
    backend.validate();
    if (details == 0) throw Error(ErrorCode::InvalidArgument, "details must be at least 1");
    if (queue_capacity == 0) throw Error(ErrorCode::InvalidArgument, "queue_capacity must be at least 1");
    if (eval_parallelism == 0) throw Error(ErrorCode::InvalidArgument, "eval_parallelism must be at least 1");
}

EngineConfig EngineConfig::from_json(const nlohmann::json& j, const fs::path& base_dir) {
    if (!j.is_object()) throw Error(ErrorCode::SchemaError, "config must be a JSON object");
    EngineConfig c;
    try {
        if (j.contains("llm")) c.llm = provider_from_json(j.at("llm"));
        if (j.contains("judge") && !j.at("judge").is_null()) c.judge = provider_from_json(j.at("judge"));
        if (j.contains("token_budget") && !j.at("token_budget").is_null()) {
            c.token_budget = j.at("token_budget").get<std::uint64_t>();
        }
        if (j.contains("policy")) {
            const auto& p = j.at("policy");
            read_opt(p, "omega_c", c.policy.omega_c);
            read_opt(p, "k_adapters", c.policy.k_adapters);
            read_opt(p, "init_thresh", c.policy.init_thresh);
            read_opt(p, "decay", c.policy.decay);
            read_opt(p, "max_decay_iters", c.policy.max_decay_iters);
            read_opt(p, "negative_query", c.policy.negative_query);
        }
        if (j.contains("guardrails") && !j.at("guardrails").is_null()) {
            c.guardrails_file = resolve(base_dir, j.at("guardrails").get<std::string>());
        }
        if (j.contains("backend")) {
            const auto& b = j.at("backend");
            std::string mode = "stub";
            read_opt(b, "mode", mode);
            if (mode == "stub") c.backend.mode = BackendMode::stub;
            else if (mode == "http") c.backend.mode = BackendMode::http;
            else throw Error(ErrorCode::SchemaError, "backend.mode must be \"stub\" or \"http\"");
            read_opt(b, "base_url", c.backend.base_url);
            read_opt(b, "model_switch_timeout", c.backend.model_switch_timeout);
            read_opt(b, "request_timeout", c.backend.request_timeout);
            read_opt(b, "steps", c.backend.steps);
            read_opt(b, "stub_feature_dimension", c.backend.stub_feature_dimension);
        }
        if (j.contains("collections_dir")) c.collections_dir = resolve(base_dir, j.at("collections_dir").get<std::string>());
        else c.collections_dir = resolve(base_dir, c.collections_dir.string());
        read_opt(j, "checkpoint_collection", c.checkpoint_collection);
        read_opt(j, "adapter_collection", c.adapter_collection);
        if (j.contains("store_dir")) c.store_dir = resolve(base_dir, j.at("store_dir").get<std::string>());
        else c.store_dir = resolve(base_dir, c.store_dir.string());
        if (j.contains("templates_dir") && !j.at("templates_dir").is_null()) {
            c.templates_dir = resolve(base_dir, j.at("templates_dir").get<std::string>());
        }
        read_opt(j, "details", c.details);
        read_opt(j, "enhance_support", c.enhance_support);
        read_opt(j, "match_adapter_base_model", c.match_adapter_base_model);
        read_opt(j, "eval_parallelism", c.eval_parallelism);
        read_opt(j, "queue_capacity", c.queue_capacity);
        read_opt(j, "async_threshold", c.async_threshold);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::SchemaError, std::string("config: ") + e.what());
    }
    c.validate();
    return c;
}

EngineConfig EngineConfig::load(const fs::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::SchemaError, path.string() + ": " + e.what());
    }
    return from_json(j, path.parent_path());
}

EngineConfig EngineConfig::desk_defaults(const fs::path& root) {
    EngineConfig c;
    c.llm.endpoint = "mock://0";
    c.llm.model_id = "mock";
    c.collections_dir = root / "collections";
    c.store_dir = root / "runs";
    return c;
}

ojson to_json(const EngineConfig& c) {
    ojson j;
    j["llm"] = provider_json(c.llm);
    j["judge"] = c.judge ? provider_json(*c.judge) : ojson(nullptr);
    j["token_budget"] = c.token_budget ? ojson(*c.token_budget) : ojson(nullptr);
    j["policy"] = {{"omega_c", c.policy.omega_c},
                   {"k_adapters", c.policy.k_adapters},
                   {"init_thresh", c.policy.init_thresh},
                   {"decay", c.policy.decay},
                   {"max_decay_iters", c.policy.max_decay_iters},
                   {"negative_query", c.policy.negative_query}};
    j["guardrails"] = c.guardrails_file ? ojson(c.guardrails_file->string()) : ojson(nullptr);
    j["backend"] = {{"mode", c.backend.mode == BackendMode::stub ? "stub" : "http"},
                    {"base_url", c.backend.base_url},
                    {"model_switch_timeout", c.backend.model_switch_timeout},
                    {"request_timeout", c.backend.request_timeout},
                    {"steps", c.backend.steps},
                    {"stub_feature_dimension", c.backend.stub_feature_dimension}};
    j["collections_dir"] = c.collections_dir.string();
    j["checkpoint_collection"] = c.checkpoint_collection;
    j["adapter_collection"] = c.adapter_collection;
    j["store_dir"] = c.store_dir.string();
    j["templates_dir"] = c.templates_dir ? ojson(c.templates_dir->string()) : ojson(nullptr);
    j["details"] = c.details;
    j["enhance_support"] = c.enhance_support;
    j["match_adapter_base_model"] = c.match_adapter_base_model;
    j["eval_parallelism"] = c.eval_parallelism;
    j["queue_capacity"] = c.queue_capacity;
    j["async_threshold"] = c.async_threshold;
    return j;
}

// ---- records ----------------------------------------------------------------

std::string_view to_string(Stage s) noexcept {
    switch (s) {
    case Stage::decompose: return "decompose";
    case Stage::enhance: return "enhance";
    case Stage::queries: return "queries";
    case Stage::select_checkpoint: return "select_checkpoint";
    case Stage::query_loras: return "query_loras";
    case Stage::compose: return "compose";
    case Stage::refine_passthrough: return "refine_passthrough";
    case Stage::txt2img: return "txt2img";
    case Stage::img2img: return "img2img";
    }
    return "unknown";
}

Stage parse_stage(std::string_view text) {
    for (Stage s : {Stage::decompose, Stage::enhance, Stage::queries, Stage::select_checkpoint, Stage::query_loras,
                    Stage::compose, Stage::refine_passthrough, Stage::txt2img, Stage::img2img}) {
        if (to_string(s) == text) return s;
    }
    throw Error(ErrorCode::SchemaError, "unknown stage '" + std::string(text) + "'");
}

SelectionResult RunRecord::selection() const {
    SelectionResult s;
    if (checkpoint) {
        s.checkpoint = checkpoint->checkpoint;
        s.trace = checkpoint->trace;
    }
    if (adapters) {
        s.adapters = adapters->adapters;
        s.trace.insert(s.trace.end(), adapters->trace.begin(), adapters->trace.end());
    }
    return s;
}

ojson to_json(const DocumentRecord& d) {
    ojson j = {{"id", d.id},
               {"kind", to_string(d.kind)},
               {"base_model", d.base_model},
               {"display_name", d.display_name},
               {"exemplar_prompt", d.exemplar_prompt},
               {"flags", d.flags}};
    return j;
}

namespace {

ojson hit_json(const ScoredHit& h) {
    return {{"id", h.record.id},
            {"display_name", h.record.display_name},
            {"context", h.context},
            {"margin_sum", h.margin_sum},
            {"positive_similarity", h.positive_similarity}};
}

ojson hits_json(const std::vector<ScoredHit>& hits) {
    ojson a = ojson::array();
    for (const auto& h : hits) a.push_back(hit_json(h));
    return a;
}

std::string image_extension(const std::string& mime) {
    if (mime == "image/png") return ".png";
    if (mime == "image/jpeg") return ".jpg";
    if (mime == "image/x-portable-pixmap") return ".ppm";
    return ".bin";
}

std::vector<StoredImage> stored_images(const RunRecord& r) {
    std::vector<StoredImage> out;
    for (std::size_t i = 0; i < r.images.size(); ++i) {
        const auto& img = r.images[i];
        StoredImage s;
        s.mime = sniff_mime(img.bytes);
        s.file = "image_" + std::to_string(i) + image_extension(s.mime);
        s.seed_used = img.seed_used;
        s.features = img.feature_vector;
        out.push_back(std::move(s));
    }
    return out;
}

} // namespace

ojson to_json(const RunRecord& r) {
    ojson j;
    j["request_id"] = r.request_id;
    j["parent_id"] = r.parent_id ? ojson(*r.parent_id) : ojson(nullptr);
    j["input_prompt"] = r.input_prompt;
    j["status"] = r.ok() ? "ok" : "failed";
    ojson stages = ojson::array();
    for (Stage s : r.stages) stages.push_back(to_string(s));
    j["stages"] = std::move(stages);
    if (r.failure) {
        j["failure"] = {{"stage", to_string(r.failure->stage)},
                        {"code", to_string(r.failure->code)},
                        {"message", r.failure->message}};
    } else {
        j["failure"] = nullptr;
    }
    j["raw_decomposition"] = r.raw_decomposition ? ojson(*r.raw_decomposition) : ojson(nullptr);
    j["concept_map"] = r.concept_map ? to_json(*r.concept_map) : ojson(nullptr);
    j["enhanced_concept_map"] = r.enhanced_concept_map ? to_json(*r.enhanced_concept_map) : ojson(nullptr);
    j["queries"] = {{"positives", r.positive_queries}, {"negative", r.negative_query}};

    ojson sel;
    if (r.checkpoint) {
        sel["checkpoint"] = to_json(r.checkpoint->checkpoint);
        sel["checkpoint_score"] = {{"context", r.checkpoint->hit.context},
                                   {"margin_sum", r.checkpoint->hit.margin_sum},
                                   {"threshold_met", r.checkpoint->threshold_met}};
        sel["checkpoint_candidates"] = hits_json(r.checkpoint->candidates);
    } else {
        sel["checkpoint"] = nullptr;
    }
    if (r.adapters) {
        ojson adapters = ojson::array();
        for (const auto& a : r.adapters->adapters) {
            adapters.push_back({{"id", a.record.id},
                                {"display_name", a.record.display_name},
                                {"weight", a.weight},
                                {"context", a.context},
                                {"margin_sum", a.margin_sum}});
        }
        sel["adapters"] = std::move(adapters);
        sel["adapter_candidates"] = hits_json(r.adapters->candidates);
        sel["decay_iterations"] = r.adapters->decay_iterations;
        sel["final_threshold"] = r.adapters->final_threshold;
    } else {
        sel["adapters"] = nullptr;
    }
    sel["trace"] = r.selection().trace;
    j["selection"] = std::move(sel);

    j["workflow"] = r.workflow ? to_json(*r.workflow) : ojson(nullptr);
    if (r.refined_from) {
        j["refine"] = {{"image_index", r.refined_from->first}, {"denoise", r.refined_from->second}};
    } else {
        j["refine"] = nullptr;
    }
    ojson images = ojson::array();
    for (const auto& s : stored_images(r)) {
        images.push_back({{"file", s.file},
                          {"mime", s.mime},
                          {"seed_used", s.seed_used},
                          {"features", s.features ? ojson(*s.features) : ojson(nullptr)}});
    }
    j["images"] = std::move(images);
    j["tokens"] = {{"completion_tokens", r.tokens.completion_tokens},
                   {"embedding_tokens", r.tokens.embedding_tokens},
                   {"total", r.tokens.total()},
                   {"budget", r.tokens.budget ? ojson(*r.tokens.budget) : ojson(nullptr)},
                   {"by_stage", r.stage_tokens}};
    return j;
}

namespace {

template <typename T>
T opt_field(const nlohmann::json& j, const char* key) {
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw Error(ErrorCode::SchemaError, std::string("field '") + key + "' has the wrong type");
    }
}

} // namespace

RunOptions run_options_from_json(const nlohmann::json& body) {
    if (!body.is_object()) throw Error(ErrorCode::SchemaError, "run options must be a JSON object");
    RunOptions o;
    if (body.contains("knobs") && !body.at("knobs").is_null()) {
        const auto& k = body.at("knobs");
        if (!k.is_object()) throw Error(ErrorCode::SchemaError, "knobs must be an object");
        if (k.contains("cfg_scale")) o.knobs.cfg_scale = opt_field<double>(k, "cfg_scale");
        if (k.contains("seed") && !k.at("seed").is_null()) o.knobs.seed = opt_field<std::int64_t>(k, "seed");
        if (k.contains("width")) o.knobs.width = opt_field<int>(k, "width");
        if (k.contains("height")) o.knobs.height = opt_field<int>(k, "height");
        if (k.contains("batch_size")) o.knobs.batch_size = opt_field<int>(k, "batch_size");
        if (k.contains("details")) {
            auto n = opt_field<std::int64_t>(k, "details");
            if (n < 1) throw Error(ErrorCode::InvalidArgument, "details must be at least 1");
            o.details = static_cast<std::size_t>(n);
        }
    }
    if (body.contains("exclude_ids")) {
        for (const auto& id : opt_field<std::vector<std::string>>(body, "exclude_ids")) o.extra_guardrails.id_blacklist.insert(id);
    }
    if (body.contains("filter_words")) {
        for (const auto& w : opt_field<std::vector<std::string>>(body, "filter_words")) {
            if (!trim(w).empty()) o.extra_guardrails.word_filters.insert(to_lower(trim(w)));
        }
    }
    if (body.contains("concept_map") && !body.at("concept_map").is_null()) {
        o.concept_map = concept_map_from_json(body.at("concept_map"));
    }
    GenerationWorkflow probe;
    probe.cfg_scale = o.knobs.cfg_scale;
    probe.width = o.knobs.width;
    probe.height = o.knobs.height;
    probe.batch_size = o.knobs.batch_size;
    probe.validate();
    return o;
}

// ---- run store --------------------------------------------------------------

RunStore::RunStore(fs::path root) : root_(std::move(root)) {}

fs::path RunStore::dir_of(const std::string& id) const {
    if (id.empty() || id.find_first_of("/\\.") != std::string::npos) {
        throw Error(ErrorCode::UnknownRun, "no run with id '" + id + "'");
    }
    return root_ / id;
}

void RunStore::save(RunRecord& record) {
    std::unique_lock lock(mutex_);
    fs::create_directories(root_);
    std::string base = record.request_id;
    std::string id = base;
    for (int n = 2; fs::exists(root_ / id); ++n) id = base + "-" + std::to_string(n);
    record.request_id = id;

    fs::path tmp = root_ / ("." + id + ".tmp");
    fs::remove_all(tmp);
    fs::create_directories(tmp);
    auto stored = stored_images(record);
    for (std::size_t i = 0; i < record.images.size(); ++i) {
        write_binary_file(tmp / stored[i].file, record.images[i].bytes);
    }
    write_text_file(tmp / "record.json", to_json(record).dump(2) + "\n");
    write_text_file(tmp / "timings.json", ojson(record.timings_ms).dump(2) + "\n");
    fs::rename(tmp, root_ / id);

    std::ofstream index(root_ / "index.txt", std::ios::app);
    index << id << '\n';
    if (!index) throw Error(ErrorCode::Io, "cannot append to run index in " + root_.string());
}

bool RunStore::contains(const std::string& id) const {
    if (id.empty() || id.find_first_of("/\\.") != std::string::npos) return false;
    std::shared_lock lock(mutex_);
    return fs::exists(root_ / id / "record.json");
}

nlohmann::json RunStore::load_json(const std::string& id) const {
    fs::path dir = dir_of(id);
    std::shared_lock lock(mutex_);
    if (!fs::exists(dir / "record.json")) throw Error(ErrorCode::UnknownRun, "no run with id '" + id + "'");
    try {
        return nlohmann::json::parse(read_text_file(dir / "record.json"));
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::SchemaError, "run " + id + ": " + e.what());
    }
}

RunRecord RunStore::load(const std::string& id) const {
    auto j = load_json(id);
    RunRecord r;
    try {
        r.request_id = j.at("request_id").get<std::string>();
        if (!j.at("parent_id").is_null()) r.parent_id = j.at("parent_id").get<std::string>();
        r.input_prompt = j.at("input_prompt").get<std::string>();
        if (!j.at("raw_decomposition").is_null()) r.raw_decomposition = j.at("raw_decomposition").get<std::string>();
        if (!j.at("concept_map").is_null()) r.concept_map = concept_map_from_json(j.at("concept_map"));
        if (!j.at("enhanced_concept_map").is_null()) {
            r.enhanced_concept_map = concept_map_from_json(j.at("enhanced_concept_map"));
        }
        if (!j.at("workflow").is_null()) r.workflow = workflow_from_json(j.at("workflow"));
        const auto& tokens = j.at("tokens");
        r.tokens.completion_tokens = tokens.at("completion_tokens").get<std::uint64_t>();
        r.tokens.embedding_tokens = tokens.at("embedding_tokens").get<std::uint64_t>();
        if (!j.at("failure").is_null()) {
            const auto& f = j.at("failure");
            r.failure = StageFailure{parse_stage(f.at("stage").get<std::string>()),
                                     parse_error_code(f.at("code").get<std::string>()),
                                     f.at("message").get<std::string>()};
        }
        std::shared_lock lock(mutex_);
        for (const auto& img : j.at("images")) {
            GeneratedImage g;
            g.bytes = read_binary_file(root_ / id / img.at("file").get<std::string>());
            g.seed_used = img.at("seed_used").get<std::int64_t>();
            if (!img.at("features").is_null()) g.feature_vector = img.at("features").get<std::vector<double>>();
            r.images.push_back(std::move(g));
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::SchemaError, "run " + id + ": " + e.what());
    }
    return r;
}

std::vector<std::string> RunStore::list() const {
    std::shared_lock lock(mutex_);
    std::vector<std::string> out;
    std::ifstream index(root_ / "index.txt");
    std::string line;
    while (std::getline(index, line)) {
        line = trim(line);
        if (!line.empty() && fs::exists(root_ / line / "record.json")) out.push_back(line);
    }
    return out;
}

std::vector<std::uint8_t> RunStore::image(const std::string& id, std::size_t index) const {
    auto j = load_json(id);
    const auto& images = j.at("images");
    if (index >= images.size()) {
        throw Error(ErrorCode::UnknownImage, "run " + id + " has " + std::to_string(images.size()) +
                                                 " images, no index " + std::to_string(index));
    }
    std::shared_lock lock(mutex_);
    return read_binary_file(root_ / id / images.at(index).at("file").get<std::string>());
}

// ---- engine -----------------------------------------------------------------

ojson to_json(const IngestReport& r) {
    return {{"collection", r.collection},
            {"kind", to_string(r.kind)},
            {"metadata_baseline", r.metadata_baseline},
            {"entries", r.entries},
            {"stored", r.stored},
            {"skipped", r.skipped},
            {"embedding_tokens", r.tokens.embedding_tokens},
            {"snapshot", r.snapshot.string()}};
}

EvalAgainst parse_eval_against(std::string_view text) {
    if (text == "base") return EvalAgainst::base;
    if (text == "no-enhance") return EvalAgainst::no_enhance;
    if (text == "random-adapters") return EvalAgainst::random_adapters;
    throw Error(ErrorCode::InvalidArgument,
                "unknown comparison '" + std::string(text) + "' (expected base, no-enhance or random-adapters)");
}

std::string_view to_string(EvalAgainst a) noexcept {
    switch (a) {
    case EvalAgainst::base: return "base";
    case EvalAgainst::no_enhance: return "no-enhance";
    case EvalAgainst::random_adapters: return "random-adapters";
    }
    return "base";
}

ojson to_json(const EvalReport& r) {
    ojson j = to_json(r.run, r.criteria);
    j["token_report"] = to_json(r.tokens);
    return j;
}

Engine::Engine(EngineConfig cfg, std::shared_ptr<Provider> llm_provider, std::shared_ptr<GenerationBackend> backend,
               std::shared_ptr<Provider> judge_provider)
    : cfg_(std::move(cfg)), store_(cfg_.store_dir) {
    cfg_.validate();
    llm_ = std::make_unique<LlmGateway>(cfg_.llm, std::move(llm_provider));
    judge_ = std::make_unique<LlmGateway>(cfg_.judge.value_or(cfg_.llm), std::move(judge_provider));
    backend_ = backend ? std::move(backend) : std::shared_ptr<GenerationBackend>(make_backend(cfg_.backend));
    fs::path tdir = cfg_.templates_dir.value_or(fs::path());
    decompose_template_ = load_template(TemplateId::decompose, tdir);
    detail_template_ = load_template(TemplateId::detail_enhancement, tdir);
    judge_->set_judge_template(load_template(TemplateId::judge_pair, tdir));
    reload_collections();
}

void Engine::reload_collections() {
    std::map<std::string, std::shared_ptr<const Collection>> loaded;
    if (fs::is_directory(cfg_.collections_dir)) {
        for (const auto& entry : fs::directory_iterator(cfg_.collections_dir)) {
            if (entry.path().extension() != ".mnta") continue;
            auto col = std::make_shared<const Collection>(load_snapshot(entry.path()));
            loaded.emplace(col->name(), std::move(col));
        }
    }
    std::unique_lock lock(collections_mutex_);
    collections_ = std::move(loaded);
}

std::vector<std::pair<std::string, Collection>> Engine::collections() const {
    std::shared_lock lock(collections_mutex_);
    std::vector<std::pair<std::string, Collection>> out;
    for (const auto& [name, col] : collections_) out.emplace_back(name, *col);
    return out;
}

std::shared_ptr<const Collection> Engine::collection(const std::string& name) const {
    std::shared_lock lock(collections_mutex_);
    auto it = collections_.find(name);
    return it == collections_.end() ? nullptr : it->second;
}

Guardrails Engine::guardrails() const {
    if (!cfg_.guardrails_file) return {};
    return Guardrails::load(*cfg_.guardrails_file);
}

namespace {

class StageTimer {
public:
    StageTimer() : start_(std::chrono::steady_clock::now()) {}
    double elapsed_ms() const {
        return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_;
};

std::uint64_t run_fingerprint(const std::string& prompt, const RunOptions& o, std::int64_t seed, const EngineConfig& cfg) {
    Fnv1a h;
    h.add(prompt).add(static_cast<std::uint64_t>(seed));
    h.add(o.knobs.cfg_scale).add(static_cast<std::uint64_t>(o.knobs.width)).add(static_cast<std::uint64_t>(o.knobs.height));
    h.add(static_cast<std::uint64_t>(o.knobs.batch_size));
    h.add(static_cast<std::uint64_t>(o.details.value_or(cfg.details)));
    h.add(o.concept_map ? to_json(*o.concept_map).dump() : std::string());
    for (const auto& id : o.extra_guardrails.id_blacklist) h.add("id:" + id);
    for (const auto& w : o.extra_guardrails.word_filters) h.add("w:" + w);
    h.add(static_cast<std::uint64_t>(o.decompose)).add(static_cast<std::uint64_t>(o.enhance));
    h.add(static_cast<std::uint64_t>(o.adapters)).add(o.checkpoint_override.value_or(""));
    h.add(static_cast<std::uint64_t>(o.generate));
    // Paths are left out so the same inputs give the same id in any store.
    auto settings = to_json(cfg);
    for (const char* key : {"collections_dir", "store_dir", "templates_dir", "guardrails"}) settings.erase(key);
    h.add(settings.dump());
    return h.digest();
}

std::int64_t fresh_seed() {
    std::random_device rd;
    return static_cast<std::int64_t>((static_cast<std::uint64_t>(rd()) << 20 ^ rd()) & 0x7fffffffffffULL);
}

} // namespace

RunRecord Engine::run(const std::string& prompt, const RunOptions& options) {
    RunRecord rec;
    rec.input_prompt = prompt;
    const std::int64_t seed = options.knobs.seed.value_or(fresh_seed());
    rec.request_id = "run-" + hex64(run_fingerprint(prompt, options, seed, cfg_));
    TokenLedger ledger(cfg_.token_budget);
    StageTimer total;
    run_stages(rec, options, ledger, seed);
    rec.tokens = ledger.snapshot();
    rec.timings_ms["total"] = total.elapsed_ms();
    if (options.persist && options.generate) store_.save(rec);
    return rec;
}

void Engine::run_stages(RunRecord& rec, const RunOptions& options, TokenLedger& ledger, std::int64_t seed) {
    Stage current = Stage::decompose;
    // Runs one stage: charges and wall time are attributed to it, failures stop the run.
    auto stage = [&](Stage s, auto&& body) {
        current = s;
        const std::uint64_t before = ledger.total();
        StageTimer t;
        body();
        rec.timings_ms[std::string(to_string(s))] = t.elapsed_ms();
        rec.stage_tokens[std::string(to_string(s))] = ledger.total() - before;
        rec.stages.push_back(s);
    };

    try {
        ConceptMap map = options.concept_map.value_or(ConceptMap(Concept("placeholder")));
        if (!options.concept_map) {
            stage(Stage::decompose, [&] {
                if (trim(rec.input_prompt).empty()) throw Error(ErrorCode::InvalidArgument, "prompt is empty");
                if (options.decompose) {
                    std::string reply =
                        llm_->complete(render_template(decompose_template_, {{"prompt", trim(rec.input_prompt)}}), ledger);
                    rec.raw_decomposition = reply;
                    map = parse_concept_map(RawDecomposition{reply});
                } else {
                    map = ConceptMap(Concept(rec.input_prompt));
                }
                rec.concept_map = map;
            });
            if (options.enhance) {
                stage(Stage::enhance, [&] {
                    DetailEnhancer enhancer(*llm_, detail_template_);
                    const std::size_t n = options.details.value_or(cfg_.details);
                    ConceptMap out = map.with_main(enhancer.enhance({map.main(), n}, ledger));
                    if (cfg_.enhance_support) {
                        for (std::size_t i = 0; i < map.support().size(); ++i) {
                            out = out.with_support(i, enhancer.enhance({map.support()[i], n}, ledger));
                        }
                    }
                    map = out;
                    rec.enhanced_concept_map = map;
                });
            }
        } else {
            rec.concept_map = map;
        }

        QuerySet queries{{}, EmbeddingVector({1.0}), {}};
        stage(Stage::queries, [&] {
            queries = build_queries(map, *llm_, cfg_.policy.negative_query, ledger);
            rec.positive_queries = queries.positive_texts;
            rec.negative_query = cfg_.policy.negative_query;
        });

        const Guardrails rails = guardrails().merged(options.extra_guardrails);
        stage(Stage::select_checkpoint, [&] {
            auto col = collection(cfg_.checkpoint_collection);
            if (!col) {
                throw Error(ErrorCode::NoCheckpointAvailable,
                            "checkpoint collection '" + cfg_.checkpoint_collection + "' is not loaded");
            }
            if (options.checkpoint_override) {
                const auto& entries = col->entries();
                auto it = std::find_if(entries.begin(), entries.end(),
                                       [&](const auto& e) { return e.record.id == *options.checkpoint_override; });
                if (it == entries.end()) {
                    throw Error(ErrorCode::NoCheckpointAvailable, "no checkpoint '" + *options.checkpoint_override + "'");
                }
                CheckpointChoice c{};
                c.checkpoint = it->record;
                c.hit.record = it->record;
                c.trace.push_back("checkpoint pinned: " + it->record.id);
                rec.checkpoint = std::move(c);
            } else {
                rec.checkpoint = select_checkpoint(*col, queries.positives, queries.negative, cfg_.policy, rails);
            }
        });

        stage(Stage::query_loras, [&] {
            auto col = collection(cfg_.adapter_collection);
            std::optional<std::string> base_model;
            if (cfg_.match_adapter_base_model) base_model = rec.checkpoint->checkpoint.base_model;
            AdapterChoice choice;
            if (options.adapters == AdapterStrategy::none) {
                choice.trace.push_back("adapters disabled for this run");
            } else if (!col) {
                choice.trace.push_back("adapter gating exhausted: collection '" + cfg_.adapter_collection + "' is not loaded");
            } else if (options.adapters == AdapterStrategy::retrieve) {
                choice = query_loras(*col, queries.positives, queries.negative, cfg_.policy, rails, base_model);
            } else {
                std::vector<const DocumentRecord*> pool;
                for (const auto& e : col->entries()) {
                    if (rails.rejects(e.record)) continue;
                    if (base_model && !e.record.base_model.empty() && !iequals(e.record.base_model, *base_model)) continue;
                    pool.push_back(&e.record);
                }
                DeterministicRng rng(static_cast<std::uint64_t>(seed) ^ 0x5eedULL);
                for (std::size_t i = 0; i < cfg_.policy.k_adapters && !pool.empty(); ++i) {
                    std::size_t pick = rng.below(pool.size());
                    choice.adapters.push_back({*pool[pick], 1.0, 0.0, 0.0});
                    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(pick));
                }
                for (auto& a : choice.adapters) a.weight = 1.0 / static_cast<double>(choice.adapters.size());
                choice.trace.push_back("adapters drawn at random: " + std::to_string(choice.adapters.size()));
            }
            rec.adapters = std::move(choice);
        });

        GenerationWorkflow wf;
        stage(Stage::compose, [&] {
            GenerationKnobs knobs = options.knobs;
            knobs.seed = seed;
            wf = compose(map, rec.selection(), knobs, cfg_.policy.negative_query);
        });
        stage(Stage::refine_passthrough, [&] {
            wf = refine_passthrough(wf);
            rec.workflow = wf;
        });
        if (!options.generate) return;
        stage(Stage::txt2img, [&] {
            backend_->set_checkpoint(wf.checkpoint_id);
            rec.images = backend_->txt2img(wf);
        });
    } catch (const Error& e) {
        rec.failure = StageFailure{current, e.code(), e.what()};
    } catch (const std::exception& e) {
        rec.failure = StageFailure{current, ErrorCode::ProviderError, e.what()};
    }
}

RunRecord Engine::refine(const std::string& run_id, std::size_t image_index, double denoise) {
    if (!(denoise >= 0.0 && denoise <= 1.0)) throw Error(ErrorCode::InvalidArgument, "denoise must lie in [0, 1]");
    RunRecord parent = store_.load(run_id);
    if (!parent.workflow) throw Error(ErrorCode::UnknownImage, "run " + run_id + " produced no workflow");
    if (image_index >= parent.images.size()) {
        throw Error(ErrorCode::UnknownImage, "run " + run_id + " has " + std::to_string(parent.images.size()) +
                                                 " images, no index " + std::to_string(image_index));
    }
    RunRecord child;
    child.parent_id = parent.request_id;
    child.input_prompt = parent.input_prompt;
    child.concept_map = parent.concept_map;
    child.enhanced_concept_map = parent.enhanced_concept_map;
    child.workflow = parent.workflow;
    child.refined_from = std::make_pair(image_index, denoise);
    Fnv1a h;
    h.add(parent.request_id).add(static_cast<std::uint64_t>(image_index)).add(denoise);
    child.request_id = "run-" + hex64(h.digest());
    child.tokens.budget = cfg_.token_budget;

    StageTimer t;
    try {
        backend_->set_checkpoint(parent.workflow->checkpoint_id);
        child.images = backend_->img2img(parent.images[image_index], *parent.workflow, denoise);
        child.stages.push_back(Stage::img2img);
    } catch (const Error& e) {
        child.failure = StageFailure{Stage::img2img, e.code(), e.what()};
    }
    child.timings_ms["img2img"] = t.elapsed_ms();
    child.stage_tokens["img2img"] = 0;
    store_.save(child);
    return child;
}

IngestReport Engine::ingest(const fs::path& input, const std::string& name, DocumentKind kind, bool metadata_baseline) {
    if (name.empty() || name.find_first_of("/\\") != std::string::npos) {
        throw Error(ErrorCode::InvalidArgument, "collection name must be a plain file stem");
    }
    auto data = load_dataset(input);
    auto records = records_of_kind(data.records, kind);
    TokenLedger ledger;
    auto embed = gateway_embedder(*llm_);
    Collection col = metadata_baseline ? build_metadata_baseline(name, records, embed, ledger)
                                       : build_collection(name, records, embed, ledger);
    IngestReport report;
    report.collection = name;
    report.kind = kind;
    report.metadata_baseline = metadata_baseline;
    report.entries = data.entries;
    report.stored = col.size();
    report.skipped = data.entries - col.size();
    report.tokens = ledger.snapshot();
    fs::create_directories(cfg_.collections_dir);
    report.snapshot = cfg_.collections_dir / (name + ".mnta");
    save_snapshot(col, report.snapshot);
    reload_collections();
    return report;
}

EvalReport Engine::evaluate(const EvalRequest& request) {
    if (request.prompts.empty()) throw Error(ErrorCode::InvalidArgument, "evaluation needs at least one prompt");
    auto seed_for = [&](const std::string& prompt) {
        return static_cast<std::int64_t>(Fnv1a().add(prompt).add(static_cast<std::uint64_t>(request.seed)).digest() &
                                         0x7fffffffffffULL);
    };
    auto system = [&](RunOptions opts) -> Generator {
        return [this, opts, seed_for](const std::string& prompt, TokenLedger& ledger) {
            RunOptions o = opts;
            o.knobs.seed = seed_for(prompt);
            o.persist = false;
            RunRecord r = run(prompt, o);
            ledger.charge_completion(r.tokens.completion_tokens);
            ledger.charge_embedding(r.tokens.embedding_tokens);
            if (r.failure) {
                throw Error(r.failure->code, std::string(to_string(r.failure->stage)) + ": " + r.failure->message);
            }
            return r.images;
        };
    };

    RunOptions other;
    switch (request.against) {
    case EvalAgainst::base: {
        other.decompose = false;
        other.enhance = false;
        other.adapters = AdapterStrategy::none;
        auto col = collection(cfg_.checkpoint_collection);
        if (col && !col->empty()) other.checkpoint_override = col->entries().front().record.id;
        break;
    }
    case EvalAgainst::no_enhance: other.enhance = false; break;
    case EvalAgainst::random_adapters: other.adapters = AdapterStrategy::random; break;
    }

    EvalOptions eo;
    eo.system_a = "manta";
    eo.system_b = std::string(to_string(request.against));
    eo.parallelism = cfg_.eval_parallelism;
    TokenLedger judge_ledger;
    EvalReport report;
    report.criteria = request.criteria;
    report.run = evaluate_pair(request.prompts, system({}), system(other), *judge_, request.criteria, judge_ledger, eo);

    std::size_t images_a = 0, images_b = 0;
    for (const auto& p : report.run.prompts) {
        images_a += p.images_a;
        images_b += p.images_b;
    }
    std::vector<SystemTokens> systems{{eo.system_a, {report.run.tokens_a}, images_a},
                                      {eo.system_b, {report.run.tokens_b}, images_b}};
    report.tokens = token_report(systems);
    return report;
}

} // namespace manta
