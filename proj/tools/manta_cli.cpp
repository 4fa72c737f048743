// Command-line front end. Talks to the engine only through the C interface.
#include "manta/manta.h"

#include <CLI11.hpp>

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

namespace {

std::atomic<bool> interrupted{false};

class Engine {
public:
    explicit Engine(const std::string& config_path) {
        const char* path = config_path.empty() ? nullptr : config_path.c_str();
        status_ = manta_engine_create(path, nullptr, &handle_);
    }
    ~Engine() { manta_engine_destroy(handle_); }

    Engine(const Engine&) = delete;
    Engine& operator=(const Engine&) = delete;

    manta_status status() const { return status_; }
    manta_engine* get() const { return handle_; }

private:
    manta_engine* handle_ = nullptr;
    manta_status status_ = MANTA_OK;
};

// Takes ownership of a library string.
std::string take(char* s) {
    std::string out = s ? s : "";
    manta_string_free(s);
    return out;
}

int report_error(manta_status s) {
    std::cerr << "manta: " << manta_status_name(s) << ": " << manta_last_error() << "\n";
    return s == MANTA_E_INVALID_ARGUMENT || s == MANTA_E_SCHEMA ? 2 : 1;
}

std::string resolve_config(const std::string& flag) {
    if (!flag.empty()) return flag;
    if (const char* env = std::getenv("MANTA_CONFIG"); env && *env) return env;
    if (std::filesystem::exists("manta.json")) return "manta.json";
    return {};
}

std::vector<std::string> read_prompts(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path);
    std::vector<std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        auto b = line.find_first_not_of(" \t\r");
        if (b == std::string::npos || line[b] == '#') continue;
        auto e = line.find_last_not_of(" \t\r");
        out.push_back(line.substr(b, e - b + 1));
    }
    return out;
}

std::vector<std::string> split_commas(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string part;
    while (std::getline(ss, part, ',')) {
        if (!part.empty()) out.push_back(part);
    }
    return out;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"manta: prompt-to-workflow generation engine"};
    app.require_subcommand(1);
    std::string config;
    app.add_option("--config", config, "Engine config (JSON). Defaults to $MANTA_CONFIG, then ./manta.json");
    app.set_version_flag("--version", std::string(manta_version()));

    auto* ingest = app.add_subcommand("ingest", "Embed a dataset into a collection snapshot");
    std::string input, collection, kind;
    bool metadata_baseline = false;
    ingest->add_option("--input", input, "Dataset JSON file")->required()->check(CLI::ExistingFile);
    ingest->add_option("--collection", collection, "Collection name")->required();
    ingest->add_option("--kind", kind, "checkpoint or adapter")->required()->check(CLI::IsMember({"checkpoint", "adapter", "lora"}));
    ingest->add_flag("--metadata-baseline", metadata_baseline, "Embed name and description instead of the exemplar prompt");

    auto* run = app.add_subcommand("run", "Full pipeline run");
    auto* compose = app.add_subcommand("compose", "Decompose, enhance and select without generating");
    std::string prompt;
    std::optional<double> cfg;
    std::optional<int> details, batch, width, height;
    std::optional<long long> seed;
    bool dump_workflow = false;
    for (auto* sub : {run, compose}) {
        sub->add_option("--prompt", prompt, "Prompt text")->required();
        sub->add_option("--cfg", cfg, "CFG scale");
        sub->add_option("--details", details, "Details added per concept")->check(CLI::PositiveNumber);
        sub->add_option("--seed", seed, "Pin the generation seed");
        sub->add_option("--batch", batch, "Images per batch")->check(CLI::PositiveNumber);
        sub->add_option("--width", width, "Image width");
        sub->add_option("--height", height, "Image height");
        sub->add_flag("--dump-workflow", dump_workflow, "Print only the workflow JSON");
    }

    auto* refine = app.add_subcommand("refine", "img2img on an image of a stored run");
    std::string run_id;
    std::size_t image = 0;
    double denoise = 0.5;
    refine->add_option("--run", run_id, "Run id")->required();
    refine->add_option("--image", image, "Image index")->required();
    refine->add_option("--denoise", denoise, "Denoising strength in [0, 1]")->check(CLI::Range(0.0, 1.0));

    auto* eval = app.add_subcommand("eval", "Pairwise judged comparison against a baseline");
    std::string prompts_file, against = "base", criteria = "diversity,quality,alignment", output;
    long long eval_seed = 0;
    eval->add_option("--prompts", prompts_file, "File with one prompt per line")->required()->check(CLI::ExistingFile);
    eval->add_option("--against", against, "base, no-enhance or random-adapters")
        ->check(CLI::IsMember({"base", "no-enhance", "random-adapters"}));
    eval->add_option("--criteria", criteria, "Comma-separated criteria");
    eval->add_option("--seed", eval_seed, "Base seed for generation");
    eval->add_option("--output", output, "Write the report here as well as to stdout");

    auto* serve = app.add_subcommand("serve", "Serve the HTTP API");
    std::string host = "127.0.0.1";
    int port = 8080;
    serve->add_option("--host", host, "Bind address");
    serve->add_option("--port", port, "Port (0 picks a free one)")->check(CLI::Range(0, 65535));

    CLI11_PARSE(app, argc, argv);

    Engine engine(resolve_config(config));
    if (engine.status() != MANTA_OK) return report_error(engine.status());

    if (ingest->parsed()) {
        char* out = nullptr;
        auto s = manta_ingest(engine.get(), input.c_str(), collection.c_str(), kind.c_str(), metadata_baseline ? 1 : 0, &out);
        if (s != MANTA_OK) return report_error(s);
        std::cout << take(out) << "\n";
        return 0;
    }

    if (run->parsed() || compose->parsed()) {
        nlohmann::json options = nlohmann::json::object();
        nlohmann::json knobs = nlohmann::json::object();
        if (cfg) knobs["cfg_scale"] = *cfg;
        if (seed) knobs["seed"] = *seed;
        if (details) knobs["details"] = *details;
        if (batch) knobs["batch_size"] = *batch;
        if (width) knobs["width"] = *width;
        if (height) knobs["height"] = *height;
        options["knobs"] = knobs;
        char* out = nullptr;
        auto s = run->parsed() ? manta_run(engine.get(), prompt.c_str(), options.dump().c_str(), &out)
                               : manta_compose(engine.get(), prompt.c_str(), options.dump().c_str(), &out);
        std::string record = take(out);
        if (!record.empty()) {
            if (dump_workflow) std::cout << nlohmann::json::parse(record)["workflow"].dump(2) << "\n";
            else std::cout << record << "\n";
        }
        return s == MANTA_OK ? 0 : report_error(s);
    }

    if (refine->parsed()) {
        char* out = nullptr;
        auto s = manta_refine(engine.get(), run_id.c_str(), image, denoise, &out);
        std::string record = take(out);
        if (!record.empty()) std::cout << record << "\n";
        return s == MANTA_OK ? 0 : report_error(s);
    }

    if (eval->parsed()) {
        nlohmann::json req;
        try {
            req["prompts"] = read_prompts(prompts_file);
        } catch (const std::exception& e) {
            std::cerr << "manta: " << e.what() << "\n";
            return 2;
        }
        req["against"] = against;
        req["criteria"] = split_commas(criteria);
        req["seed"] = eval_seed;
        char* out = nullptr;
        auto s = manta_evaluate(engine.get(), req.dump().c_str(), &out);
        if (s != MANTA_OK) return report_error(s);
        std::string report = take(out);
        std::cout << report << "\n";
        if (!output.empty()) std::ofstream(output) << report << "\n";
        return 0;
    }

    if (serve->parsed()) {
        manta_server* server = nullptr;
        int bound = 0;
        auto s = manta_server_start(engine.get(), host.c_str(), port, &bound, &server);
        if (s != MANTA_OK) return report_error(s);
        std::signal(SIGINT, [](int) { interrupted = true; });
        std::signal(SIGTERM, [](int) { interrupted = true; });
        std::cout << "listening on http://" << host << ":" << bound << std::endl;
        while (!interrupted) std::this_thread::sleep_for(std::chrono::milliseconds(100));
        manta_server_stop(server);
        return 0;
    }
    return 0;
}
