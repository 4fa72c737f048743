#include "manta/ingest.hpp"

#include "manta/error.hpp"
#include "manta/util.hpp"

#include <nlohmann/json.hpp>

#include <future>
#include <set>

namespace manta {

LoadedDataset parse_dataset(std::string_view json_text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorCode::SchemaError, std::string("dataset is not valid JSON: ") + e.what());
    }
    if (!j.is_array()) throw Error(ErrorCode::SchemaError, "dataset top level must be a JSON array");

    LoadedDataset out;
    out.entries = j.size();
    for (std::size_t i = 0; i < j.size(); ++i) {
        const auto& e = j[i];
        auto skip = [&](const std::string& why) {
            ++out.skipped;
            out.warnings.push_back("entry " + std::to_string(i) + ": " + why);
        };
        if (!e.is_object()) {
            skip("not an object");
            continue;
        }
        if (!e.contains("id") || !(e["id"].is_string() || e["id"].is_number_integer())) {
            skip("missing id");
            continue;
        }
        DocumentRecord r;
        r.id = e["id"].is_string() ? e["id"].get<std::string>() : std::to_string(e["id"].get<long long>());
        try {
            r.kind = parse_document_kind(e.value("type", ""));
        } catch (const Error&) {
            skip("unknown type for " + r.id);
            continue;
        }
        std::string exemplar;
        if (e.contains("prompts") && e["prompts"].is_array()) {
            for (const auto& p : e["prompts"]) {
                if (p.is_string() && !trim(p.get<std::string>()).empty()) {
                    exemplar = trim(p.get<std::string>());
                    break;
                }
            }
        }
        if (exemplar.empty()) {
            skip("no exemplar prompt for " + r.id);
            continue;
        }
        r.exemplar_prompt = std::move(exemplar);
        r.base_model = e.value("base_model", "");
        r.display_name = e.value("name", r.id);
        if (e.contains("description") && e["description"].is_string()) r.description = e["description"].get<std::string>();
        if (e.value("nsfw", false)) r.flags.insert("nsfw");
        if (e.value("blacklisted", false)) r.flags.insert("blacklisted");
        out.records.push_back(std::move(r));
    }
    return out;
}

LoadedDataset load_dataset(const std::filesystem::path& path) {
    std::string text = read_text_file(path);
    if (trim(text).empty()) throw Error(ErrorCode::SchemaError, "dataset file " + path.string() + " is empty");
    return parse_dataset(text);
}

EmbedFn gateway_embedder(LlmGateway& gateway) {
    return [&gateway](std::span<const std::string> texts, TokenLedger& ledger) { return gateway.embed(texts, ledger); };
}

std::vector<DocumentRecord> records_of_kind(std::span<const DocumentRecord> records, DocumentKind kind) {
    std::vector<DocumentRecord> out;
    for (const auto& r : records) {
        if (r.kind == kind) out.push_back(r);
    }
    return out;
}

namespace {

Collection build_from_texts(std::string name, std::span<const DocumentRecord> records,
                            const std::vector<std::string>& texts, const EmbedFn& embed, TokenLedger& ledger,
                            const BuildOptions& options) {
    if (records.empty()) throw Error(ErrorCode::InvalidArgument, "no records to ingest");
    const DocumentKind kind = records.front().kind;
    std::set<std::string> ids;
    for (const auto& r : records) {
        if (r.kind != kind) throw Error(ErrorCode::InvalidArgument, "records mix checkpoints and adapters");
        if (!ids.insert(r.id).second) throw Error(ErrorCode::DuplicateId, "duplicate record id " + r.id);
    }

    const std::size_t batch = std::max<std::size_t>(1, options.batch_size);
    const std::size_t workers = std::max<std::size_t>(1, options.parallelism);
    std::vector<std::vector<EmbeddingVector>> results((texts.size() + batch - 1) / batch);

    // Batches run in waves of `workers`; results land in their own slots so order is preserved.
    for (std::size_t wave = 0; wave < results.size(); wave += workers) {
        std::vector<std::future<std::vector<EmbeddingVector>>> inflight;
        for (std::size_t b = wave; b < std::min(results.size(), wave + workers); ++b) {
            std::size_t lo = b * batch;
            std::size_t hi = std::min(texts.size(), lo + batch);
            std::span<const std::string> slice(texts.data() + lo, hi - lo);
            inflight.push_back(std::async(std::launch::async, [&embed, &ledger, slice] { return embed(slice, ledger); }));
        }
        for (std::size_t i = 0; i < inflight.size(); ++i) results[wave + i] = inflight[i].get();
    }

    std::size_t dimension = results.front().front().dimension();
    Collection c(std::move(name), kind, dimension);
    std::size_t index = 0;
    for (auto& chunk : results) {
        for (auto& v : chunk) {
            c.add(records[index++], quantize(v));
        }
    }
    return c;
}

} // namespace

Collection build_collection(std::string name, std::span<const DocumentRecord> records, const EmbedFn& embed,
                            TokenLedger& ledger, const BuildOptions& options) {
    std::vector<std::string> texts;
    texts.reserve(records.size());
    for (const auto& r : records) texts.push_back(r.exemplar_prompt);
    return build_from_texts(std::move(name), records, texts, embed, ledger, options);
}

Collection build_metadata_baseline(std::string name, std::span<const DocumentRecord> records, const EmbedFn& embed,
                                   TokenLedger& ledger, const BuildOptions& options) {
    std::vector<std::string> texts;
    texts.reserve(records.size());
    for (const auto& r : records) {
        if (!r.description || trim(*r.description).empty()) {
            throw Error(ErrorCode::MissingMetadata, "record " + r.id + " has no description");
        }
        texts.push_back(r.display_name + "\n" + *r.description);
    }
    return build_from_texts(std::move(name), records, texts, embed, ledger, options);
}

} // namespace manta
