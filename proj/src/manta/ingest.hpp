#pragma once

#include "manta/llm.hpp"
#include "manta/vector_index.hpp"

#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace manta {

/// Dataset file: a JSON array of
///   {"id", "type": "checkpoint"|"lora"|"adapter", "base_model", "name",
///    "prompts": [text...], "description"?, "nsfw"?, "blacklisted"?}
/// The first prompt is the record's exemplar.
struct LoadedDataset {
    std::vector<DocumentRecord> records;
    std::size_t skipped = 0;
    std::size_t entries = 0;
    std::vector<std::string> warnings;
};

LoadedDataset load_dataset(const std::filesystem::path& path);
LoadedDataset parse_dataset(std::string_view json_text);

/// Embeds a batch of texts, charging the ledger.
using EmbedFn = std::function<std::vector<EmbeddingVector>(std::span<const std::string>, TokenLedger&)>;

EmbedFn gateway_embedder(LlmGateway& gateway);

struct BuildOptions {
    std::size_t batch_size = 32;
    std::size_t parallelism = 4;  // concurrent embedding batches
};

/// One quantized exemplar-prompt embedding per record. Throws DuplicateId.
Collection build_collection(std::string name, std::span<const DocumentRecord> records, const EmbedFn& embed,
                            TokenLedger& ledger, const BuildOptions& options = {});

/// Token-cost baseline: documents are "<display_name>\n<description>". Throws MissingMetadata.
Collection build_metadata_baseline(std::string name, std::span<const DocumentRecord> records, const EmbedFn& embed,
                                   TokenLedger& ledger, const BuildOptions& options = {});

std::vector<DocumentRecord> records_of_kind(std::span<const DocumentRecord> records, DocumentKind kind);

} // namespace manta
