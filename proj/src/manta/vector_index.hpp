#pragma once

#include "manta/llm.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace manta {

enum class DocumentKind : std::uint8_t { checkpoint = 0, adapter = 1 };

std::string_view to_string(DocumentKind kind) noexcept;
DocumentKind parse_document_kind(std::string_view text);

struct DocumentRecord {
    std::string id;
    DocumentKind kind = DocumentKind::adapter;
    std::string base_model;
    std::string exemplar_prompt;
    std::string display_name;
    std::set<std::string> flags;  // e.g. "blacklisted", "nsfw"
    std::optional<std::string> description;

    bool operator==(const DocumentRecord&) const = default;
};

/// Symmetric per-vector INT8 code: value_i ~= codes_i * scale.
class QuantizedVector {
public:
    QuantizedVector(std::vector<std::int8_t> codes, double scale);

    std::size_t dimension() const noexcept { return codes_.size(); }
    std::span<const std::int8_t> codes() const noexcept { return codes_; }
    double scale() const noexcept { return scale_; }

    std::vector<double> dequantize() const;
    void dequantize_into(std::span<double> out) const;

    bool operator==(const QuantizedVector&) const = default;

private:
    std::vector<std::int8_t> codes_;
    double scale_;
};

/// scale = max|v| / 127 (1 for the zero vector); codes rounded half away from zero.
QuantizedVector quantize(std::span<const double> v);
inline QuantizedVector quantize(const EmbeddingVector& v) { return quantize(v.values()); }

/// Cosine similarity; 0 when either side is the zero vector.
double cosine(std::span<const double> a, std::span<const double> b);
inline double cosine(const EmbeddingVector& a, const EmbeddingVector& b) { return cosine(a.values(), b.values()); }

struct TripletScore {
    double context = 0;     // sum of min(margin_i, 0); never positive
    double margin_sum = 0;  // sum of margin_i
    double positive_similarity = 0;  // mean cosine to the positives
};

/// margin_i = cos(doc, positive_i) - cos(doc, negative).
TripletScore triplet_context(std::span<const double> doc, std::span<const EmbeddingVector> positives,
                             const EmbeddingVector& negative);

struct ScoredHit {
    DocumentRecord record;
    double context = 0;
    double margin_sum = 0;
    double positive_similarity = 0;
};

/// Ranking order: context desc, then margin_sum desc, then id asc.
bool ranks_before(const ScoredHit& a, const ScoredHit& b);

class Collection {
public:
    struct Entry {
        DocumentRecord record;
        QuantizedVector vector;

        bool operator==(const Entry&) const = default;
    };

    Collection(std::string name, DocumentKind kind, std::size_t dimension);

    /// Throws DuplicateId, DimensionMismatch, or InvalidArgument on kind mismatch / empty exemplar.
    void add(DocumentRecord record, QuantizedVector vector);

    const std::string& name() const noexcept { return name_; }
    DocumentKind kind() const noexcept { return kind_; }
    std::size_t dimension() const noexcept { return dimension_; }
    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }
    const std::vector<Entry>& entries() const noexcept { return entries_; }

    bool operator==(const Collection&) const = default;

private:
    std::string name_;
    DocumentKind kind_;
    std::size_t dimension_;
    std::vector<Entry> entries_;
    std::set<std::string> ids_;
};

/// Every document scored on dequantized vectors and sorted by ranks_before.
std::vector<ScoredHit> rank_all(const Collection& c, std::span<const EmbeddingVector> positives,
                                const EmbeddingVector& negative);

/// Top-k hits. A hit passes when context == 0 and margin_sum >= threshold;
/// when any hit passes only passing hits are returned, otherwise the top-k
/// overall (gating is left to the caller). Throws EmptyCollection.
std::vector<ScoredHit> search(const Collection& c, std::span<const EmbeddingVector> positives,
                              const EmbeddingVector& negative, std::size_t k, double threshold);

// Snapshot layout (little-endian):
//   "MNTA" | u16 version | u8 kind | u32 dimension | u64 count
//   per record: u32 id_len, id bytes | u32 meta_len, metadata block | f64 scale | dimension x i8 codes
// The metadata block is a sequence of u32-length-prefixed strings:
//   base_model, exemplar_prompt, display_name, u8 has_description [, description], u32 n_flags, flags...
inline constexpr std::uint16_t kSnapshotVersion = 1;
inline constexpr std::size_t kSnapshotHeaderBytes = 4 + 2 + 1 + 4 + 8;

std::vector<std::uint8_t> serialize_snapshot(const Collection& c);
Collection deserialize_snapshot(std::span<const std::uint8_t> bytes, std::string name);

void save_snapshot(const Collection& c, const std::filesystem::path& path);
/// The collection is named after the file stem.
Collection load_snapshot(const std::filesystem::path& path);

} // namespace manta
