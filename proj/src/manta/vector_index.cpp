#include "manta/vector_index.hpp"

#include "manta/error.hpp"
#include "manta/util.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>

namespace manta {

std::string_view to_string(DocumentKind kind) noexcept {
    return kind == DocumentKind::checkpoint ? "checkpoint" : "adapter";
}

DocumentKind parse_document_kind(std::string_view text) {
    std::string t = to_lower(trim(text));
    if (t == "checkpoint") return DocumentKind::checkpoint;
    if (t == "adapter" || t == "lora") return DocumentKind::adapter;
    throw Error(ErrorCode::InvalidArgument, "unknown document kind '" + std::string(text) + "'");
}

QuantizedVector::QuantizedVector(std::vector<std::int8_t> codes, double scale)
    : codes_(std::move(codes)), scale_(scale) {
    if (codes_.empty()) throw Error(ErrorCode::InvalidArgument, "quantized vector has zero dimension");
    if (!(scale_ > 0) || !std::isfinite(scale_)) throw Error(ErrorCode::InvalidArgument, "quantization scale must be positive");
}

std::vector<double> QuantizedVector::dequantize() const {
    std::vector<double> out(codes_.size());
    dequantize_into(out);
    return out;
}

void QuantizedVector::dequantize_into(std::span<double> out) const {
    for (std::size_t i = 0; i < codes_.size(); ++i) out[i] = codes_[i] * scale_;
}

QuantizedVector quantize(std::span<const double> v) {
    if (v.empty()) throw Error(ErrorCode::InvalidArgument, "cannot quantize an empty vector");
    double max_abs = 0;
    for (double x : v) {
        if (!std::isfinite(x)) throw Error(ErrorCode::NonFiniteInput, "cannot quantize a non-finite value");
        max_abs = std::max(max_abs, std::abs(x));
    }
    std::vector<std::int8_t> codes(v.size(), 0);
    if (max_abs == 0) return QuantizedVector(std::move(codes), 1.0);
    for (std::size_t i = 0; i < v.size(); ++i) {
        // x * 127 / max keeps exact halves exact (0.5 -> 63.5 -> 64).
        long code = std::lround(v[i] * 127.0 / max_abs);
        codes[i] = static_cast<std::int8_t>(std::clamp(code, -127L, 127L));
    }
    return QuantizedVector(std::move(codes), max_abs / 127.0);
}

double cosine(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw Error(ErrorCode::DimensionMismatch,
                    "cosine of vectors with dimensions " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
    }
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0 || nb == 0) return 0.0;
    return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

TripletScore triplet_context(std::span<const double> doc, std::span<const EmbeddingVector> positives,
                             const EmbeddingVector& negative) {
    if (positives.empty()) throw Error(ErrorCode::InvalidArgument, "triplet scoring needs at least one positive");
    TripletScore s;
    double neg = cosine(doc, negative.values());
    for (const auto& p : positives) {
        double pos = cosine(doc, p.values());
        double margin = pos - neg;
        s.context += std::min(margin, 0.0);
        s.margin_sum += margin;
        s.positive_similarity += pos;
    }
    s.positive_similarity /= static_cast<double>(positives.size());
    return s;
}

bool ranks_before(const ScoredHit& a, const ScoredHit& b) {
    if (a.context != b.context) return a.context > b.context;
    if (a.margin_sum != b.margin_sum) return a.margin_sum > b.margin_sum;
    return a.record.id < b.record.id;
}

Collection::Collection(std::string name, DocumentKind kind, std::size_t dimension)
    : name_(std::move(name)), kind_(kind), dimension_(dimension) {
    if (dimension_ == 0) throw Error(ErrorCode::InvalidArgument, "collection dimension must be positive");
}

void Collection::add(DocumentRecord record, QuantizedVector vector) {
    if (record.kind != kind_) {
        throw Error(ErrorCode::InvalidArgument, "record " + record.id + " is a " + std::string(to_string(record.kind)) +
                                                    ", collection holds " + std::string(to_string(kind_)) + "s");
    }
    if (record.id.empty()) throw Error(ErrorCode::InvalidArgument, "record id is empty");
    if (record.exemplar_prompt.empty()) throw Error(ErrorCode::InvalidArgument, "record " + record.id + " has no exemplar prompt");
    if (vector.dimension() != dimension_) {
        throw Error(ErrorCode::DimensionMismatch, "record " + record.id + " has dimension " +
                                                      std::to_string(vector.dimension()) + ", collection " +
                                                      std::to_string(dimension_));
    }
    if (!ids_.insert(record.id).second) throw Error(ErrorCode::DuplicateId, "duplicate record id " + record.id);
    entries_.push_back({std::move(record), std::move(vector)});
}

std::vector<ScoredHit> rank_all(const Collection& c, std::span<const EmbeddingVector> positives,
                                const EmbeddingVector& negative) {
    if (negative.dimension() != c.dimension()) {
        throw Error(ErrorCode::DimensionMismatch, "negative query dimension does not match collection");
    }
    for (const auto& p : positives) {
        if (p.dimension() != c.dimension()) {
            throw Error(ErrorCode::DimensionMismatch, "positive query dimension does not match collection");
        }
    }
    std::vector<ScoredHit> hits;
    hits.reserve(c.size());
    std::vector<double> scratch(c.dimension());
    for (const auto& e : c.entries()) {
        e.vector.dequantize_into(scratch);
        auto s = triplet_context(scratch, positives, negative);
        hits.push_back({e.record, s.context, s.margin_sum, s.positive_similarity});
    }
    std::sort(hits.begin(), hits.end(), ranks_before);
    return hits;
}

std::vector<ScoredHit> search(const Collection& c, std::span<const EmbeddingVector> positives,
                              const EmbeddingVector& negative, std::size_t k, double threshold) {
    if (k == 0) throw Error(ErrorCode::InvalidArgument, "search k must be >= 1");
    if (c.empty()) throw Error(ErrorCode::EmptyCollection, "collection " + c.name() + " is empty");
    auto ranked = rank_all(c, positives, negative);

    std::vector<ScoredHit> passing;
    for (auto& h : ranked) {
        if (passing.size() == k) break;
        if (h.context == 0.0 && h.margin_sum >= threshold) passing.push_back(h);
    }
    if (!passing.empty()) return passing;
    if (ranked.size() > k) ranked.resize(k);
    return ranked;
}

namespace {

class Writer {
public:
    void u8(std::uint8_t v) { out_.push_back(v); }
    void u16(std::uint16_t v) { le(v, 2); }
    void u32(std::uint32_t v) { le(v, 4); }
    void u64(std::uint64_t v) { le(v, 8); }
    void f64(double v) { le(std::bit_cast<std::uint64_t>(v), 8); }
    void bytes(std::string_view s) { out_.insert(out_.end(), s.begin(), s.end()); }
    void str(std::string_view s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes(s);
    }
    std::vector<std::uint8_t> take() { return std::move(out_); }
    std::size_t size() const { return out_.size(); }

private:
    void le(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    std::vector<std::uint8_t> out_;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

    std::uint8_t u8() { return static_cast<std::uint8_t>(le(1)); }
    std::uint16_t u16() { return static_cast<std::uint16_t>(le(2)); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
    std::uint64_t u64() { return le(8); }
    double f64() { return std::bit_cast<double>(le(8)); }
    std::span<const std::uint8_t> raw(std::size_t n) {
        need(n);
        auto s = in_.subspan(pos_, n);
        pos_ += n;
        return s;
    }
    std::string str() {
        auto s = raw(u32());
        return std::string(s.begin(), s.end());
    }
    bool at_end() const { return pos_ == in_.size(); }
    std::size_t remaining() const { return in_.size() - pos_; }

private:
    void need(std::size_t n) const {
        if (in_.size() - pos_ < n) throw Error(ErrorCode::CorruptSnapshot, "snapshot is truncated");
    }
    std::uint64_t le(int n) {
        need(static_cast<std::size_t>(n));
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(in_[pos_ + i]) << (8 * i);
        pos_ += static_cast<std::size_t>(n);
        return v;
    }
    std::span<const std::uint8_t> in_;
    std::size_t pos_ = 0;
};

std::vector<std::uint8_t> metadata_block(const DocumentRecord& r) {
    Writer w;
    w.str(r.base_model);
    w.str(r.exemplar_prompt);
    w.str(r.display_name);
    w.u8(r.description ? 1 : 0);
    if (r.description) w.str(*r.description);
    w.u32(static_cast<std::uint32_t>(r.flags.size()));
    for (const auto& f : r.flags) w.str(f);
    return w.take();
}

} // namespace

std::vector<std::uint8_t> serialize_snapshot(const Collection& c) {
    Writer w;
    w.bytes("MNTA");
    w.u16(kSnapshotVersion);
    w.u8(static_cast<std::uint8_t>(c.kind()));
    w.u32(static_cast<std::uint32_t>(c.dimension()));
    w.u64(c.size());
    for (const auto& e : c.entries()) {
        w.str(e.record.id);
        auto meta = metadata_block(e.record);
        w.str(std::string_view(reinterpret_cast<const char*>(meta.data()), meta.size()));
        w.f64(e.vector.scale());
        w.bytes(std::string_view(reinterpret_cast<const char*>(e.vector.codes().data()), e.vector.dimension()));
    }
    return w.take();
}

Collection deserialize_snapshot(std::span<const std::uint8_t> bytes, std::string name) {
    Reader r(bytes);
    auto magic = r.raw(4);
    if (std::memcmp(magic.data(), "MNTA", 4) != 0) throw Error(ErrorCode::CorruptSnapshot, "bad snapshot magic");
    std::uint16_t version = r.u16();
    if (version != kSnapshotVersion) {
        throw Error(ErrorCode::VersionMismatch, "snapshot version " + std::to_string(version) + ", reader supports " +
                                                    std::to_string(kSnapshotVersion));
    }
    std::uint8_t kind = r.u8();
    if (kind > 1) throw Error(ErrorCode::CorruptSnapshot, "bad snapshot kind byte");
    std::uint32_t dimension = r.u32();
    if (dimension == 0) throw Error(ErrorCode::CorruptSnapshot, "snapshot dimension is 0");
    std::uint64_t count = r.u64();

    Collection c(std::move(name), static_cast<DocumentKind>(kind), dimension);
    try {
        for (std::uint64_t i = 0; i < count; ++i) {
            DocumentRecord rec;
            rec.id = r.str();
            rec.kind = c.kind();
            auto meta_bytes = r.raw(r.u32());
            Reader meta(meta_bytes);
            rec.base_model = meta.str();
            rec.exemplar_prompt = meta.str();
            rec.display_name = meta.str();
            if (meta.u8()) rec.description = meta.str();
            std::uint32_t n_flags = meta.u32();
            for (std::uint32_t f = 0; f < n_flags; ++f) rec.flags.insert(meta.str());
            if (!meta.at_end()) throw Error(ErrorCode::CorruptSnapshot, "trailing bytes in metadata block");
            double scale = r.f64();
            auto codes = r.raw(dimension);
            std::vector<std::int8_t> code_vec(dimension);
            std::memcpy(code_vec.data(), codes.data(), dimension);
            c.add(std::move(rec), QuantizedVector(std::move(code_vec), scale));
        }
    } catch (const Error& e) {
        if (e.code() == ErrorCode::CorruptSnapshot) throw;
        throw Error(ErrorCode::CorruptSnapshot, std::string("invalid snapshot record: ") + e.what());
    }
    if (!r.at_end()) throw Error(ErrorCode::CorruptSnapshot, "trailing bytes after last record");
    return c;
}

void save_snapshot(const Collection& c, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    write_binary_file(tmp, serialize_snapshot(c));
    std::filesystem::rename(tmp, path);
}

Collection load_snapshot(const std::filesystem::path& path) {
    auto bytes = read_binary_file(path);
    return deserialize_snapshot(bytes, path.stem().string());
}

} // namespace manta
