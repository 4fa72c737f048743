#include "manta/vector_index.hpp"

#include "test_support.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <random>

using namespace manta;
using testing::random_vector;
using testing::TempDir;

namespace {

DocumentRecord doc(std::string id, DocumentKind kind = DocumentKind::adapter) {
    DocumentRecord r;
    r.id = std::move(id);
    r.kind = kind;
    r.base_model = "sd15";
    r.exemplar_prompt = "exemplar for " + r.id;
    r.display_name = r.id;
    return r;
}

// Brute-force full-precision reference written independently of the library scorer.
struct OracleHit {
    std::string id;
    double context;
    double margin_sum;
};

double plain_cosine(const std::vector<double>& a, std::span<const double> b) {
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0 || nb == 0) return 0;
    return dot / std::sqrt(na * nb);
}

std::vector<OracleHit> oracle_rank(const std::vector<std::pair<std::string, std::vector<double>>>& docs,
                                   const std::vector<EmbeddingVector>& pos, const EmbeddingVector& neg) {
    std::vector<OracleHit> out;
    for (const auto& [id, v] : docs) {
        double ctx = 0, sum = 0;
        double cn = plain_cosine(v, neg.values());
        for (const auto& p : pos) {
            double m = plain_cosine(v, p.values()) - cn;
            sum += m;
            ctx += std::min(m, 0.0);
        }
        out.push_back({id, ctx, sum});
    }
    std::sort(out.begin(), out.end(), [](const OracleHit& a, const OracleHit& b) {
        if (a.context != b.context) return a.context > b.context;
        if (a.margin_sum != b.margin_sum) return a.margin_sum > b.margin_sum;
        return a.id < b.id;
    });
    return out;
}

} // namespace

TEST_SUITE("vector_index") {

TEST_CASE("quantize examples") {
    std::vector<double> v{1.0, -1.0, 0.5};
    auto q = quantize(v);
    CHECK(q.codes()[0] == 127);
    CHECK(q.codes()[1] == -127);
    CHECK(q.codes()[2] == 64);
    CHECK(q.scale() == doctest::Approx(1.0 / 127));

    std::vector<double> zero(5, 0.0);
    auto z = quantize(zero);
    CHECK(z.scale() == 1.0);
    for (auto c : z.codes()) CHECK(c == 0);
    CHECK(z.dequantize() == zero);

    std::vector<double> bad{1.0, std::nan("")};
    CHECK_ERROR_CODE(quantize(bad), ErrorCode::NonFiniteInput);
}

TEST_CASE("cosine basics") {
    std::vector<double> a{1, 0}, b{0, 1}, c{2, 0}, z{0, 0};
    CHECK(cosine(a, b) == doctest::Approx(0));
    CHECK(cosine(a, c) == doctest::Approx(1));
    CHECK(cosine(a, z) == 0);
    std::vector<double> d{1, 0, 0};
    CHECK_ERROR_CODE(cosine(a, d), ErrorCode::DimensionMismatch);
}

TEST_CASE("triplet context examples") {
    std::vector<double> d{1, 0};
    std::vector<EmbeddingVector> pos{EmbeddingVector({1, 0}), EmbeddingVector({0, 1})};
    EmbeddingVector neg({0, -1});
    auto s = triplet_context(d, pos, neg);
    // margins: 1 - 0 = 1, 0 - 0 = 0
    CHECK(s.context == doctest::Approx(0));
    CHECK(s.margin_sum == doctest::Approx(1));

    EmbeddingVector neg2({1, 0});
    auto s2 = triplet_context(d, pos, neg2);
    // margins: 0, -1
    CHECK(s2.context == doctest::Approx(-1));
    CHECK(s2.margin_sum == doctest::Approx(-1));
}

TEST_CASE("collection add validates") {
    Collection c("c", DocumentKind::adapter, 3);
    std::vector<double> v{1, 2, 3};
    c.add(doc("a"), quantize(v));
    CHECK_ERROR_CODE(c.add(doc("a"), quantize(v)), ErrorCode::DuplicateId);
    std::vector<double> w{1, 2};
    CHECK_ERROR_CODE(c.add(doc("b"), quantize(w)), ErrorCode::DimensionMismatch);
    CHECK_ERROR_CODE(c.add(doc("k", DocumentKind::checkpoint), quantize(v)), ErrorCode::InvalidArgument);
    auto empty = doc("e");
    empty.exemplar_prompt = "";
    CHECK_ERROR_CODE(c.add(empty, quantize(v)), ErrorCode::InvalidArgument);
    CHECK(c.size() == 1);
}

TEST_CASE("search on empty collection") {
    Collection c("c", DocumentKind::adapter, 2);
    std::vector<EmbeddingVector> pos{EmbeddingVector({1, 0})};
    CHECK_ERROR_CODE(search(c, pos, EmbeddingVector({0, 1}), 3, 0.0), ErrorCode::EmptyCollection);
}

TEST_CASE("ties break by id") {
    Collection c("c", DocumentKind::adapter, 2);
    std::vector<double> v{1, 0};
    for (auto id : {"zeta", "alpha", "mid"}) c.add(doc(id), quantize(v));
    std::vector<EmbeddingVector> pos{EmbeddingVector({1, 0})};
    auto hits = search(c, pos, EmbeddingVector({0, 1}), 3, 0.5);
    REQUIRE(hits.size() == 3);
    CHECK(hits[0].record.id == "alpha");
    CHECK(hits[1].record.id == "mid");
    CHECK(hits[2].record.id == "zeta");
}

TEST_CASE("passing hits are preferred over the top-k overall") {
    Collection c("c", DocumentKind::adapter, 2);
    std::vector<double> good{1, 0}, bad{0, 1};
    c.add(doc("good"), quantize(good));
    c.add(doc("bad"), quantize(bad));
    std::vector<EmbeddingVector> pos{EmbeddingVector({1, 0})};
    auto hits = search(c, pos, EmbeddingVector({0, 1}), 2, 0.5);
    REQUIRE(hits.size() == 1);
    CHECK(hits[0].record.id == "good");
    auto none = search(c, pos, EmbeddingVector({0, 1}), 2, 5.0);
    CHECK(none.size() == 2);
}

TEST_CASE("search matches a full-precision oracle") {
    std::mt19937_64 rng(2024);
    const std::size_t dim = 64;
    for (int trial = 0; trial < 5; ++trial) {
        Collection c("c", DocumentKind::adapter, dim);
        std::vector<std::pair<std::string, std::vector<double>>> docs;
        for (int i = 0; i < 200; ++i) {
            auto v = random_vector(rng, dim);
            char id[16];
            std::snprintf(id, sizeof id, "d%03d", i);
            c.add(doc(id), quantize(v));
            // the oracle sees the stored (dequantized) vector; quantization error is checked separately
            docs.emplace_back(id, quantize(v).dequantize());
        }
        std::vector<EmbeddingVector> pos;
        for (std::size_t p = 0; p < 1 + rng() % 4; ++p) pos.emplace_back(random_vector(rng, dim));
        EmbeddingVector neg(random_vector(rng, dim));
        auto oracle = oracle_rank(docs, pos, neg);
        for (std::size_t k = 1; k <= 20; ++k) {
            auto hits = search(c, pos, neg, k, 1e9);
            REQUIRE(hits.size() == k);
            for (std::size_t i = 0; i < k; ++i) {
                CHECK(hits[i].record.id == oracle[i].id);
                CHECK(std::abs(hits[i].context - oracle[i].context) <= 1e-9);
            }
        }
    }
}

TEST_CASE("property: reconstruction error within half a step") {
    std::mt19937_64 rng(5);
    for (int i = 0; i < 1000; ++i) {
        double mag = std::pow(10.0, static_cast<double>(rng() % 7) - 3);
        auto v = random_vector(rng, 1 + rng() % 96, -mag, mag);
        auto q = quantize(v);
        auto back = q.dequantize();
        for (std::size_t j = 0; j < v.size(); ++j) REQUIRE(std::abs(back[j] - v[j]) <= q.scale() / 2 * (1 + 1e-12));
    }
}

TEST_CASE("property: scoring is invariant to positive document scaling") {
    std::mt19937_64 rng(6);
    for (int i = 0; i < 100; ++i) {
        auto d = random_vector(rng, 16);
        std::vector<EmbeddingVector> pos{EmbeddingVector(random_vector(rng, 16)), EmbeddingVector(random_vector(rng, 16))};
        EmbeddingVector neg(random_vector(rng, 16));
        auto scaled = d;
        for (auto& x : scaled) x *= 3.7;
        auto a = triplet_context(d, pos, neg), b = triplet_context(scaled, pos, neg);
        CHECK(a.context == doctest::Approx(b.context));
        CHECK(a.margin_sum == doctest::Approx(b.margin_sum));
        CHECK(a.context <= 0);
    }
}

TEST_CASE("snapshot round trip and size bound") {
    std::mt19937_64 rng(8);
    Collection c("ignored", DocumentKind::checkpoint, 24);
    for (int i = 0; i < 50; ++i) {
        auto r = doc("ck" + std::to_string(i), DocumentKind::checkpoint);
        if (i % 3 == 0) r.flags.insert("blacklisted");
        if (i % 2 == 0) r.description = "long text " + std::to_string(i);
        c.add(r, quantize(random_vector(rng, 24)));
    }
    auto bytes = serialize_snapshot(c);
    CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "MNTA");
    auto back = deserialize_snapshot(bytes, "ignored");
    CHECK(back == c);

    TempDir dir;
    save_snapshot(c, dir / "checkpoints.mnta");
    auto loaded = load_snapshot(dir / "checkpoints.mnta");
    CHECK(loaded.name() == "checkpoints");
    CHECK(loaded.entries() == c.entries());

    // Vector payload: N*(d + 16) plus the fixed header; record metadata is counted with the header.
    std::size_t metadata = 0;
    for (const auto& e : c.entries()) {
        const auto& r = e.record;
        metadata += 4 + r.id.size() + 4 + 4 + r.base_model.size() + 4 + r.exemplar_prompt.size() + 4 +
                    r.display_name.size() + 1 + (r.description ? 4 + r.description->size() : 0) + 4;
        for (const auto& f : r.flags) metadata += 4 + f.size();
    }
    CHECK(bytes.size() <= c.size() * (c.dimension() + 16) + kSnapshotHeaderBytes + metadata);
}

TEST_CASE("snapshot corruption is detected") {
    Collection c("c", DocumentKind::adapter, 4);
    std::vector<double> v{1, 2, 3, 4};
    c.add(doc("a"), quantize(v));
    auto bytes = serialize_snapshot(c);
    for (std::size_t cut : {std::size_t{0}, std::size_t{3}, kSnapshotHeaderBytes, bytes.size() - 1}) {
        std::vector<std::uint8_t> part(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
        CHECK_ERROR_CODE(deserialize_snapshot(part, "c"), ErrorCode::CorruptSnapshot);
    }
    auto wrong_magic = bytes;
    wrong_magic[0] = 'X';
    CHECK_ERROR_CODE(deserialize_snapshot(wrong_magic, "c"), ErrorCode::CorruptSnapshot);
    auto future = bytes;
    future[4] = 9;
    CHECK_ERROR_CODE(deserialize_snapshot(future, "c"), ErrorCode::VersionMismatch);
    auto trailing = bytes;
    trailing.push_back(0);
    CHECK_ERROR_CODE(deserialize_snapshot(trailing, "c"), ErrorCode::CorruptSnapshot);
    CHECK_ERROR_CODE(load_snapshot("/nonexistent/x.mnta"), ErrorCode::UnreadableFile);
}

}
