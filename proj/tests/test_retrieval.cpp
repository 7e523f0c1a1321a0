#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "lcqa/errors.hpp"
#include "lcqa/retrieval.hpp"
#include "lcqa/services.hpp"
#include "oracles.hpp"

using namespace lcqa;
using retrieval::RankedList;

namespace {

chunking::Chunk make_chunk(const std::string& id, const std::string& text) {
    chunking::Chunk c;
    c.chunk_id = id;
    c.parent_note_id = id + "-parent";
    c.patient_id = "p";
    c.text = text;
    return c;
}

retrieval::Embedding emb(std::vector<double> v) {
    return retrieval::Embedding::make(std::move(v), "test");
}

}  // namespace

// ---------------------------------------------------------------------------
// Sparse index
// ---------------------------------------------------------------------------

TEST_CASE("postings of a single chunk count term frequencies directly") {
    auto index = retrieval::SparseIndex({make_chunk("c", "fever fever cough")}, {});
    CHECK(index.avgdl() == doctest::Approx(3.0));
    CHECK(index.n_docs() == 1);
    REQUIRE(index.postings().count("fever"));
    REQUIRE(index.postings().count("cough"));
    CHECK(index.postings().at("fever")[0].second == 2);
    CHECK(index.postings().at("cough")[0].second == 1);
}

TEST_CASE("avgdl of equal-length chunks equals that length") {
    auto index = retrieval::SparseIndex({make_chunk("a", "one two three"), make_chunk("b", "four five six")}, {});
    CHECK(index.avgdl() == doctest::Approx(3.0));
}

TEST_CASE("an empty chunk set cannot be indexed") {
    CHECK_THROWS_AS(retrieval::SparseIndex({}, {}), ConfigError);
}

TEST_CASE("postings over a random fixture equal a brute-force recount") {
    std::mt19937_64 rng(5);
    auto chunks = oracles::random_chunks(rng, 20);
    auto index = retrieval::SparseIndex(chunks, {});

    // Recount every (term, chunk) pair by scanning chunk texts.
    std::map<std::string, std::map<std::string, int>> expected;
    for (const auto& c : chunks) {
        for (const auto& t : util::lex_terms(c.text)) ++expected[t][c.chunk_id];
    }
    REQUIRE(index.postings().size() == expected.size());
    for (const auto& [term, posting] : index.postings()) {
        REQUIRE(expected.count(term));
        REQUIRE(posting.size() == expected[term].size());
        for (const auto& [doc, tf] : posting) {
            CHECK(expected[term][index.chunk_ids()[doc]] == tf);
        }
    }
}

TEST_CASE("a query with no corpus terms scores nothing") {
    auto index = retrieval::SparseIndex({make_chunk("a", "fever cough")}, {});
    CHECK(index.score("zebra quantum", 10).entries.empty());
    CHECK(index.score("", 10).entries.empty());
}

TEST_CASE("with b = 0 scores ignore document length") {
    retrieval::Bm25Params params{1.2, 0.0};
    std::string filler;
    for (int i = 0; i < 30; ++i) filler += " pad" + std::to_string(i);
    auto index =
        retrieval::SparseIndex({make_chunk("short", "fever"), make_chunk("long", "fever" + filler)}, params);
    auto list = index.score("fever", 10);
    REQUIRE(list.entries.size() == 2);
    CHECK(list.entries[0].score == doctest::Approx(list.entries[1].score).epsilon(1e-12));
}

TEST_CASE("sparse scores match the direct formula evaluation to 1e-9") {
    std::mt19937_64 rng(99);
    retrieval::Bm25Params params{1.2, 0.75};
    for (int trial = 0; trial < 30; ++trial) {
        auto chunks = oracles::random_chunks(rng, 10);
        const std::string query = oracles::random_words(rng, 4);
        auto index = retrieval::SparseIndex(chunks, params);
        auto list = index.score(query, static_cast<int>(chunks.size()));
        auto expected = oracles::bm25_oracle(chunks, query, params.k1, params.b);
        REQUIRE(list.entries.size() == expected.size());
        for (const auto& e : list.entries) {
            REQUIRE(expected.count(e.chunk_id));
            CHECK(e.score == doctest::Approx(expected[e.chunk_id]).epsilon(1e-9));
        }
    }
}

// ---------------------------------------------------------------------------
// Dense scoring
// ---------------------------------------------------------------------------

TEST_CASE("cosine of identical vectors is 1, orthogonal is 0") {
    auto list = retrieval::score_dense(emb({1, 0, 0}),
                                       {{"same", emb({1, 0, 0})}, {"orth", emb({0, 1, 0})}}, 10);
    REQUIRE(list.entries.size() == 2);
    CHECK(list.entries[0].chunk_id == "same");
    CHECK(list.entries[0].score == doctest::Approx(1.0));
    CHECK(list.entries[1].score == doctest::Approx(0.0));
}

TEST_CASE("zero-norm chunk embeddings are excluded") {
    auto list = retrieval::score_dense(emb({1, 0}), {{"zero", emb({0, 0})}, {"ok", emb({1, 1})}}, 10);
    REQUIRE(list.entries.size() == 1);
    CHECK(list.entries[0].chunk_id == "ok");
}

TEST_CASE("dense ranking equals the brute-force cosine sort") {
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> val(-1.0, 1.0);
    for (int trial = 0; trial < 40; ++trial) {
        const int dim = 6;
        auto rand_vec = [&] {
            std::vector<double> v;
            for (int i = 0; i < dim; ++i) v.push_back(val(rng));
            return v;
        };
        const auto query = rand_vec();
        std::vector<std::pair<std::string, std::vector<double>>> docs;
        std::vector<std::pair<std::string, retrieval::Embedding>> indexed;
        for (int i = 0; i < 5; ++i) {
            auto v = rand_vec();
            docs.push_back({"d" + std::to_string(i), v});
            indexed.push_back({"d" + std::to_string(i), emb(v)});
        }
        auto list = retrieval::score_dense(emb(query), indexed, 5);
        auto expected = oracles::cosine_oracle(query, docs);
        REQUIRE(list.entries.size() == expected.size());
        for (std::size_t i = 0; i < expected.size(); ++i) {
            CHECK(list.entries[i].chunk_id == expected[i].first);
            CHECK(list.entries[i].score == doctest::Approx(expected[i].second).epsilon(1e-9));
        }
    }
}

TEST_CASE("cosine scores are scale invariant") {
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> val(-1.0, 1.0);
    std::uniform_real_distribution<double> scale(0.1, 50.0);
    for (int trial = 0; trial < 60; ++trial) {
        std::vector<double> q, d;
        for (int i = 0; i < 8; ++i) {
            q.push_back(val(rng));
            d.push_back(val(rng));
        }
        const double c = scale(rng);
        std::vector<double> d_scaled = d;
        for (auto& x : d_scaled) x *= c;
        const double base = retrieval::cosine(emb(q), emb(d));
        const double scaled = retrieval::cosine(emb(q), emb(d_scaled));
        CHECK(scaled == doctest::Approx(base).epsilon(1e-9));
    }
}

// ---------------------------------------------------------------------------
// Reciprocal rank fusion
// ---------------------------------------------------------------------------

namespace {

RankedList list_of(const std::string& id, std::vector<std::string> ids) {
    RankedList l;
    l.retriever_id = id;
    double score = static_cast<double>(ids.size());
    for (auto& cid : ids) l.entries.push_back({std::move(cid), score--});
    return l;
}

}  // namespace

TEST_CASE("fusing one list preserves its order") {
    auto fused = retrieval::fuse_rrf({list_of("s", {"x", "y", "z"})}, {}, 10);
    REQUIRE(fused.entries.size() == 3);
    CHECK(fused.entries[0].chunk_id == "x");
    CHECK(fused.entries[1].chunk_id == "y");
    CHECK(fused.entries[2].chunk_id == "z");
}

TEST_CASE("a chunk ranked first in both lists scores exactly 2/61") {
    auto fused = retrieval::fuse_rrf({list_of("a", {"top", "mid"}), list_of("b", {"top", "mid"})},
                                     retrieval::FusionParams{60.0, 2}, 10);
    REQUIRE(!fused.entries.empty());
    CHECK(fused.entries[0].chunk_id == "top");
    CHECK(fused.entries[0].score == 2.0 / 61.0);  // exact
}

TEST_CASE("the three-chunk A/B fixture fuses to [d2, d1, d3]") {
    auto fused = retrieval::fuse_rrf({list_of("A", {"d1", "d2", "d3"}), list_of("B", {"d2", "d3", "d1"})},
                                     retrieval::FusionParams{60.0, 2}, 10);
    REQUIRE(fused.entries.size() == 3);
    CHECK(fused.entries[0].chunk_id == "d2");
    CHECK(fused.entries[1].chunk_id == "d1");
    CHECK(fused.entries[2].chunk_id == "d3");

    // Cross-check every score against the direct summation.
    auto expected = oracles::rrf_oracle({list_of("A", {"d1", "d2", "d3"}), list_of("B", {"d2", "d3", "d1"})}, 60.0);
    for (const auto& e : fused.entries) CHECK(e.score == doctest::Approx(expected[e.chunk_id]).epsilon(1e-12));
}

TEST_CASE("fusion is invariant under permutation of the input lists") {
    std::mt19937_64 rng(13);
    std::uniform_int_distribution<int> n_lists(1, 4), n_ids(0, 12);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<RankedList> lists;
        const int count = n_lists(rng);
        for (int l = 0; l < count; ++l) {
            std::vector<std::string> ids;
            for (int i = 0; i < n_ids(rng); ++i) ids.push_back("c" + std::to_string(i));
            std::shuffle(ids.begin(), ids.end(), rng);
            lists.push_back(list_of("r" + std::to_string(l), std::move(ids)));
        }
        auto base = retrieval::fuse_rrf(lists, {}, 50);
        std::shuffle(lists.begin(), lists.end(), rng);
        auto permuted = retrieval::fuse_rrf(lists, {}, 50);
        REQUIRE(base.entries.size() == permuted.entries.size());
        for (std::size_t i = 0; i < base.entries.size(); ++i) {
            CHECK(base.entries[i].chunk_id == permuted.entries[i].chunk_id);
            CHECK(base.entries[i].score == permuted.entries[i].score);
        }
    }
}

// ---------------------------------------------------------------------------
// MaxSim reranking
// ---------------------------------------------------------------------------

TEST_CASE("every query token matched by a unit document token scores |Q|") {
    retrieval::TokenEmbeddingMatrix query;
    query.rows = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
    retrieval::TokenEmbeddingMatrix doc;
    doc.rows = {{0, 0, 1}, {1, 0, 0}, {0, 1, 0}};
    auto list = retrieval::rerank_maxsim(query, {{"d", doc}}, 5);
    REQUIRE(list.entries.size() == 1);
    CHECK(list.entries[0].score == 3.0);  // exact
}

TEST_CASE("single query token takes the max over document tokens") {
    retrieval::TokenEmbeddingMatrix query;
    query.rows = {{1, 0}};
    retrieval::TokenEmbeddingMatrix doc;
    doc.rows = {{1, 0}, {0, 1}};
    auto list = retrieval::rerank_maxsim(query, {{"d", doc}}, 5);
    REQUIRE(list.entries.size() == 1);
    CHECK(list.entries[0].score == doctest::Approx(1.0));
}

TEST_CASE("candidates without token rows are excluded") {
    retrieval::TokenEmbeddingMatrix query;
    query.rows = {{1.0}};
    retrieval::TokenEmbeddingMatrix empty;
    retrieval::TokenEmbeddingMatrix ok;
    ok.rows = {{0.5}};
    auto list = retrieval::rerank_maxsim(query, {{"empty", empty}, {"ok", ok}}, 5);
    REQUIRE(list.entries.size() == 1);
    CHECK(list.entries[0].chunk_id == "ok");
}

TEST_CASE("maxsim equals the exhaustive double loop on random instances") {
    std::mt19937_64 rng(4242);
    std::uniform_int_distribution<int> q_rows(1, 8), d_rows(1, 64), dims(1, 32);
    for (int trial = 0; trial < 50; ++trial) {
        const int dim = dims(rng);
        auto query = oracles::random_matrix(rng, q_rows(rng), dim);
        std::vector<std::pair<std::string, retrieval::TokenEmbeddingMatrix>> candidates;
        for (int c = 0; c < 4; ++c) {
            candidates.push_back({"c" + std::to_string(c), oracles::random_matrix(rng, d_rows(rng), dim)});
        }
        auto list = retrieval::rerank_maxsim(query, candidates, 10);
        REQUIRE(list.entries.size() == candidates.size());
        for (const auto& e : list.entries) {
            for (const auto& [id, m] : candidates) {
                if (id == e.chunk_id) CHECK(e.score == doctest::Approx(oracles::maxsim_oracle(query, m)).epsilon(1e-9));
            }
        }
    }
}

TEST_CASE("appending a document token never lowers a maxsim score") {
    std::mt19937_64 rng(555);
    for (int trial = 0; trial < 80; ++trial) {
        auto query = oracles::random_matrix(rng, 4, 8);
        auto doc = oracles::random_matrix(rng, 6, 8);
        const double base = oracles::maxsim_oracle(query, doc);
        auto extended = doc;
        extended.rows.push_back(oracles::random_matrix(rng, 1, 8).rows[0]);
        auto list = retrieval::rerank_maxsim(query, {{"d", extended}}, 1);
        REQUIRE(list.entries.size() == 1);
        CHECK(list.entries[0].score >= base - 1e-12);
    }
}

// ---------------------------------------------------------------------------
// Full pipeline
// ---------------------------------------------------------------------------

TEST_CASE("retrieve returns every chunk when the corpus has exactly final_k") {
    std::mt19937_64 rng(8);
    auto chunks = oracles::random_chunks(rng, 5);
    services::OneHotSentenceEmbedder embedder;
    services::OneHotTokenEmbedder token_embedder;
    auto list = retrieval::retrieve("anything at all", chunks, 5, {}, {}, embedder, token_embedder);
    CHECK(list.entries.size() == 5);
    std::set<std::string> ids;
    for (const auto& e : list.entries) ids.insert(e.chunk_id);
    CHECK(ids.size() == 5);
}

TEST_CASE("each retriever contributes candidate_multiplier * final_k candidates") {
    std::mt19937_64 rng(9);
    // Every chunk shares a term with the query so the sparse list fills up.
    std::vector<chunking::Chunk> chunks;
    for (int i = 0; i < 30; ++i) {
        chunks.push_back(make_chunk("c" + std::to_string(100 + i),
                                    "fever " + oracles::random_words(rng, 10)));
    }
    services::OneHotSentenceEmbedder embedder;
    services::OneHotTokenEmbedder token_embedder;
    retrieval::RetrievalTrace trace;
    auto list = retrieval::retrieve("fever and cough", chunks, 5, {}, {}, embedder, token_embedder, &trace);
    CHECK(trace.requested_per_retriever == 10);
    CHECK(trace.sparse_candidates == 10);
    CHECK(trace.dense_candidates == 10);
    CHECK(list.entries.size() == 5);
}

TEST_CASE("a chunk uniquely containing all query terms ranks first") {
    std::mt19937_64 rng(10);
    std::vector<chunking::Chunk> chunks;
    for (int i = 0; i < 12; ++i) {
        chunks.push_back(make_chunk("c" + std::to_string(100 + i), oracles::random_words(rng, 12)));
    }
    chunks.push_back(make_chunk("c999", "unique sentinel phrase quetiapine overdose manifestation"));
    services::OneHotSentenceEmbedder embedder;
    services::OneHotTokenEmbedder token_embedder;
    auto list = retrieval::retrieve("quetiapine overdose manifestation", chunks, 3, {}, {}, embedder, token_embedder);
    REQUIRE(!list.entries.empty());
    CHECK(list.entries[0].chunk_id == "c999");
}

TEST_CASE("retrieve never returns duplicates and never exceeds final_k") {
    std::mt19937_64 rng(11);
    services::OneHotSentenceEmbedder embedder;
    services::OneHotTokenEmbedder token_embedder;
    for (int trial = 0; trial < 20; ++trial) {
        std::uniform_int_distribution<int> n(1, 25), k(1, 10);
        auto chunks = oracles::random_chunks(rng, n(rng));
        const int final_k = k(rng);
        auto list = retrieval::retrieve(oracles::random_words(rng, 5), chunks, final_k, {}, {}, embedder,
                                        token_embedder);
        CHECK(list.entries.size() == std::min<std::size_t>(chunks.size(), static_cast<std::size_t>(final_k)));
        std::set<std::string> ids;
        for (const auto& e : list.entries) ids.insert(e.chunk_id);
        CHECK(ids.size() == list.entries.size());
    }
}
