#include "lcqa/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_map>

#include "lcqa/errors.hpp"
#include "lcqa/log.hpp"
#include "lcqa/services.hpp"
#include "lcqa/text.hpp"

namespace lcqa::retrieval {

void sort_entries(std::vector<ScoredEntry>& entries) {
    std::sort(entries.begin(), entries.end(), [](const ScoredEntry& a, const ScoredEntry& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.chunk_id < b.chunk_id;
    });
}

namespace {

void truncate(std::vector<ScoredEntry>& entries, int top_k) {
    if (top_k >= 0 && entries.size() > static_cast<std::size_t>(top_k)) {
        entries.resize(static_cast<std::size_t>(top_k));
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// Sparse index
// ---------------------------------------------------------------------------

SparseIndex::SparseIndex(const std::vector<chunking::Chunk>& chunks, Bm25Params params) : params_(params) {
    if (chunks.empty()) throw ConfigError("cannot build a sparse index over an empty chunk set");
    if (params_.k1 <= 0.0) throw ConfigError("bm25 k1 must be > 0");
    if (params_.b < 0.0 || params_.b > 1.0) throw ConfigError("bm25 b must be in [0,1]");

    chunk_ids_.reserve(chunks.size());
    doc_lengths_.reserve(chunks.size());
    long long total_len = 0;
    for (std::size_t i = 0; i < chunks.size(); ++i) {
        const auto terms = util::lex_terms(chunks[i].text);
        chunk_ids_.push_back(chunks[i].chunk_id);
        doc_lengths_.push_back(static_cast<long long>(terms.size()));
        total_len += static_cast<long long>(terms.size());
        std::unordered_map<std::string, int> tf;
        for (const auto& t : terms) ++tf[t];
        for (const auto& [term, freq] : tf) postings_[term].push_back({i, freq});
    }
    avgdl_ = static_cast<double>(total_len) / static_cast<double>(chunks.size());
}

RankedList SparseIndex::score(const std::string& query, int top_k) const {
    RankedList out;
    out.retriever_id = "sparse";
    const auto q_terms = util::lex_terms(query);
    if (q_terms.empty()) {
        log::warn("sparse retriever: query is empty after analysis");
        return out;
    }

    const double n = static_cast<double>(n_docs());
    std::unordered_map<std::size_t, double> scores;
    for (const auto& term : q_terms) {
        auto it = postings_.find(term);
        if (it == postings_.end()) continue;
        const double df = static_cast<double>(it->second.size());
        const double idf = std::log(1.0 + (n - df + 0.5) / (df + 0.5));
        for (const auto& [doc, freq] : it->second) {
            const double f = static_cast<double>(freq);
            const double dl = static_cast<double>(doc_lengths_[doc]);
            const double denom = f + params_.k1 * (1.0 - params_.b + params_.b * dl / (avgdl_ > 0.0 ? avgdl_ : 1.0));
            scores[doc] += idf * f * (params_.k1 + 1.0) / denom;
        }
    }

    out.entries.reserve(scores.size());
    for (const auto& [doc, score] : scores) out.entries.push_back({chunk_ids_[doc], score});
    sort_entries(out.entries);
    truncate(out.entries, top_k);
    return out;
}

// ---------------------------------------------------------------------------
// Dense scoring
// ---------------------------------------------------------------------------

Embedding Embedding::make(std::vector<double> values, std::string model_id) {
    Embedding e;
    double sum = 0.0;
    for (double v : values) sum += v * v;
    e.norm = std::sqrt(sum);
    e.values = std::move(values);
    e.model_id = std::move(model_id);
    return e;
}

double cosine(const Embedding& a, const Embedding& b) {
    if (a.values.size() != b.values.size()) {
        throw ConfigError("embedding dimension mismatch: " + std::to_string(a.values.size()) + " vs " +
                          std::to_string(b.values.size()));
    }
    double dot = 0.0;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        dot += static_cast<double>(a.values[i]) * static_cast<double>(b.values[i]);
    }
    return dot / (a.norm * b.norm);
}

RankedList score_dense(const Embedding& query, const std::vector<std::pair<std::string, Embedding>>& chunks,
                       int top_k) {
    RankedList out;
    out.retriever_id = "dense";
    if (query.norm == 0.0) {
        log::warn("dense retriever: zero-norm query embedding");
        return out;
    }
    out.entries.reserve(chunks.size());
    for (const auto& [id, emb] : chunks) {
        if (emb.norm == 0.0) {
            log::warn("dense retriever: zero-norm embedding for chunk " + id + ", excluded");
            continue;
        }
        out.entries.push_back({id, cosine(query, emb)});
    }
    sort_entries(out.entries);
    truncate(out.entries, top_k);
    return out;
}

// ---------------------------------------------------------------------------
// Reciprocal Rank Fusion
// ---------------------------------------------------------------------------

RankedList fuse_rrf(const std::vector<RankedList>& lists, const FusionParams& params, int top_k) {
    if (lists.empty()) throw ConfigError("fuse_rrf needs at least one input list");
    if (params.k_rrf <= 0.0) throw ConfigError("k_rrf must be > 0");

    std::map<std::string, std::vector<double>> contributions;
    for (const auto& list : lists) {
        for (std::size_t i = 0; i < list.entries.size(); ++i) {
            const double rank = static_cast<double>(i + 1);
            contributions[list.entries[i].chunk_id].push_back(1.0 / (params.k_rrf + rank));
        }
    }

    RankedList out;
    out.retriever_id = "rrf";
    out.entries.reserve(contributions.size());
    for (auto& [id, terms] : contributions) {
        // Summation in sorted order makes the fused score independent of the
        // order the input lists were supplied in, bit for bit.
        std::sort(terms.begin(), terms.end());
        double score = 0.0;
        for (double t : terms) score += t;
        out.entries.push_back({id, score});
    }
    sort_entries(out.entries);
    truncate(out.entries, top_k);
    return out;
}

// ---------------------------------------------------------------------------
// Late-interaction reranking
// ---------------------------------------------------------------------------

namespace {

double maxsim_score(const TokenEmbeddingMatrix& query, const TokenEmbeddingMatrix& doc) {
    double total = 0.0;
    for (const auto& q : query.rows) {
        double best = -std::numeric_limits<double>::infinity();
        for (const auto& d : doc.rows) {
            if (d.size() != q.size()) {
                throw ConfigError("token embedding dimension mismatch: " + std::to_string(q.size()) + " vs " +
                                  std::to_string(d.size()));
            }
            double dot = 0.0;
            for (std::size_t i = 0; i < q.size(); ++i) dot += static_cast<double>(q[i]) * static_cast<double>(d[i]);
            best = std::max(best, dot);
        }
        total += best;
    }
    return total;
}

}  // namespace

RankedList rerank_maxsim(const TokenEmbeddingMatrix& query_tokens,
                         const std::vector<std::pair<std::string, TokenEmbeddingMatrix>>& candidates, int top_k) {
    RankedList out;
    out.retriever_id = "maxsim";
    if (query_tokens.rows.empty()) {
        log::warn("maxsim reranker: query has no token embeddings");
        return out;
    }
    out.entries.reserve(candidates.size());
    for (const auto& [id, matrix] : candidates) {
        if (matrix.rows.empty()) {
            log::warn("maxsim reranker: candidate " + id + " has no token embeddings, excluded");
            continue;
        }
        out.entries.push_back({id, maxsim_score(query_tokens, matrix)});
    }
    sort_entries(out.entries);
    truncate(out.entries, top_k);
    return out;
}

// ---------------------------------------------------------------------------
// Full pipeline
// ---------------------------------------------------------------------------

RankedList retrieve(const std::string& question, const std::vector<chunking::Chunk>& chunks, int final_k,
                    const FusionParams& fusion, const Bm25Params& bm25, services::SentenceEmbedder& embedder,
                    services::TokenEmbedder& token_embedder, RetrievalTrace* trace) {
    if (final_k < 1) throw ConfigError("final_k must be >= 1");
    if (fusion.candidate_multiplier < 1) throw ConfigError("candidate_multiplier must be >= 1");

    RankedList out;
    out.retriever_id = "hybrid";
    if (chunks.empty()) return out;

    const int per_retriever = fusion.candidate_multiplier * final_k;
    if (trace) trace->requested_per_retriever = per_retriever;

    SparseIndex sparse(chunks, bm25);
    RankedList sparse_list = sparse.score(question, per_retriever);

    std::vector<std::string> texts;
    texts.reserve(chunks.size());
    for (const auto& c : chunks) texts.push_back(c.text);
    auto chunk_vecs = embedder.embed(services::EmbedKind::document, texts);
    auto query_vec = embedder.embed(services::EmbedKind::query, {question});

    std::vector<std::pair<std::string, Embedding>> indexed;
    indexed.reserve(chunks.size());
    for (std::size_t i = 0; i < chunks.size(); ++i) indexed.push_back({chunks[i].chunk_id, std::move(chunk_vecs[i])});
    RankedList dense_list = score_dense(query_vec.at(0), indexed, per_retriever);

    if (trace) {
        trace->sparse_candidates = sparse_list.entries.size();
        trace->dense_candidates = dense_list.entries.size();
    }

    RankedList fused = fuse_rrf({sparse_list, dense_list}, fusion, per_retriever);
    if (trace) trace->fused_candidates = fused.entries.size();

    std::unordered_map<std::string, const chunking::Chunk*> by_id;
    for (const auto& c : chunks) by_id[c.chunk_id] = &c;

    if (!fused.entries.empty()) {
        // Rerank the fused head on chunk text alone; fusion scores are dropped.
        std::vector<std::string> batch;
        batch.reserve(fused.entries.size() + 1);
        batch.push_back(question);
        for (const auto& e : fused.entries) batch.push_back(by_id.at(e.chunk_id)->text);
        auto matrices = token_embedder.embed_tokens(batch);

        std::vector<std::pair<std::string, TokenEmbeddingMatrix>> candidates;
        candidates.reserve(fused.entries.size());
        for (std::size_t i = 0; i < fused.entries.size(); ++i) {
            candidates.push_back({fused.entries[i].chunk_id, std::move(matrices[i + 1])});
        }
        if (trace) trace->rerank_candidates = candidates.size();

        out = rerank_maxsim(matrices[0], candidates, final_k);
        out.retriever_id = "hybrid";
    }

    // Never drop below availability: backfill with unranked chunks in
    // ascending chunk_id order until min(final_k, available) is reached.
    const std::size_t target = std::min<std::size_t>(static_cast<std::size_t>(final_k), chunks.size());
    if (out.entries.size() < target) {
        std::vector<std::string> missing;
        std::unordered_map<std::string, bool> present;
        for (const auto& e : out.entries) present[e.chunk_id] = true;
        for (const auto& c : chunks) {
            if (!present.count(c.chunk_id)) missing.push_back(c.chunk_id);
        }
        std::sort(missing.begin(), missing.end());
        for (const auto& id : missing) {
            if (out.entries.size() >= target) break;
            out.entries.push_back({id, 0.0});
        }
    }
    return out;
}

}  // namespace lcqa::retrieval
