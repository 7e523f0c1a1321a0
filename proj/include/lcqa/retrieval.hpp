#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "lcqa/chunking.hpp"

namespace lcqa::services {
class SentenceEmbedder;
class TokenEmbedder;
}  // namespace lcqa::services

namespace lcqa::retrieval {

struct Bm25Params {
    double k1 = 1.2;  // term-frequency saturation
    double b = 0.75;  // document-length normalization
};

struct FusionParams {
    double k_rrf = 60.0;          // reciprocal-rank-fusion smoothing constant
    int candidate_multiplier = 2; // each retriever contributes multiplier * final_k candidates
};

struct ScoredEntry {
    std::string chunk_id;
    double score = 0.0;
};

/// One retriever's candidate ordering. Entries are strictly ordered by
/// descending score with ties broken by ascending chunk_id; ranks are the
/// 1-based positions.
struct RankedList {
    std::string retriever_id;
    std::vector<ScoredEntry> entries;
};

/// Descending score, ties ascending chunk_id.
void sort_entries(std::vector<ScoredEntry>& entries);

/// Inverted index over one patient's chunks with BM25-style scoring:
/// per-term contribution idf * tf*(k1+1) / (tf + k1*(1-b+b*|d|/avgdl)),
/// idf = ln(1 + (N - df + 0.5)/(df + 0.5)). Analysis is lowercase
/// alphanumeric splitting with numerals kept, no stemming or stopwords.
class SparseIndex {
public:
    SparseIndex(const std::vector<chunking::Chunk>& chunks, Bm25Params params);

    RankedList score(const std::string& query, int top_k) const;

    double avgdl() const { return avgdl_; }
    std::size_t n_docs() const { return doc_lengths_.size(); }
    const Bm25Params& params() const { return params_; }

    /// Term -> (doc index, term frequency); exposed for verification.
    const std::map<std::string, std::vector<std::pair<std::size_t, int>>>& postings() const { return postings_; }
    const std::vector<long long>& doc_lengths() const { return doc_lengths_; }
    const std::vector<std::string>& chunk_ids() const { return chunk_ids_; }

private:
    Bm25Params params_;
    std::map<std::string, std::vector<std::pair<std::size_t, int>>> postings_;
    std::vector<long long> doc_lengths_;
    std::vector<std::string> chunk_ids_;
    double avgdl_ = 0.0;
};

/// Sentence embedding with a cached Euclidean norm.
struct Embedding {
    std::vector<double> values;
    std::string model_id;
    double norm = 0.0;

    static Embedding make(std::vector<double> values, std::string model_id);
};

/// Per-token embedding rows for late-interaction scoring.
struct TokenEmbeddingMatrix {
    std::vector<std::vector<double>> rows;
    std::string model_id;
};

double cosine(const Embedding& a, const Embedding& b);

/// Cosine ranking of chunk embeddings against the query embedding.
/// Zero-norm vectors are excluded with a warning.
RankedList score_dense(const Embedding& query, const std::vector<std::pair<std::string, Embedding>>& chunks,
                       int top_k);

/// Reciprocal Rank Fusion: score(d) = sum over lists of 1/(k_rrf + rank(d)),
/// chunks absent from a list contribute nothing for it.
RankedList fuse_rrf(const std::vector<RankedList>& lists, const FusionParams& params, int top_k);

/// Late-interaction (MaxSim) score: sum over query tokens of the maximum
/// inner product against any document token. Candidates with no token rows
/// are excluded with a warning.
RankedList rerank_maxsim(const TokenEmbeddingMatrix& query_tokens,
                         const std::vector<std::pair<std::string, TokenEmbeddingMatrix>>& candidates, int top_k);

/// Stage observability for tests and debugging.
struct RetrievalTrace {
    std::size_t sparse_candidates = 0;
    std::size_t dense_candidates = 0;
    std::size_t fused_candidates = 0;
    std::size_t rerank_candidates = 0;
    int requested_per_retriever = 0;
};

/// Full hybrid pipeline over one patient's chunks: sparse and dense each
/// retrieve candidate_multiplier * final_k candidates, fused by RRF, the
/// fused head reranked by MaxSim, top final_k returned.
RankedList retrieve(const std::string& question, const std::vector<chunking::Chunk>& chunks, int final_k,
                    const FusionParams& fusion, const Bm25Params& bm25, services::SentenceEmbedder& embedder,
                    services::TokenEmbedder& token_embedder, RetrievalTrace* trace = nullptr);

}  // namespace lcqa::retrieval
