#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "lcqa/retrieval.hpp"

namespace lcqa::services {

enum class EmbedKind { query, document };

std::string to_string(EmbedKind k);

// ---------------------------------------------------------------------------
// Service interfaces
// ---------------------------------------------------------------------------

class SentenceEmbedder {
public:
    virtual ~SentenceEmbedder() = default;
    virtual std::vector<retrieval::Embedding> embed(EmbedKind kind, const std::vector<std::string>& texts) = 0;
    virtual const std::string& model_id() const = 0;
};

class TokenEmbedder {
public:
    virtual ~TokenEmbedder() = default;
    virtual std::vector<retrieval::TokenEmbeddingMatrix> embed_tokens(const std::vector<std::string>& texts) = 0;
    virtual const std::string& model_id() const = 0;
};

struct NliDistribution {
    double entail = 0.0;
    double neutral = 0.0;
    double contradict = 0.0;
};

class NliService {
public:
    virtual ~NliService() = default;
    virtual NliDistribution classify(const std::string& premise, const std::string& hypothesis) = 0;
};

struct GenerationRequest {
    std::string model_id;
    std::string system_text;
    std::string user_text;
    double temperature = 0.0;
    int max_tokens = 512;
};

struct GenerationResponse {
    std::string text;
    int prompt_tokens = 0;
    int completion_tokens = 0;
};

class GenerationService {
public:
    virtual ~GenerationService() = default;
    virtual GenerationResponse generate(const GenerationRequest& request) = 0;
};

/// Runs `fn` up to `max_attempts` times, backing off exponentially between
/// retryable ServiceError failures. Non-retryable errors propagate at once.
void with_retries(int max_attempts, int backoff_ms, const std::function<void()>& fn, int* attempts_out = nullptr);

// ---------------------------------------------------------------------------
// In-process stubs (deterministic, used by tests and stub-mode runs)
// ---------------------------------------------------------------------------

/// Order-free sentence embedder: one-hot per distinct lexical term, hashed
/// into a fixed dimension, summed and L2-normalized.
class OneHotSentenceEmbedder : public SentenceEmbedder {
public:
    explicit OneHotSentenceEmbedder(std::size_t dim = 384);
    std::vector<retrieval::Embedding> embed(EmbedKind kind, const std::vector<std::string>& texts) override;
    const std::string& model_id() const override { return model_id_; }

private:
    std::size_t dim_;
    std::string model_id_;
};

/// Exact one-hot per-token embedder: the batch's distinct terms define the
/// axes, every token row is the unit vector of its term. Deterministic per
/// batch; rows across one call share axes, which is what MaxSim and the
/// semantic-F1 metric need.
class OneHotTokenEmbedder : public TokenEmbedder {
public:
    OneHotTokenEmbedder();
    std::vector<retrieval::TokenEmbeddingMatrix> embed_tokens(const std::vector<std::string>& texts) override;
    const std::string& model_id() const override { return model_id_; }

private:
    std::string model_id_;
};

/// Fixed three-way distribution, for metric contract tests.
class FixedNli : public NliService {
public:
    explicit FixedNli(NliDistribution dist) : dist_(dist) {}
    NliDistribution classify(const std::string&, const std::string&) override { return dist_; }

private:
    NliDistribution dist_;
};

/// Deterministic heuristic: identical texts (whitespace-collapsed) entail
/// fully; otherwise the term-set Jaccard drives the distribution.
class MatchNli : public NliService {
public:
    NliDistribution classify(const std::string& premise, const std::string& hypothesis) override;
};

/// Returns the gold answer for the question found in the prompt.
class EchoGoldGeneration : public GenerationService {
public:
    explicit EchoGoldGeneration(std::map<std::string, std::string> gold_by_question);
    GenerationResponse generate(const GenerationRequest& request) override;

private:
    std::map<std::string, std::string> gold_by_question_;
};

class FixedGeneration : public GenerationService {
public:
    explicit FixedGeneration(std::string text) : text_(std::move(text)) {}
    GenerationResponse generate(const GenerationRequest&) override;

private:
    std::string text_;
};

/// Plays back a scripted sequence of responses / transient failures.
class ScriptedGeneration : public GenerationService {
public:
    struct Fail {
        std::string message = "transient failure";
    };
    using Step = std::variant<std::string, Fail>;

    explicit ScriptedGeneration(std::vector<Step> steps) : steps_(steps.begin(), steps.end()) {}
    GenerationResponse generate(const GenerationRequest&) override;
    std::size_t calls() const { return calls_; }

private:
    std::deque<Step> steps_;
    std::size_t calls_ = 0;
};

/// Extracts the text of the last "[[ ## question ## ]]" block of a prompt;
/// shared by stubs that key their behaviour on the question.
std::optional<std::string> question_from_prompt(const std::string& user_text);

// ---------------------------------------------------------------------------
// HTTP clients (plain JSON request/response over a configurable base address)
// ---------------------------------------------------------------------------

/// Caps concurrent in-flight service calls across clients sharing it.
class InFlightLimiter {
public:
    explicit InFlightLimiter(int max_in_flight);
    void acquire();
    void release();

    class Guard {
    public:
        explicit Guard(InFlightLimiter* limiter) : limiter_(limiter) {
            if (limiter_) limiter_->acquire();
        }
        ~Guard() {
            if (limiter_) limiter_->release();
        }
        Guard(const Guard&) = delete;
        Guard& operator=(const Guard&) = delete;

    private:
        InFlightLimiter* limiter_;
    };

private:
    struct Impl;
    std::shared_ptr<Impl> impl_;
};

struct HttpOptions {
    std::string base_url;   // e.g. "http://127.0.0.1:8231"
    int timeout_ms = 30000;
    int retries = 3;        // attempts per call
    int backoff_ms = 50;
    std::shared_ptr<InFlightLimiter> limiter;  // optional shared cap
};

/// POST /v1/embed {model_id, kind, texts[]} -> {vectors[][]}
class HttpSentenceEmbedder : public SentenceEmbedder {
public:
    HttpSentenceEmbedder(HttpOptions options, std::string model_id, std::size_t expect_dim = 0);
    std::vector<retrieval::Embedding> embed(EmbedKind kind, const std::vector<std::string>& texts) override;
    const std::string& model_id() const override { return model_id_; }

private:
    HttpOptions options_;
    std::string model_id_;
    std::size_t expect_dim_;
};

/// POST /v1/token_embed {model_id, texts[]} -> {token_vectors[][][]}
class HttpTokenEmbedder : public TokenEmbedder {
public:
    HttpTokenEmbedder(HttpOptions options, std::string model_id);
    std::vector<retrieval::TokenEmbeddingMatrix> embed_tokens(const std::vector<std::string>& texts) override;
    const std::string& model_id() const override { return model_id_; }

private:
    HttpOptions options_;
    std::string model_id_;
};

/// POST /v1/nli {premise, hypothesis} -> {entail, neutral, contradict}
class HttpNli : public NliService {
public:
    explicit HttpNli(HttpOptions options) : options_(std::move(options)) {}
    NliDistribution classify(const std::string& premise, const std::string& hypothesis) override;

private:
    HttpOptions options_;
};

/// POST /v1/generate {model_id, system_text, user_text, temperature,
/// max_tokens} -> {text, usage{prompt_tokens, completion_tokens}}
class HttpGeneration : public GenerationService {
public:
    explicit HttpGeneration(HttpOptions options) : options_(std::move(options)) {}
    GenerationResponse generate(const GenerationRequest& request) override;

private:
    HttpOptions options_;
};

// ---------------------------------------------------------------------------
// Caching
// ---------------------------------------------------------------------------

/// Content-addressed on-disk store: key -> payload string. Writes of
/// identical keys are idempotent; concurrent readers are safe.
class ResponseCache {
public:
    explicit ResponseCache(std::filesystem::path dir);
    std::optional<std::string> get(const std::string& key) const;
    void put(const std::string& key, const std::string& payload);

private:
    std::filesystem::path path_for(const std::string& key) const;
    std::filesystem::path dir_;
    mutable std::mutex mutex_;
};

/// Wraps any sentence embedder with a (model_id, kind, text digest) cache.
class CachedSentenceEmbedder : public SentenceEmbedder {
public:
    CachedSentenceEmbedder(std::shared_ptr<SentenceEmbedder> inner, std::shared_ptr<ResponseCache> cache);
    std::vector<retrieval::Embedding> embed(EmbedKind kind, const std::vector<std::string>& texts) override;
    const std::string& model_id() const override { return inner_->model_id(); }

private:
    std::shared_ptr<SentenceEmbedder> inner_;
    std::shared_ptr<ResponseCache> cache_;
};

/// Caches NLI distributions by (premise, hypothesis) digest.
class CachedNli : public NliService {
public:
    CachedNli(std::shared_ptr<NliService> inner, std::shared_ptr<ResponseCache> cache);
    NliDistribution classify(const std::string& premise, const std::string& hypothesis) override;

private:
    std::shared_ptr<NliService> inner_;
    std::shared_ptr<ResponseCache> cache_;
};

/// Caches generation responses (used for the judge) by request digest.
class CachedGeneration : public GenerationService {
public:
    CachedGeneration(std::shared_ptr<GenerationService> inner, std::shared_ptr<ResponseCache> cache);
    GenerationResponse generate(const GenerationRequest& request) override;

private:
    std::shared_ptr<GenerationService> inner_;
    std::shared_ptr<ResponseCache> cache_;
};

}  // namespace lcqa::services
