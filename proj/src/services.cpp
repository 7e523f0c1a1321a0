#include "lcqa/services.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <semaphore>
#include <set>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "lcqa/digest.hpp"
#include "lcqa/errors.hpp"
#include "lcqa/text.hpp"

namespace lcqa::services {

using nlohmann::json;

std::string to_string(EmbedKind k) {
    return k == EmbedKind::query ? "query" : "document";
}

void with_retries(int max_attempts, int backoff_ms, const std::function<void()>& fn, int* attempts_out) {
    int attempt = 0;
    int delay = backoff_ms;
    for (;;) {
        ++attempt;
        try {
            fn();
            if (attempts_out) *attempts_out = attempt;
            return;
        } catch (const ServiceError& e) {
            if (!e.retryable() || attempt >= max_attempts) {
                if (attempts_out) *attempts_out = attempt;
                throw;
            }
            std::this_thread::sleep_for(std::chrono::milliseconds(delay));
            delay *= 2;
        }
    }
}

// ---------------------------------------------------------------------------
// Stubs
// ---------------------------------------------------------------------------

namespace {

std::size_t fnv1a(const std::string& s) {
    std::size_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace

OneHotSentenceEmbedder::OneHotSentenceEmbedder(std::size_t dim)
    : dim_(dim), model_id_("stub-onehot-" + std::to_string(dim)) {
    if (dim_ == 0) throw ConfigError("embedding dimension must be positive");
}

std::vector<retrieval::Embedding> OneHotSentenceEmbedder::embed(EmbedKind, const std::vector<std::string>& texts) {
    std::vector<retrieval::Embedding> out;
    out.reserve(texts.size());
    for (const auto& text : texts) {
        std::vector<double> v(dim_, 0.0);
        std::set<std::string> distinct;
        for (auto& term : util::lex_terms(text)) distinct.insert(std::move(term));
        for (const auto& term : distinct) v[fnv1a(term) % dim_] += 1.0;
        double norm = 0.0;
        for (double x : v) norm += x * x;
        if (norm > 0.0) {
            const double inv = 1.0 / std::sqrt(norm);
            for (double& x : v) x *= inv;
        }
        out.push_back(retrieval::Embedding::make(std::move(v), model_id_));
    }
    return out;
}

OneHotTokenEmbedder::OneHotTokenEmbedder() : model_id_("stub-onehot-tokens") {}

std::vector<retrieval::TokenEmbeddingMatrix> OneHotTokenEmbedder::embed_tokens(const std::vector<std::string>& texts) {
    std::set<std::string> vocab;
    std::vector<std::vector<std::string>> all_terms;
    all_terms.reserve(texts.size());
    for (const auto& text : texts) {
        auto terms = util::lex_terms(text);
        for (const auto& t : terms) vocab.insert(t);
        all_terms.push_back(std::move(terms));
    }
    std::map<std::string, std::size_t> axis;
    std::size_t next = 0;
    for (const auto& t : vocab) axis[t] = next++;
    const std::size_t dim = std::max<std::size_t>(vocab.size(), 1);

    std::vector<retrieval::TokenEmbeddingMatrix> out;
    out.reserve(texts.size());
    for (const auto& terms : all_terms) {
        retrieval::TokenEmbeddingMatrix m;
        m.model_id = model_id_;
        m.rows.reserve(terms.size());
        for (const auto& t : terms) {
            std::vector<double> row(dim, 0.0);
            row[axis[t]] = 1.0;
            m.rows.push_back(std::move(row));
        }
        out.push_back(std::move(m));
    }
    return out;
}

NliDistribution MatchNli::classify(const std::string& premise, const std::string& hypothesis) {
    if (util::collapse_whitespace(premise) == util::collapse_whitespace(hypothesis)) {
        return {1.0, 0.0, 0.0};
    }
    std::set<std::string> p, h;
    for (auto& t : util::lex_terms(premise)) p.insert(std::move(t));
    for (auto& t : util::lex_terms(hypothesis)) h.insert(std::move(t));
    std::size_t inter = 0;
    for (const auto& t : h) inter += p.count(t);
    const std::size_t uni = p.size() + h.size() - inter;
    const double jaccard = uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
    NliDistribution d;
    d.entail = jaccard;
    d.neutral = (1.0 - jaccard) * 0.6;
    d.contradict = (1.0 - jaccard) * 0.4;
    return d;
}

std::optional<std::string> question_from_prompt(const std::string& user_text) {
    static const std::string marker = "[[ ## question ## ]]";
    const auto pos = user_text.rfind(marker);
    if (pos == std::string::npos) return std::nullopt;
    auto start = pos + marker.size();
    auto stop = user_text.find("[[ ##", start);
    if (stop == std::string::npos) stop = user_text.size();
    return util::trim(user_text.substr(start, stop - start));
}

EchoGoldGeneration::EchoGoldGeneration(std::map<std::string, std::string> gold_by_question)
    : gold_by_question_(std::move(gold_by_question)) {}

GenerationResponse EchoGoldGeneration::generate(const GenerationRequest& request) {
    GenerationResponse resp;
    auto question = question_from_prompt(request.user_text);
    if (question) {
        auto it = gold_by_question_.find(*question);
        if (it != gold_by_question_.end()) resp.text = it->second;
    }
    if (resp.text.empty()) resp.text = "[echo stub: question not found]";
    resp.completion_tokens = static_cast<int>(util::lex_terms(resp.text).size());
    resp.prompt_tokens = static_cast<int>(util::lex_terms(request.user_text).size());
    return resp;
}

GenerationResponse FixedGeneration::generate(const GenerationRequest&) {
    GenerationResponse resp;
    resp.text = text_;
    resp.completion_tokens = static_cast<int>(util::lex_terms(text_).size());
    return resp;
}

GenerationResponse ScriptedGeneration::generate(const GenerationRequest&) {
    ++calls_;
    if (steps_.empty()) throw ServiceError("scripted generation exhausted", false);
    Step step = std::move(steps_.front());
    steps_.pop_front();
    if (std::holds_alternative<Fail>(step)) {
        throw ServiceError(std::get<Fail>(step).message, true);
    }
    GenerationResponse resp;
    resp.text = std::get<std::string>(step);
    return resp;
}

// ---------------------------------------------------------------------------
// HTTP clients
// ---------------------------------------------------------------------------

struct InFlightLimiter::Impl {
    explicit Impl(int max) : sem(max) {}
    std::counting_semaphore<> sem;
};

InFlightLimiter::InFlightLimiter(int max_in_flight)
    : impl_(std::make_shared<Impl>(std::max(1, max_in_flight))) {}

void InFlightLimiter::acquire() {
    impl_->sem.acquire();
}

void InFlightLimiter::release() {
    impl_->sem.release();
}

namespace {

json post_json(const HttpOptions& options, const std::string& path, const json& body) {
    json parsed;
    InFlightLimiter::Guard guard(options.limiter.get());
    with_retries(options.retries, options.backoff_ms, [&] {
        httplib::Client client(options.base_url);
        client.set_connection_timeout(0, options.timeout_ms * 1000);
        client.set_read_timeout(options.timeout_ms / 1000, (options.timeout_ms % 1000) * 1000);
        auto res = client.Post(path, body.dump(), "application/json");
        if (!res) {
            throw ServiceError("no response from " + options.base_url + path, true);
        }
        if (res->status >= 500) {
            throw ServiceError("server error " + std::to_string(res->status) + " from " + path, true);
        }
        if (res->status != 200) {
            throw ServiceError("unexpected status " + std::to_string(res->status) + " from " + path, false);
        }
        try {
            parsed = json::parse(res->body);
        } catch (const json::exception& e) {
            throw ServiceError(std::string("malformed service response: ") + e.what(), false);
        }
    });
    return parsed;
}

}  // namespace

HttpSentenceEmbedder::HttpSentenceEmbedder(HttpOptions options, std::string model_id, std::size_t expect_dim)
    : options_(std::move(options)), model_id_(std::move(model_id)), expect_dim_(expect_dim) {}

std::vector<retrieval::Embedding> HttpSentenceEmbedder::embed(EmbedKind kind, const std::vector<std::string>& texts) {
    if (texts.empty()) return {};
    json body = {{"model_id", model_id_}, {"kind", to_string(kind)}, {"texts", texts}};
    json resp = post_json(options_, "/v1/embed", body);
    if (!resp.contains("vectors") || !resp["vectors"].is_array() || resp["vectors"].size() != texts.size()) {
        throw ServiceError("embedding response does not match request size", false);
    }
    std::vector<retrieval::Embedding> out;
    out.reserve(texts.size());
    for (const auto& vec : resp["vectors"]) {
        std::vector<double> values = vec.get<std::vector<double>>();
        if (expect_dim_ != 0 && values.size() != expect_dim_) {
            throw ConfigError("embedding dimension mismatch: expected " + std::to_string(expect_dim_) + ", got " +
                              std::to_string(values.size()));
        }
        if (expect_dim_ == 0) expect_dim_ = values.size();
        out.push_back(retrieval::Embedding::make(std::move(values), model_id_));
    }
    return out;
}

HttpTokenEmbedder::HttpTokenEmbedder(HttpOptions options, std::string model_id)
    : options_(std::move(options)), model_id_(std::move(model_id)) {}

std::vector<retrieval::TokenEmbeddingMatrix> HttpTokenEmbedder::embed_tokens(const std::vector<std::string>& texts) {
    if (texts.empty()) return {};
    json body = {{"model_id", model_id_}, {"texts", texts}};
    json resp = post_json(options_, "/v1/token_embed", body);
    if (!resp.contains("token_vectors") || !resp["token_vectors"].is_array() ||
        resp["token_vectors"].size() != texts.size()) {
        throw ServiceError("token embedding response does not match request size", false);
    }
    std::vector<retrieval::TokenEmbeddingMatrix> out;
    out.reserve(texts.size());
    for (const auto& rows : resp["token_vectors"]) {
        retrieval::TokenEmbeddingMatrix m;
        m.model_id = model_id_;
        m.rows = rows.get<std::vector<std::vector<double>>>();
        out.push_back(std::move(m));
    }
    return out;
}

NliDistribution HttpNli::classify(const std::string& premise, const std::string& hypothesis) {
    json body = {{"premise", premise}, {"hypothesis", hypothesis}};
    json resp = post_json(options_, "/v1/nli", body);
    NliDistribution d;
    try {
        d.entail = resp.at("entail").get<double>();
        d.neutral = resp.at("neutral").get<double>();
        d.contradict = resp.at("contradict").get<double>();
    } catch (const json::exception& e) {
        throw ServiceError(std::string("malformed nli response: ") + e.what(), false);
    }
    return d;
}

GenerationResponse HttpGeneration::generate(const GenerationRequest& request) {
    json body = {{"model_id", request.model_id},
                 {"system_text", request.system_text},
                 {"user_text", request.user_text},
                 {"temperature", request.temperature},
                 {"max_tokens", request.max_tokens}};
    json resp = post_json(options_, "/v1/generate", body);
    GenerationResponse out;
    if (!resp.contains("text") || !resp["text"].is_string()) {
        throw ServiceError("generation response has no text field", false);
    }
    out.text = resp["text"].get<std::string>();
    if (resp.contains("usage") && resp["usage"].is_object()) {
        out.prompt_tokens = resp["usage"].value("prompt_tokens", 0);
        out.completion_tokens = resp["usage"].value("completion_tokens", 0);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Caching
// ---------------------------------------------------------------------------

ResponseCache::ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_);
}

std::filesystem::path ResponseCache::path_for(const std::string& key) const {
    const std::string digest = util::sha256_hex(key);
    return dir_ / digest.substr(0, 2) / (digest + ".json");
}

std::optional<std::string> ResponseCache::get(const std::string& key) const {
    const auto path = path_for(key);
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    std::string payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return payload;
}

void ResponseCache::put(const std::string& key, const std::string& payload) {
    const auto path = path_for(key);
    std::lock_guard<std::mutex> lock(mutex_);
    std::filesystem::create_directories(path.parent_path());
    if (std::filesystem::exists(path)) return;  // idempotent write
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        out << payload;
    }
    std::filesystem::rename(tmp, path);
}

CachedSentenceEmbedder::CachedSentenceEmbedder(std::shared_ptr<SentenceEmbedder> inner,
                                               std::shared_ptr<ResponseCache> cache)
    : inner_(std::move(inner)), cache_(std::move(cache)) {}

std::vector<retrieval::Embedding> CachedSentenceEmbedder::embed(EmbedKind kind,
                                                                const std::vector<std::string>& texts) {
    std::vector<retrieval::Embedding> out(texts.size());
    std::vector<std::size_t> missing;
    std::vector<std::string> missing_texts;
    std::vector<std::string> keys(texts.size());
    for (std::size_t i = 0; i < texts.size(); ++i) {
        keys[i] = "emb\x1f" + inner_->model_id() + "\x1f" + to_string(kind) + "\x1f" + util::sha256_hex(texts[i]);
        if (auto hit = cache_->get(keys[i])) {
            auto values = json::parse(*hit).get<std::vector<double>>();
            out[i] = retrieval::Embedding::make(std::move(values), inner_->model_id());
        } else {
            missing.push_back(i);
            missing_texts.push_back(texts[i]);
        }
    }
    if (!missing.empty()) {
        auto fresh = inner_->embed(kind, missing_texts);
        for (std::size_t j = 0; j < missing.size(); ++j) {
            cache_->put(keys[missing[j]], json(fresh[j].values).dump());
            out[missing[j]] = std::move(fresh[j]);
        }
    }
    return out;
}

CachedNli::CachedNli(std::shared_ptr<NliService> inner, std::shared_ptr<ResponseCache> cache)
    : inner_(std::move(inner)), cache_(std::move(cache)) {}

NliDistribution CachedNli::classify(const std::string& premise, const std::string& hypothesis) {
    const std::string key =
        "nli\x1f" + util::sha256_hex(premise) + "\x1f" + util::sha256_hex(hypothesis);
    if (auto hit = cache_->get(key)) {
        const json j = json::parse(*hit);
        return {j.at("entail").get<double>(), j.at("neutral").get<double>(), j.at("contradict").get<double>()};
    }
    NliDistribution d = inner_->classify(premise, hypothesis);
    cache_->put(key, json{{"entail", d.entail}, {"neutral", d.neutral}, {"contradict", d.contradict}}.dump());
    return d;
}

CachedGeneration::CachedGeneration(std::shared_ptr<GenerationService> inner, std::shared_ptr<ResponseCache> cache)
    : inner_(std::move(inner)), cache_(std::move(cache)) {}

GenerationResponse CachedGeneration::generate(const GenerationRequest& request) {
    const json req = {{"model_id", request.model_id},
                      {"system_text", request.system_text},
                      {"user_text", request.user_text},
                      {"temperature", request.temperature},
                      {"max_tokens", request.max_tokens}};
    const std::string key = "gen\x1f" + util::sha256_hex(req.dump());
    if (auto hit = cache_->get(key)) {
        const json j = json::parse(*hit);
        return {j.at("text").get<std::string>(), j.value("prompt_tokens", 0), j.value("completion_tokens", 0)};
    }
    GenerationResponse r = inner_->generate(request);
    cache_->put(key, json{{"text", r.text},
                          {"prompt_tokens", r.prompt_tokens},
                          {"completion_tokens", r.completion_tokens}}
                         .dump());
    return r;
}

}  // namespace lcqa::services
