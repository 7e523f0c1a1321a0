#include "lcqa/harness.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <thread>
#include <unordered_map>

#include "lcqa/digest.hpp"
#include "lcqa/errors.hpp"
#include "lcqa/evaluation.hpp"
#include "lcqa/jsonl.hpp"
#include "lcqa/log.hpp"
#include "lcqa/services.hpp"
#include "lcqa/text.hpp"
#include "lcqa/time_util.hpp"

namespace lcqa::harness {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Config serialization and validation
// ---------------------------------------------------------------------------

namespace {

const char* env_or_null(const char* name) {
    return std::getenv(name);
}

void apply_env_overrides(ExperimentConfig& config) {
    if (const char* v = env_or_null("LCQA_EMBEDDING_ENDPOINT")) config.services.embedding_endpoint = v;
    if (const char* v = env_or_null("LCQA_TOKEN_EMBEDDING_ENDPOINT")) config.services.token_embedding_endpoint = v;
    if (const char* v = env_or_null("LCQA_NLI_ENDPOINT")) config.services.nli_endpoint = v;
    if (const char* v = env_or_null("LCQA_JUDGE_ENDPOINT")) config.services.judge_endpoint = v;
    if (const char* v = env_or_null("LCQA_CACHE_DIR")) config.cache_dir = v;
    if (const char* v = env_or_null("LCQA_GENERATION_ENDPOINT")) {
        for (auto& m : config.models) m.endpoint = v;
    }
}

generation::ModelProfile parse_model(const json& j) {
    const std::string model_id = j.at("model_id").get<std::string>();
    const std::string family_str = j.value("family", std::string("instruct"));
    auto family = generation::family_from_string(family_str);
    if (!family) throw ConfigError("unknown model family '" + family_str + "' for " + model_id);
    auto profile = generation::ModelProfile::make(model_id, *family);
    if (j.contains("context_window")) profile.context_window = j.at("context_window").get<long long>();
    if (j.contains("temperature")) profile.temperature = j.at("temperature").get<double>();
    if (j.contains("think_token_budget") && !j.at("think_token_budget").is_null()) {
        profile.think_token_budget = j.at("think_token_budget").get<int>();
    }
    if (j.contains("endpoint")) profile.endpoint = j.at("endpoint").get<std::string>();
    if (j.contains("max_output_tokens")) profile.max_output_tokens = j.at("max_output_tokens").get<int>();
    if (j.contains("think_open")) profile.think_open = j.at("think_open").get<std::string>();
    if (j.contains("think_close")) profile.think_close = j.at("think_close").get<std::string>();
    return profile;
}

json model_to_json(const generation::ModelProfile& m) {
    return json{{"model_id", m.model_id},
                {"family", generation::to_string(m.family)},
                {"context_window", m.context_window},
                {"temperature", m.temperature},
                {"think_token_budget", m.think_token_budget ? json(*m.think_token_budget) : json(nullptr)},
                {"endpoint", m.endpoint},
                {"max_output_tokens", m.max_output_tokens},
                {"think_open", m.think_open},
                {"think_close", m.think_close}};
}

}  // namespace

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError(path.string() + ": invalid JSON: " + e.what());
    }

    ExperimentConfig config;
    if (j.contains("corpus")) {
        config.notes_file = j["corpus"].value("notes_file", std::string());
        config.qa_file = j["corpus"].value("qa_file", std::string());
    }
    if (j.contains("scenarios")) {
        config.scenarios.clear();
        for (const auto& s : j["scenarios"]) {
            auto sc = corpus::scenario_from_string(s.get<std::string>());
            if (!sc) throw ConfigError("unknown scenario '" + s.get<std::string>() + "'");
            config.scenarios.push_back(*sc);
        }
    }
    if (j.contains("strategies")) {
        config.strategies.clear();
        for (const auto& s : j["strategies"]) {
            auto st = assembly::Strategy::parse(s.get<std::string>());
            if (!st) throw ConfigError("unknown strategy '" + s.get<std::string>() + "'");
            config.strategies.push_back(*st);
        }
    }
    if (j.contains("models")) {
        config.models.clear();
        for (const auto& m : j["models"]) config.models.push_back(parse_model(m));
    }
    if (j.contains("retrieval")) {
        const auto& r = j["retrieval"];
        config.bm25.k1 = r.value("k1", config.bm25.k1);
        config.bm25.b = r.value("b", config.bm25.b);
        config.fusion.k_rrf = r.value("k_rrf", config.fusion.k_rrf);
        config.fusion.candidate_multiplier = r.value("candidate_multiplier", config.fusion.candidate_multiplier);
    }
    if (j.contains("chunking")) {
        config.chunk_size = j["chunking"].value("chunk_size", config.chunk_size);
        config.token_scheme = j["chunking"].value("token_scheme", config.token_scheme);
    }
    if (j.contains("metrics")) {
        const auto& m = j["metrics"];
        config.metrics.meteor = m.value("meteor", true);
        config.metrics.semantic_f1 = m.value("semantic_f1", true);
        config.metrics.nli = m.value("nli", true);
        config.metrics.judge = m.value("judge", true);
        config.metrics.mc_accuracy = m.value("mc_accuracy", true);
    }
    if (j.contains("services")) {
        const auto& s = j["services"];
        auto& svc = config.services;
        svc.embedding_endpoint = s.value("embedding_endpoint", svc.embedding_endpoint);
        svc.embedding_model_id = s.value("embedding_model_id", svc.embedding_model_id);
        svc.token_embedding_endpoint = s.value("token_embedding_endpoint", svc.token_embedding_endpoint);
        svc.token_embedding_model_id = s.value("token_embedding_model_id", svc.token_embedding_model_id);
        svc.nli_endpoint = s.value("nli_endpoint", svc.nli_endpoint);
        svc.judge_endpoint = s.value("judge_endpoint", svc.judge_endpoint);
        svc.judge_model_id = s.value("judge_model_id", svc.judge_model_id);
        svc.timeout_ms = s.value("timeout_ms", svc.timeout_ms);
        svc.retries = s.value("retries", svc.retries);
        svc.in_flight = s.value("in_flight", svc.in_flight);
    }
    config.template_dir = j.value("template_dir", config.template_dir);
    config.cache_dir = j.value("cache_dir", config.cache_dir);
    config.output_dir = j.value("output_dir", config.output_dir);
    config.seed = j.value("seed", config.seed);
    config.min_context_tokens = j.value("min_context_tokens", config.min_context_tokens);
    config.workers = j.value("workers", config.workers);

    apply_env_overrides(config);
    validate(config);
    return config;
}

void validate(const ExperimentConfig& config) {
    if (config.scenarios.empty()) throw ConfigError("config needs at least one scenario");
    if (config.strategies.empty()) throw ConfigError("config needs at least one strategy");
    if (config.models.empty()) throw ConfigError("config needs at least one model");
    if (!config.metrics.any()) throw ConfigError("config needs at least one metric enabled");
    for (const auto& s : config.strategies) {
        if (s.kind != assembly::Strategy::Kind::full_context && s.k < 1) {
            throw ConfigError("strategy " + s.id() + " needs k >= 1");
        }
    }
    if (config.chunk_size < 1) throw ConfigError("chunk_size must be >= 1");
    if (config.bm25.k1 <= 0.0) throw ConfigError("k1 must be > 0");
    if (config.bm25.b < 0.0 || config.bm25.b > 1.0) throw ConfigError("b must be in [0,1]");
    if (config.fusion.k_rrf <= 0.0) throw ConfigError("k_rrf must be > 0");
    if (config.fusion.candidate_multiplier < 1) throw ConfigError("candidate_multiplier must be >= 1");
    if (config.workers < 1) throw ConfigError("workers must be >= 1");
    if (config.services.in_flight < 1) throw ConfigError("in_flight must be >= 1");
    if (config.services.retries < 1) throw ConfigError("retries must be >= 1");
    chunking::TokenCounter::make(config.token_scheme);  // rejects unknown schemes
    for (const auto& m : config.models) {
        if (m.model_id.empty()) throw ConfigError("model_id must not be empty");
        if (m.think_token_budget && m.family != generation::Family::reasoning) {
            throw ConfigError("think_token_budget set for non-reasoning model " + m.model_id);
        }
    }
}

json config_to_json(const ExperimentConfig& config) {
    json scenarios = json::array();
    for (const auto& s : config.scenarios) scenarios.push_back(corpus::to_string(s));
    json strategies = json::array();
    for (const auto& s : config.strategies) strategies.push_back(s.id());
    json models = json::array();
    for (const auto& m : config.models) models.push_back(model_to_json(m));

    return json{
        {"corpus", {{"notes_file", config.notes_file}, {"qa_file", config.qa_file}}},
        {"scenarios", scenarios},
        {"strategies", strategies},
        {"models", models},
        {"retrieval",
         {{"k1", config.bm25.k1},
          {"b", config.bm25.b},
          {"k_rrf", config.fusion.k_rrf},
          {"candidate_multiplier", config.fusion.candidate_multiplier}}},
        {"chunking", {{"chunk_size", config.chunk_size}, {"token_scheme", config.token_scheme}}},
        {"metrics",
         {{"meteor", config.metrics.meteor},
          {"semantic_f1", config.metrics.semantic_f1},
          {"nli", config.metrics.nli},
          {"judge", config.metrics.judge},
          {"mc_accuracy", config.metrics.mc_accuracy}}},
        {"services",
         {{"embedding_endpoint", config.services.embedding_endpoint},
          {"embedding_model_id", config.services.embedding_model_id},
          {"token_embedding_endpoint", config.services.token_embedding_endpoint},
          {"token_embedding_model_id", config.services.token_embedding_model_id},
          {"nli_endpoint", config.services.nli_endpoint},
          {"judge_endpoint", config.services.judge_endpoint},
          {"judge_model_id", config.services.judge_model_id},
          {"timeout_ms", config.services.timeout_ms},
          {"retries", config.services.retries},
          {"in_flight", config.services.in_flight}}},
        {"template_dir", config.template_dir},
        {"cache_dir", config.cache_dir},
        {"output_dir", config.output_dir},
        {"seed", config.seed},
        {"min_context_tokens", config.min_context_tokens},
        {"workers", config.workers}};
}

std::string config_digest(const ExperimentConfig& config) {
    return util::sha256_hex(config_to_json(config).dump());
}

// ---------------------------------------------------------------------------
// Service construction
// ---------------------------------------------------------------------------

namespace {

bool is_stub(const std::string& endpoint) {
    return endpoint.rfind("stub:", 0) == 0;
}

services::HttpOptions http_options(const ServiceConfig& svc, const std::string& endpoint,
                                   const std::shared_ptr<services::InFlightLimiter>& limiter) {
    services::HttpOptions opt;
    opt.base_url = endpoint;
    opt.timeout_ms = svc.timeout_ms;
    opt.retries = svc.retries;
    opt.limiter = limiter;
    return opt;
}

std::shared_ptr<services::SentenceEmbedder> make_embedder(const ServiceConfig& svc,
                                                          const std::shared_ptr<services::InFlightLimiter>& limiter) {
    if (svc.embedding_endpoint == "stub:onehot") return std::make_shared<services::OneHotSentenceEmbedder>();
    if (is_stub(svc.embedding_endpoint)) {
        throw ConfigError("unknown embedding stub '" + svc.embedding_endpoint + "'");
    }
    return std::make_shared<services::HttpSentenceEmbedder>(http_options(svc, svc.embedding_endpoint, limiter),
                                                            svc.embedding_model_id);
}

std::shared_ptr<services::TokenEmbedder> make_token_embedder(
    const ServiceConfig& svc, const std::shared_ptr<services::InFlightLimiter>& limiter) {
    if (svc.token_embedding_endpoint == "stub:onehot") return std::make_shared<services::OneHotTokenEmbedder>();
    if (is_stub(svc.token_embedding_endpoint)) {
        throw ConfigError("unknown token embedding stub '" + svc.token_embedding_endpoint + "'");
    }
    return std::make_shared<services::HttpTokenEmbedder>(http_options(svc, svc.token_embedding_endpoint, limiter),
                                                         svc.token_embedding_model_id);
}

std::shared_ptr<services::NliService> make_nli(const ServiceConfig& svc,
                                               const std::shared_ptr<services::InFlightLimiter>& limiter) {
    const std::string& ep = svc.nli_endpoint;
    if (ep == "stub:match") return std::make_shared<services::MatchNli>();
    if (ep.rfind("stub:fixed:", 0) == 0) {
        const std::string spec = ep.substr(11);
        double e = 0, n = 0, c = 0;
        if (std::sscanf(spec.c_str(), "%lf,%lf,%lf", &e, &n, &c) != 3) {
            throw ConfigError("bad fixed nli stub spec '" + ep + "', want stub:fixed:e,n,c");
        }
        return std::make_shared<services::FixedNli>(services::NliDistribution{e, n, c});
    }
    if (is_stub(ep)) throw ConfigError("unknown nli stub '" + ep + "'");
    return std::make_shared<services::HttpNli>(http_options(svc, ep, limiter));
}

std::shared_ptr<services::GenerationService> make_judge(const ServiceConfig& svc,
                                                        const std::shared_ptr<services::InFlightLimiter>& limiter) {
    const std::string& ep = svc.judge_endpoint;
    if (ep.rfind("stub:judge:", 0) == 0) {
        const std::string spec = ep.substr(11);
        int c = 0, p = 0, f = 0;
        if (std::sscanf(spec.c_str(), "%d/%d/%d", &c, &p, &f) != 3) {
            throw ConfigError("bad judge stub spec '" + ep + "', want stub:judge:c/p/f");
        }
        const std::string text = "correctness: " + std::to_string(c) + "\ncompleteness: " + std::to_string(p) +
                                 "\nfaithfulness: " + std::to_string(f);
        return std::make_shared<services::FixedGeneration>(text);
    }
    if (is_stub(ep)) throw ConfigError("unknown judge stub '" + ep + "'");
    return std::make_shared<services::HttpGeneration>(http_options(svc, ep, limiter));
}

std::shared_ptr<services::GenerationService> make_generation(const ServiceConfig& svc, const std::string& endpoint,
                                                             const corpus::Corpus& corpus,
                                                             const std::shared_ptr<services::InFlightLimiter>& limiter) {
    if (endpoint == "stub:echo-gold") {
        std::map<std::string, std::string> gold;
        for (const auto& item : corpus.items) gold[item.question] = item.gold_answer;
        return std::make_shared<services::EchoGoldGeneration>(std::move(gold));
    }
    if (endpoint.rfind("stub:fixed:", 0) == 0) {
        return std::make_shared<services::FixedGeneration>(endpoint.substr(11));
    }
    if (is_stub(endpoint)) throw ConfigError("unknown generation stub '" + endpoint + "'");
    return std::make_shared<services::HttpGeneration>(http_options(svc, endpoint, limiter));
}

// ---------------------------------------------------------------------------
// Journal
// ---------------------------------------------------------------------------

std::string task_key(const std::string& item_id, corpus::Scenario scenario, const assembly::Strategy& strategy,
                     const std::string& model_id) {
    return item_id + "|" + corpus::to_string(scenario) + "|" + strategy.id() + "|" + model_id;
}

json record_to_json(const generation::GenerationRecord& r) {
    return json{{"item_id", r.item_id},
                {"model_id", r.model_id},
                {"strategy", r.strategy_id},
                {"scenario", corpus::to_string(r.scenario)},
                {"raw_output", r.raw_output},
                {"parsed_answer", r.parsed_answer},
                {"parsed_option", r.parsed_option ? json(*r.parsed_option) : json(nullptr)},
                {"latency_ms", r.latency_ms},
                {"prompt_tokens", r.prompt_tokens},
                {"completion_tokens", r.completion_tokens},
                {"overflow", r.overflow},
                {"failed", r.failed},
                {"attempts", r.attempts},
                {"error", r.error}};
}

json scores_to_json(const eval::MetricReport& m) {
    auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
    return json{{"item_id", m.item_id},
                {"meteor", opt(m.meteor)},
                {"semantic_precision", opt(m.semantic_precision)},
                {"semantic_recall", opt(m.semantic_recall)},
                {"semantic_f1", opt(m.semantic_f1)},
                {"nli_entailment", opt(m.nli_entailment)},
                {"nli_non_contradiction", opt(m.nli_non_contradiction)},
                {"judge_correctness", opt(m.judge_correctness)},
                {"judge_completeness", opt(m.judge_completeness)},
                {"judge_faithfulness", opt(m.judge_faithfulness)},
                {"mc_correct", m.mc_correct ? json(*m.mc_correct) : json(nullptr)},
                {"flags", m.flags}};
}

eval::MetricReport scores_from_json(const json& j) {
    eval::MetricReport m;
    auto opt = [&](const char* key) -> std::optional<double> {
        if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
        return j.at(key).get<double>();
    };
    m.item_id = j.value("item_id", std::string());
    m.meteor = opt("meteor");
    m.semantic_precision = opt("semantic_precision");
    m.semantic_recall = opt("semantic_recall");
    m.semantic_f1 = opt("semantic_f1");
    m.nli_entailment = opt("nli_entailment");
    m.nli_non_contradiction = opt("nli_non_contradiction");
    m.judge_correctness = opt("judge_correctness");
    m.judge_completeness = opt("judge_completeness");
    m.judge_faithfulness = opt("judge_faithfulness");
    if (j.contains("mc_correct") && !j.at("mc_correct").is_null()) m.mc_correct = j.at("mc_correct").get<bool>();
    if (j.contains("flags")) m.flags = j.at("flags").get<std::vector<std::string>>();
    return m;
}

class Journal {
public:
    explicit Journal(const std::filesystem::path& path) : path_(path) {
        if (std::filesystem::exists(path_)) {
            util::for_each_record(path_, [&](std::size_t, const json& rec) {
                if (rec.contains("task")) entries_[rec.at("task").get<std::string>()] = rec;
            });
        }
        out_.open(path_, std::ios::app);
        if (!out_) throw Error("cannot open journal for append: " + path_.string());
    }

    bool has(const std::string& key) const {
        std::lock_guard<std::mutex> lock(mutex_);
        return entries_.count(key) > 0;
    }

    void append(json entry) {
        std::string key = entry.at("task").get<std::string>();
        std::lock_guard<std::mutex> lock(mutex_);
        out_ << entry.dump() << "\n";
        out_.flush();
        entries_[std::move(key)] = std::move(entry);
    }

    /// Callers must only iterate after the workers joined.
    const std::map<std::string, json>& entries() const { return entries_; }

private:
    std::filesystem::path path_;
    std::map<std::string, json> entries_;  // keyed and ordered by task key
    std::ofstream out_;
    mutable std::mutex mutex_;
};

}  // namespace

// ---------------------------------------------------------------------------
// Run
// ---------------------------------------------------------------------------

namespace {

struct TaskServices {
    std::shared_ptr<services::SentenceEmbedder> embedder;
    std::shared_ptr<services::TokenEmbedder> token_embedder;
    std::shared_ptr<services::NliService> nli;
    std::shared_ptr<services::GenerationService> judge;
    std::unordered_map<std::string, std::shared_ptr<services::GenerationService>> generators;  // by endpoint
};

eval::MetricReport score_record(const corpus::QAItem& item, const generation::GenerationRecord& record,
                                const MetricToggles& toggles, const TaskServices& svcs,
                                const assembly::TemplateSet& templates, const std::string& judge_model_id) {
    eval::MetricReport report;
    report.item_id = item.item_id;

    if (item.task == corpus::TaskType::multiple_choice) {
        if (toggles.mc_accuracy) {
            report.mc_correct = record.parsed_option && item.correct_option &&
                                *record.parsed_option == *item.correct_option;
        }
    } else {
        if (toggles.meteor) report.meteor = eval::meteor(record.parsed_answer, item.gold_answer);
        if (toggles.semantic_f1) {
            auto f1 = eval::semantic_f1(record.parsed_answer, item.gold_answer, *svcs.token_embedder);
            if (f1.flagged) {
                report.flags.push_back("semantic_empty");
            } else {
                report.semantic_precision = f1.precision;
                report.semantic_recall = f1.recall;
                report.semantic_f1 = f1.f1;
            }
        }
        if (toggles.nli) {
            auto nli = eval::nli_scores(item.gold_answer, record.parsed_answer, *svcs.nli);
            if (nli.flagged) {
                report.flags.push_back("nli_malformed");
            } else {
                report.nli_entailment = nli.entailment;
                report.nli_non_contradiction = nli.non_contradiction;
            }
        }
        if (toggles.judge) {
            auto judged = eval::judge_scores(item.question, item.gold_answer, record.parsed_answer, *svcs.judge,
                                             templates.judge, judge_model_id);
            if (judged.parse_failed) {
                report.flags.push_back("judge_parse_failed");
            } else {
                report.judge_correctness = judged.correctness;
                report.judge_completeness = judged.completeness;
                report.judge_faithfulness = judged.faithfulness;
            }
        }
    }
    if (record.overflow) report.flags.push_back("overflow_trimmed");
    return report;
}

struct PreparedContext {
    assembly::AssembledContext context;
    bool retrieval_empty = false;
};

}  // namespace

RunResult run_experiment(const ExperimentConfig& config, const RunOptions& options) {
    validate(config);
    if (config.notes_file.empty() || config.qa_file.empty()) {
        throw ConfigError("run requires corpus.notes_file and corpus.qa_file");
    }

    auto counter = chunking::TokenCounter::make(config.token_scheme);
    auto templates = config.template_dir.empty() ? assembly::TemplateSet::builtin()
                                                 : assembly::TemplateSet::load(config.template_dir);

    corpus::Corpus data = corpus::ingest_corpus(config.notes_file, config.qa_file);
    data.notes = corpus::normalize_notes(std::move(data.notes));

    std::unordered_map<std::string, std::vector<corpus::ClinicalNote>> notes_by_patient;
    for (const auto& n : data.notes) notes_by_patient[n.patient_id].push_back(n);

    std::vector<const corpus::QAItem*> items;
    for (const auto& it : data.items) items.push_back(&it);
    std::sort(items.begin(), items.end(),
              [](const corpus::QAItem* a, const corpus::QAItem* b) { return a->item_id < b->item_id; });

    // Services, shared across workers.
    auto cache = std::make_shared<services::ResponseCache>(std::filesystem::path(config.cache_dir));
    auto limiter = std::make_shared<services::InFlightLimiter>(config.services.in_flight);
    TaskServices svcs;
    svcs.embedder =
        std::make_shared<services::CachedSentenceEmbedder>(make_embedder(config.services, limiter), cache);
    svcs.token_embedder = make_token_embedder(config.services, limiter);
    svcs.nli = std::make_shared<services::CachedNli>(make_nli(config.services, limiter), cache);
    svcs.judge = std::make_shared<services::CachedGeneration>(make_judge(config.services, limiter), cache);
    for (const auto& m : config.models) {
        if (!svcs.generators.count(m.endpoint)) {
            svcs.generators[m.endpoint] = make_generation(config.services, m.endpoint, data, limiter);
        }
    }

    // Run directory and manifest.
    RunResult result;
    result.manifest.config_digest = config_digest(config);
    result.manifest.template_ids = {{"extractive", templates.extractive.id},
                                    {"multiple_choice", templates.multiple_choice.id},
                                    {"open_ended", templates.open_ended.id},
                                    {"judge", templates.judge.id}};
    result.manifest.token_scheme = counter.scheme_id();
    result.manifest.service_model_ids = {{"embedding", svcs.embedder->model_id()},
                                         {"token_embedding", svcs.token_embedder->model_id()},
                                         {"judge", config.services.judge_model_id}};
    result.manifest.started_at = util::format_iso8601(
        std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch())
            .count());

    result.run_dir = std::filesystem::path(config.output_dir) / result.manifest.config_digest.substr(0, 16);
    std::filesystem::create_directories(result.run_dir);

    Journal journal(result.run_dir / "journal.jsonl");

    generation::RetryPolicy retry;
    retry.max_attempts = config.services.retries;

    std::atomic<std::size_t> next_item{0};
    std::atomic<int> failed_tasks{0};
    std::atomic<int> completed_tasks{0};
    std::atomic<bool> stopped{false};
    std::mutex error_mutex;
    std::string first_error;

    auto should_stop = [&]() -> bool {
        if (stopped.load()) return true;
        if (options.should_stop && options.should_stop()) {
            stopped.store(true);
            return true;
        }
        return false;
    };

    // Per-item errors are journaled as failed tasks so the run continues.
    auto journal_failed_task = [&](const std::string& key, const json& group, const std::string& status,
                                   generation::GenerationRecord record, const std::string& error,
                                   long long scenario_tokens, bool over_cap) {
        record.failed = true;
        record.error = error;
        journal.append(json{{"task", key},
                            {"status", status},
                            {"group", group},
                            {"scenario_tokens", scenario_tokens},
                            {"over_cap", over_cap},
                            {"record", record_to_json(record)}});
        failed_tasks.fetch_add(1);
        completed_tasks.fetch_add(1);
    };

    static const std::vector<corpus::ClinicalNote> kNoNotes;
    auto notes_of = [&](const std::string& patient_id) -> const std::vector<corpus::ClinicalNote>& {
        auto it = notes_by_patient.find(patient_id);
        return it == notes_by_patient.end() ? kNoNotes : it->second;
    };

    auto process_item = [&](const corpus::QAItem& item) {
        const auto& patient_notes = notes_of(item.patient_id);
        for (const auto scenario : config.scenarios) {
            if (should_stop()) return;

            std::optional<corpus::ScenarioContext> sctx;
            std::vector<chunking::Chunk> chunks;
            std::string scenario_error;
            try {
                sctx = corpus::build_scenario(item, patient_notes, scenario, counter);
                // Chunk the scenario's notes once; shared by all RAG strategies.
                for (const auto& note : sctx->notes) {
                    auto note_chunks = chunking::chunk_note(note, counter, config.chunk_size);
                    chunks.insert(chunks.end(), std::make_move_iterator(note_chunks.begin()),
                                  std::make_move_iterator(note_chunks.end()));
                }
            } catch (const std::exception& e) {
                scenario_error = e.what();
            }
            if (!scenario_error.empty()) {
                log::warn("item " + item.item_id + " scenario " + corpus::to_string(scenario) +
                          " failed: " + scenario_error);
                for (const auto& strategy : config.strategies) {
                    for (const auto& model : config.models) {
                        const std::string key = task_key(item.item_id, scenario, strategy, model.model_id);
                        if (journal.has(key)) continue;
                        json group = {{"model", model.model_id},
                                      {"scenario", corpus::to_string(scenario)},
                                      {"strategy", strategy.id()},
                                      {"bin", "unknown"}};
                        generation::GenerationRecord record;
                        record.item_id = item.item_id;
                        record.model_id = model.model_id;
                        record.strategy_id = strategy.id();
                        record.scenario = scenario;
                        journal_failed_task(key, group, "failed", record, scenario_error, 0, false);
                    }
                }
                continue;
            }
            if (config.min_context_tokens > 0 && sctx->token_count < config.min_context_tokens) continue;

            assembly::ChunkStore store(sctx->notes, chunks);

            for (const auto& strategy : config.strategies) {
                if (should_stop()) return;

                // Skip work when every model already settled this strategy.
                bool all_done = true;
                for (const auto& model : config.models) {
                    all_done = all_done && journal.has(task_key(item.item_id, scenario, strategy, model.model_id));
                }
                if (all_done) continue;

                retrieval::RankedList ranked;
                assembly::AssembledContext assembled;
                std::string prep_error;
                try {
                    if (strategy.kind != assembly::Strategy::Kind::full_context && !store.chunks().empty()) {
                        ranked = retrieval::retrieve(item.question, store.chunks(), strategy.k, config.fusion,
                                                     config.bm25, *svcs.embedder, *svcs.token_embedder);
                    }
                    assembled = assembly::assemble(ranked, store, strategy, counter, item.item_id);
                } catch (const std::exception& e) {
                    prep_error = e.what();
                    log::warn("item " + item.item_id + " strategy " + strategy.id() + " failed: " + prep_error);
                }

                for (const auto& model : config.models) {
                    if (should_stop()) return;
                    const std::string key = task_key(item.item_id, scenario, strategy, model.model_id);
                    if (journal.has(key)) continue;

                    json group = {{"model", model.model_id},
                                  {"scenario", corpus::to_string(scenario)},
                                  {"strategy", strategy.id()},
                                  {"bin", corpus::to_string(sctx->bin)}};

                    generation::GenerationRecord base_record;
                    base_record.item_id = item.item_id;
                    base_record.model_id = model.model_id;
                    base_record.strategy_id = strategy.id();
                    base_record.scenario = scenario;

                    if (!prep_error.empty()) {
                        journal_failed_task(key, group, "failed", base_record, prep_error, sctx->token_count,
                                            sctx->over_cap);
                        continue;
                    }

                    try {
                        // Fit the prompt into the model window, dropping the
                        // worst-ranked sources whole when needed.
                        assembly::AssembledContext fitted = assembled;
                        assembly::PromptBundle bundle;
                        bool fits = false;
                        const long long reserve = model.max_output_tokens +
                                                  (model.family == generation::Family::reasoning &&
                                                           model.think_token_budget
                                                       ? *model.think_token_budget
                                                       : 0);
                        for (;;) {
                            bundle = assembly::render_prompt(fitted, item, model, templates);
                            const long long prompt_tokens =
                                counter.count(bundle.system_text) + counter.count(bundle.user_text);
                            if (prompt_tokens + reserve <= model.context_window) {
                                fits = true;
                                break;
                            }
                            if (!assembly::drop_lowest_ranked(fitted, counter)) break;
                        }

                        if (!fits) {
                            generation::GenerationRecord record = base_record;
                            record.overflow = true;
                            journal_failed_task(key, group, "overflow", record,
                                                "context overflow: prompt does not fit the model window",
                                                sctx->token_count, sctx->over_cap);
                            continue;
                        }

                        generation::GenerationRecord record =
                            generation::generate(bundle, model, *svcs.generators.at(model.endpoint), retry);
                        record.item_id = item.item_id;
                        record.strategy_id = strategy.id();
                        record.scenario = scenario;
                        record.overflow = fitted.overflow_trimmed;
                        if (!record.failed && item.task == corpus::TaskType::multiple_choice) {
                            record.parsed_option = generation::extract_option(record.parsed_answer, item.options);
                        }

                        json entry = {{"task", key},
                                      {"status", record.failed ? "failed" : "done"},
                                      {"group", group},
                                      {"scenario_tokens", sctx->token_count},
                                      {"over_cap", sctx->over_cap},
                                      {"record", record_to_json(record)}};
                        if (!record.failed) {
                            eval::MetricReport scores = score_record(item, record, config.metrics, svcs, templates,
                                                                     config.services.judge_model_id);
                            if (sctx->over_cap) scores.flags.push_back("context_over_cap");
                            entry["scores"] = scores_to_json(scores);
                        } else {
                            failed_tasks.fetch_add(1);
                        }
                        journal.append(std::move(entry));
                        completed_tasks.fetch_add(1);
                    } catch (const std::exception& e) {
                        log::warn("task " + key + " failed: " + e.what());
                        journal_failed_task(key, group, "failed", base_record, e.what(), sctx->token_count,
                                            sctx->over_cap);
                    }
                }
            }
        }
    };

    const int worker_count = std::max(1, std::min<int>(config.workers, static_cast<int>(items.size())));
    std::vector<std::thread> workers;
    workers.reserve(static_cast<std::size_t>(worker_count));
    for (int w = 0; w < worker_count; ++w) {
        workers.emplace_back([&] {
            for (;;) {
                const std::size_t idx = next_item.fetch_add(1);
                if (idx >= items.size() || should_stop()) return;
                try {
                    process_item(*items[idx]);
                } catch (const std::exception& e) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (first_error.empty()) first_error = e.what();
                    stopped.store(true);
                    return;
                }
            }
        });
    }
    for (auto& w : workers) w.join();
    if (!first_error.empty()) throw Error("run failed: " + first_error);

    result.failed_tasks = failed_tasks.load();

    // Count the full grid (after the min-context filter) to decide completion.
    int expected = 0;
    for (const auto* item : items) {
        for (const auto scenario : config.scenarios) {
            if (config.min_context_tokens > 0) {
                try {
                    corpus::ScenarioContext sctx =
                        corpus::build_scenario(*item, notes_of(item->patient_id), scenario, counter);
                    if (sctx.token_count < config.min_context_tokens) continue;
                } catch (const std::exception&) {
                    // Unbuildable scenarios still occupy grid slots (as failures).
                }
            }
            expected += static_cast<int>(config.strategies.size() * config.models.size());
        }
    }
    result.total_tasks = expected;
    result.completed_tasks = static_cast<int>(journal.entries().size());
    result.completed = result.completed_tasks >= expected && !stopped.load();

    // Canonical outputs rebuilt from the journal so clean and resumed runs
    // emit identical bytes.
    {
        std::ofstream records(result.run_dir / "records.jsonl");
        std::ofstream scores(result.run_dir / "scores.jsonl");
        for (const auto& [key, entry] : journal.entries()) {
            json rec = entry.at("record");
            rec["task"] = key;
            records << rec.dump() << "\n";
            if (entry.contains("scores")) {
                json s = entry.at("scores");
                s["task"] = key;
                s["model_id"] = entry.at("group").at("model");
                s["scenario"] = entry.at("group").at("scenario");
                s["strategy"] = entry.at("group").at("strategy");
                s["bin"] = entry.at("group").at("bin");
                scores << s.dump() << "\n";
            }
        }
    }

    result.manifest.finished_at = util::format_iso8601(
        std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch())
            .count());
    {
        json manifest = {{"config_digest", result.manifest.config_digest},
                         {"config", config_to_json(config)},
                         {"template_ids", result.manifest.template_ids},
                         {"token_scheme", result.manifest.token_scheme},
                         {"service_model_ids", result.manifest.service_model_ids},
                         {"started_at", result.manifest.started_at},
                         {"finished_at", result.manifest.finished_at},
                         {"total_tasks", result.total_tasks},
                         {"completed_tasks", result.completed_tasks},
                         {"failed_tasks", result.failed_tasks},
                         {"completed", result.completed}};
        std::ofstream out(result.run_dir / "manifest.json");
        out << manifest.dump(2) << "\n";
    }

    if (result.completed) write_reports(result.run_dir);
    return result;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

json matrix_to_json(const std::vector<std::vector<std::optional<double>>>& matrix) {
    json rows = json::array();
    for (const auto& row : matrix) {
        json r = json::array();
        for (const auto& v : row) r.push_back(v ? json(*v) : json(nullptr));
        rows.push_back(std::move(r));
    }
    return rows;
}

}  // namespace

void write_reports(const std::filesystem::path& run_dir) {
    const auto journal_path = run_dir / "journal.jsonl";
    const auto reports_dir = run_dir / "reports";
    std::filesystem::create_directories(reports_dir);

    std::vector<eval::ScoredItem> scored;
    std::map<eval::GroupKey, std::array<int, 3>> status_counts;  // done, failed, overflow
    std::vector<const eval::MetricReport*> all_reports;
    std::vector<std::pair<eval::GroupKey, eval::MetricReport>> holder;

    // Journal lines arrive in completion order, which varies between runs;
    // aggregate in canonical task order so the report bytes never do.
    std::map<std::string, json> by_task;
    if (std::filesystem::exists(journal_path)) {
        util::for_each_record(journal_path, [&](std::size_t, const json& rec) {
            if (rec.contains("task")) by_task[rec.at("task").get<std::string>()] = rec;
        });
    }
    for (const auto& [task, rec] : by_task) {
        const auto& g = rec.at("group");
        eval::GroupKey key{g.at("model").get<std::string>(), g.at("scenario").get<std::string>(),
                           g.at("strategy").get<std::string>(), g.at("bin").get<std::string>()};
        const std::string status = rec.at("status").get<std::string>();
        auto& counts = status_counts[key];
        if (status == "done") {
            ++counts[0];
        } else if (status == "failed") {
            ++counts[1];
        } else {
            ++counts[2];
        }
        if (rec.contains("scores")) {
            holder.push_back({key, scores_from_json(rec.at("scores"))});
        }
    }
    if (holder.empty()) {
        log::warn("report: journal is empty or has no scored tasks; emitting empty reports");
    }
    scored.reserve(holder.size());
    for (auto& [key, report] : holder) scored.push_back({key, std::move(report)});
    all_reports.reserve(scored.size());
    for (const auto& s : scored) all_reports.push_back(&s.report);

    const eval::AggregateReport agg = eval::aggregate(scored);

    {
        std::ofstream tsv(reports_dir / "aggregates.tsv");
        tsv << "model\tscenario\tstrategy\tbin\tmetric\tmean\tcount\tnormalized\tdegenerate\n";
        for (const auto& group : agg.groups) {
            for (const auto& name : agg.metric_names) {
                const auto& s = group.stats.at(name);
                if (s.count == 0) continue;
                tsv << group.key.model_id << "\t" << group.key.scenario << "\t" << group.key.strategy << "\t"
                    << group.key.bin << "\t" << name << "\t" << fmt(s.mean) << "\t" << s.count << "\t"
                    << fmt(s.normalized) << "\t" << (s.degenerate ? 1 : 0) << "\n";
            }
        }
    }
    {
        json groups = json::array();
        for (const auto& group : agg.groups) {
            json stats;
            for (const auto& [name, s] : group.stats) {
                if (s.count == 0) continue;
                stats[name] = {{"mean", s.mean},
                               {"count", s.count},
                               {"normalized", s.normalized},
                               {"degenerate", s.degenerate}};
            }
            groups.push_back({{"model", group.key.model_id},
                              {"scenario", group.key.scenario},
                              {"strategy", group.key.strategy},
                              {"bin", group.key.bin},
                              {"metrics", stats}});
        }
        std::ofstream out(reports_dir / "aggregates.json");
        out << json{{"metric_names", agg.metric_names}, {"groups", groups}}.dump(2) << "\n";
    }
    {
        json groups = json::array();
        for (const auto& group : agg.groups) {
            groups.push_back({{"model", group.key.model_id},
                              {"scenario", group.key.scenario},
                              {"strategy", group.key.strategy},
                              {"bin", group.key.bin},
                              {"matrix", matrix_to_json(group.correlation)}});
        }
        json overall = matrix_to_json(eval::correlation_matrix(all_reports));
        std::ofstream out(reports_dir / "correlations.json");
        out << json{{"metrics", eval::metric_names()}, {"overall", overall}, {"groups", groups}}.dump(2) << "\n";
    }
    {
        std::ofstream tsv(reports_dir / "failures.tsv");
        tsv << "model\tscenario\tstrategy\tbin\ttotal\tdone\tfailed\toverflow\tfailure_rate\n";
        for (const auto& [key, counts] : status_counts) {
            const int total = counts[0] + counts[1] + counts[2];
            const double rate = total > 0 ? static_cast<double>(counts[1] + counts[2]) / total : 0.0;
            tsv << key.model_id << "\t" << key.scenario << "\t" << key.strategy << "\t" << key.bin << "\t" << total
                << "\t" << counts[0] << "\t" << counts[1] << "\t" << counts[2] << "\t" << fmt(rate) << "\n";
        }
    }
}

}  // namespace lcqa::harness
