#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "lcqa/assembly.hpp"
#include "lcqa/corpus.hpp"
#include "lcqa/generation.hpp"
#include "lcqa/retrieval.hpp"

namespace lcqa::harness {

struct MetricToggles {
    bool meteor = true;
    bool semantic_f1 = true;
    bool nli = true;
    bool judge = true;
    bool mc_accuracy = true;

    bool any() const { return meteor || semantic_f1 || nli || judge || mc_accuracy; }
};

/// Endpoints accept either "stub:<name>" (in-process) or an http base url.
/// Stubs: embedding "stub:onehot"; nli "stub:match" or "stub:fixed:e,n,c";
/// generation "stub:echo-gold" or "stub:fixed:<text>"; judge "stub:judge:c/p/f".
struct ServiceConfig {
    std::string embedding_endpoint = "stub:onehot";
    std::string embedding_model_id = "embedder";
    std::string token_embedding_endpoint = "stub:onehot";
    std::string token_embedding_model_id = "token-embedder";
    std::string nli_endpoint = "stub:match";
    std::string judge_endpoint = "stub:judge:5/5/5";
    std::string judge_model_id = "judge";
    int timeout_ms = 30000;
    int retries = 3;
    int in_flight = 4;
};

struct ExperimentConfig {
    std::string notes_file;
    std::string qa_file;
    std::vector<corpus::Scenario> scenarios = {corpus::Scenario::exclude_all, corpus::Scenario::exclude_relevant,
                                               corpus::Scenario::include_all, corpus::Scenario::include_related};
    std::vector<assembly::Strategy> strategies = {
        assembly::Strategy::full_context(),      assembly::Strategy::rag_chunks(5),
        assembly::Strategy::rag_chunks(10),      assembly::Strategy::rag_chunks(15),
        assembly::Strategy::rag_hierarchical(3), assembly::Strategy::rag_hierarchical(5),
        assembly::Strategy::rag_hierarchical(7)};
    std::vector<generation::ModelProfile> models = {
        generation::ModelProfile::make("stub-echo", generation::Family::instruct)};
    retrieval::Bm25Params bm25;
    retrieval::FusionParams fusion;
    int chunk_size = 512;
    std::string token_scheme = "subword-v1";
    MetricToggles metrics;
    ServiceConfig services;
    std::string template_dir;  // empty = builtin templates
    std::string cache_dir = ".lcqa-cache";
    std::string output_dir = "runs";
    std::uint64_t seed = 17;
    long long min_context_tokens = 0;
    int workers = 4;
};

/// Reads a JSON config file, applies LCQA_* environment overrides
/// (endpoints and cache dir), and schema-validates.
ExperimentConfig load_config(const std::filesystem::path& path);

/// Fails fast on an impossible configuration.
void validate(const ExperimentConfig& config);

nlohmann::json config_to_json(const ExperimentConfig& config);

/// Digest of the canonical config serialization; changes iff config changes.
std::string config_digest(const ExperimentConfig& config);

struct RunManifest {
    std::string config_digest;
    std::map<std::string, std::string> template_ids;
    std::string token_scheme;
    std::map<std::string, std::string> service_model_ids;
    std::string started_at;
    std::string finished_at;
};

struct RunOptions {
    /// Polled between tasks; returning true stops the run gracefully. The
    /// journal keeps everything already settled, so a later invocation
    /// resumes without recomputation.
    std::function<bool()> should_stop;
};

struct RunResult {
    RunManifest manifest;
    std::filesystem::path run_dir;
    int total_tasks = 0;
    int completed_tasks = 0;
    int failed_tasks = 0;   // failed + overflow-skipped
    bool completed = false;
};

/// Executes the (item x scenario x strategy x model) grid with incremental
/// persistence. Output layout: <output_dir>/<digest16>/ with manifest.json,
/// journal.jsonl (append order), records.jsonl + scores.jsonl (canonical
/// task order) and reports/.
RunResult run_experiment(const ExperimentConfig& config, const RunOptions& options = {});

/// (Re)generates reports/ from the journal: per-group aggregate means with
/// min-max normalization, correlation matrices, and a failure-rate table.
void write_reports(const std::filesystem::path& run_dir);

}  // namespace lcqa::harness
