#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lcqa/assembly.hpp"
#include "lcqa/corpus.hpp"
#include "lcqa/generation.hpp"
#include "lcqa/services.hpp"

namespace lcqa::eval {

/// Exact-match METEOR: unigram alignment over lowercased alphanumeric
/// tokens, recall-weighted harmonic mean F (9:1), fragmentation penalty
/// 0.5 * (chunks/matches)^3. No stemming or synonymy resources.
double meteor(const std::string& candidate, const std::string& reference);

struct SemanticF1 {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    bool flagged = false;  // empty candidate or reference
};

/// Greedy token-level cosine matching: precision is the mean over candidate
/// tokens of the best cosine against any reference token, recall symmetric,
/// f1 their harmonic mean.
SemanticF1 semantic_f1(const std::string& candidate, const std::string& reference,
                       services::TokenEmbedder& embedder);

struct NliResult {
    std::optional<double> entailment;
    std::optional<double> non_contradiction;
    bool flagged = false;  // malformed distribution
};

/// Reference is the premise, candidate the hypothesis. entailment =
/// P(entail); non_contradiction = 1 - P(contradict). A distribution not
/// summing to 1 (+-1e-6) or leaving [0,1] flags the item with null scores.
NliResult nli_scores(const std::string& reference, const std::string& candidate, services::NliService& service);

struct JudgeResult {
    std::optional<double> correctness;
    std::optional<double> completeness;
    std::optional<double> faithfulness;
    bool parse_failed = false;
};

/// Asks the judge service to rate 1-5 on the three rubric aspects and maps
/// each score to [0,100] via (s-1)/4*100. An unparseable response gets one
/// re-ask; persistent failure yields nulls with the parse flag set.
JudgeResult judge_scores(const std::string& question, const std::string& reference, const std::string& candidate,
                         services::GenerationService& judge, const assembly::JudgeTemplate& rubric,
                         const std::string& judge_model_id);

/// Fraction of records whose parsed_option equals the item's correct
/// option; null parses count as incorrect; failed generations are excluded
/// from the denominator. Empty denominator reports null.
std::optional<double> mc_accuracy(const std::vector<generation::GenerationRecord>& records,
                                  const std::map<std::string, corpus::QAItem>& items_by_id);

struct MetricReport {
    std::string item_id;
    std::optional<double> meteor;
    std::optional<double> semantic_precision;
    std::optional<double> semantic_recall;
    std::optional<double> semantic_f1;
    std::optional<double> nli_entailment;
    std::optional<double> nli_non_contradiction;
    std::optional<double> judge_correctness;
    std::optional<double> judge_completeness;
    std::optional<double> judge_faithfulness;
    std::optional<bool> mc_correct;
    std::vector<std::string> flags;
};

struct GroupKey {
    std::string model_id;
    std::string scenario;
    std::string strategy;
    std::string bin;

    auto operator<=>(const GroupKey&) const = default;
};

struct ScoredItem {
    GroupKey key;
    MetricReport report;
};

struct MetricStats {
    double mean = 0.0;
    int count = 0;
    double normalized = 0.0;
    bool degenerate = false;  // min == max across groups
};

struct AggregateGroup {
    GroupKey key;
    std::map<std::string, MetricStats> stats;
    // Pairwise linear correlation over item-level scores, null-skipping;
    // groups with fewer than two items carry all-null entries.
    std::vector<std::vector<std::optional<double>>> correlation;
};

struct AggregateReport {
    std::vector<std::string> metric_names;
    std::vector<AggregateGroup> groups;
};

/// Metric columns in canonical order (used by correlation matrices and
/// report files).
const std::vector<std::string>& metric_names();

std::optional<double> metric_value(const MetricReport& report, const std::string& name);

/// Groups by (model, scenario, strategy, bin), computes per-metric means and
/// counts, min-max normalizes each metric's means across groups (degenerate
/// spread maps to 0 and is flagged), and fills per-group correlations.
AggregateReport aggregate(const std::vector<ScoredItem>& items);

/// Pearson correlation matrix over the given reports, null-skipping.
std::vector<std::vector<std::optional<double>>> correlation_matrix(const std::vector<const MetricReport*>& reports);

}  // namespace lcqa::eval
