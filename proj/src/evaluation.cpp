#include "lcqa/evaluation.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>

#include "lcqa/errors.hpp"
#include "lcqa/log.hpp"
#include "lcqa/text.hpp"

namespace lcqa::eval {

// ---------------------------------------------------------------------------
// METEOR (exact-match variant)
// ---------------------------------------------------------------------------

namespace {

constexpr double kMeteorAlpha = 0.9;  // recall weight in the harmonic mean
constexpr double kMeteorBeta = 3.0;   // fragmentation exponent
constexpr double kMeteorGamma = 0.5;  // penalty weight

// Exact unigram alignment; pairs are matched scanning both sides from the
// end, then sorted by candidate position for chunk counting.
std::vector<std::pair<int, int>> align_exact(const std::vector<std::string>& cand,
                                             const std::vector<std::string>& ref) {
    std::vector<bool> ref_used(ref.size(), false);
    std::vector<std::pair<int, int>> matches;
    for (int i = static_cast<int>(cand.size()) - 1; i >= 0; --i) {
        for (int j = static_cast<int>(ref.size()) - 1; j >= 0; --j) {
            if (!ref_used[static_cast<std::size_t>(j)] && cand[static_cast<std::size_t>(i)] == ref[static_cast<std::size_t>(j)]) {
                matches.push_back({i, j});
                ref_used[static_cast<std::size_t>(j)] = true;
                break;
            }
        }
    }
    std::sort(matches.begin(), matches.end());
    return matches;
}

int count_alignment_chunks(const std::vector<std::pair<int, int>>& matches) {
    if (matches.empty()) return 0;
    int chunks = 1;
    for (std::size_t i = 1; i < matches.size(); ++i) {
        const bool contiguous =
            matches[i].first == matches[i - 1].first + 1 && matches[i].second == matches[i - 1].second + 1;
        if (!contiguous) ++chunks;
    }
    return chunks;
}

}  // namespace

double meteor(const std::string& candidate, const std::string& reference) {
    const auto cand = util::lex_terms(candidate);
    const auto ref = util::lex_terms(reference);
    if (cand.empty() || ref.empty()) return 0.0;

    const auto matches = align_exact(cand, ref);
    const double m = static_cast<double>(matches.size());
    if (m == 0.0) return 0.0;

    const double precision = m / static_cast<double>(cand.size());
    const double recall = m / static_cast<double>(ref.size());
    const double fmean = (precision * recall) / (kMeteorAlpha * precision + (1.0 - kMeteorAlpha) * recall);
    const double frag = static_cast<double>(count_alignment_chunks(matches)) / m;
    const double penalty = kMeteorGamma * std::pow(frag, kMeteorBeta);
    return (1.0 - penalty) * fmean;
}

// ---------------------------------------------------------------------------
// Semantic F1
// ---------------------------------------------------------------------------

namespace {

double row_norm(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

double greedy_mean_max_cosine(const retrieval::TokenEmbeddingMatrix& from,
                              const retrieval::TokenEmbeddingMatrix& to) {
    if (from.rows.empty() || to.rows.empty()) return 0.0;
    std::vector<double> to_norms;
    to_norms.reserve(to.rows.size());
    for (const auto& r : to.rows) to_norms.push_back(row_norm(r));

    double total = 0.0;
    for (const auto& q : from.rows) {
        const double qn = row_norm(q);
        double best = 0.0;
        if (qn > 0.0) {
            for (std::size_t j = 0; j < to.rows.size(); ++j) {
                if (to_norms[j] == 0.0) continue;
                const auto& d = to.rows[j];
                double dot = 0.0;
                for (std::size_t i = 0; i < q.size(); ++i) {
                    dot += static_cast<double>(q[i]) * static_cast<double>(d[i]);
                }
                best = std::max(best, dot / (qn * to_norms[j]));
            }
        }
        total += best;
    }
    return total / static_cast<double>(from.rows.size());
}

}  // namespace

SemanticF1 semantic_f1(const std::string& candidate, const std::string& reference,
                       services::TokenEmbedder& embedder) {
    SemanticF1 out;
    if (util::lex_terms(candidate).empty() || util::lex_terms(reference).empty()) {
        out.flagged = true;
        return out;
    }
    auto matrices = embedder.embed_tokens({candidate, reference});
    const auto& cand = matrices.at(0);
    const auto& ref = matrices.at(1);
    if (cand.rows.empty() || ref.rows.empty()) {
        out.flagged = true;
        return out;
    }
    out.precision = greedy_mean_max_cosine(cand, ref);
    out.recall = greedy_mean_max_cosine(ref, cand);
    if (out.precision + out.recall > 0.0) {
        out.f1 = 2.0 * out.precision * out.recall / (out.precision + out.recall);
    }
    return out;
}

// ---------------------------------------------------------------------------
// NLI mapping
// ---------------------------------------------------------------------------

NliResult nli_scores(const std::string& reference, const std::string& candidate, services::NliService& service) {
    NliResult out;
    services::NliDistribution dist;
    try {
        dist = service.classify(reference, candidate);
    } catch (const ServiceError& e) {
        log::warn(std::string("nli service failure: ") + e.what());
        out.flagged = true;
        return out;
    }
    const double sum = dist.entail + dist.neutral + dist.contradict;
    const bool in_range = dist.entail >= 0.0 && dist.neutral >= 0.0 && dist.contradict >= 0.0 &&
                          dist.entail <= 1.0 && dist.neutral <= 1.0 && dist.contradict <= 1.0;
    if (!in_range || std::abs(sum - 1.0) > 1e-6) {
        log::warn("nli service returned a malformed distribution");
        out.flagged = true;
        return out;
    }
    out.entailment = dist.entail;
    out.non_contradiction = 1.0 - dist.contradict;
    return out;
}

// ---------------------------------------------------------------------------
// LLM judge
// ---------------------------------------------------------------------------

namespace {

// Hand-rolled instead of std::regex: judge parsing runs on worker threads
// and libstdc++ regex lazily mutates a shared locale facet cache.
std::optional<int> parse_aspect(const std::string& text, const std::string& aspect) {
    const std::string haystack = util::to_lower(text);
    const std::string needle = util::to_lower(aspect);
    std::size_t pos = 0;
    while ((pos = haystack.find(needle, pos)) != std::string::npos) {
        std::size_t i = pos + needle.size();
        while (i < haystack.size() && (haystack[i] == ' ' || haystack[i] == '\t')) ++i;
        if (i < haystack.size() && (haystack[i] == ':' || haystack[i] == '=')) {
            ++i;
            while (i < haystack.size() && (haystack[i] == ' ' || haystack[i] == '\t')) ++i;
            if (i < haystack.size() && haystack[i] >= '1' && haystack[i] <= '5') {
                const bool delimited = i + 1 >= haystack.size() ||
                                       !std::isalnum(static_cast<unsigned char>(haystack[i + 1]));
                if (delimited) return haystack[i] - '0';
            }
        }
        pos += needle.size();
    }
    return std::nullopt;
}

std::string fill_pattern(std::string pattern, const std::string& question, const std::string& reference,
                         const std::string& candidate) {
    auto replace_all = [](std::string& s, const std::string& from, const std::string& to) {
        std::size_t pos = 0;
        while ((pos = s.find(from, pos)) != std::string::npos) {
            s.replace(pos, from.size(), to);
            pos += to.size();
        }
    };
    replace_all(pattern, "{question}", question);
    replace_all(pattern, "{reference}", reference);
    replace_all(pattern, "{candidate}", candidate);
    return pattern;
}

double to_hundred(int score) {
    return static_cast<double>(score - 1) / 4.0 * 100.0;
}

}  // namespace

JudgeResult judge_scores(const std::string& question, const std::string& reference, const std::string& candidate,
                         services::GenerationService& judge, const assembly::JudgeTemplate& rubric,
                         const std::string& judge_model_id) {
    services::GenerationRequest request;
    request.model_id = judge_model_id;
    request.system_text = rubric.system_text;
    request.user_text = fill_pattern(rubric.user_pattern, question, reference, candidate);
    request.temperature = 0.0;
    request.max_tokens = 64;

    JudgeResult out;
    for (int ask = 0; ask < 2; ++ask) {  // one bounded re-ask
        std::string text;
        try {
            text = judge.generate(request).text;
        } catch (const ServiceError& e) {
            log::warn(std::string("judge service failure: ") + e.what());
            continue;
        }
        const auto correctness = parse_aspect(text, "correctness");
        const auto completeness = parse_aspect(text, "completeness");
        const auto faithfulness = parse_aspect(text, "faithfulness");
        if (correctness && completeness && faithfulness) {
            out.correctness = to_hundred(*correctness);
            out.completeness = to_hundred(*completeness);
            out.faithfulness = to_hundred(*faithfulness);
            return out;
        }
    }
    out.parse_failed = true;
    return out;
}

// ---------------------------------------------------------------------------
// MC accuracy
// ---------------------------------------------------------------------------

std::optional<double> mc_accuracy(const std::vector<generation::GenerationRecord>& records,
                                  const std::map<std::string, corpus::QAItem>& items_by_id) {
    long long correct = 0, total = 0;
    for (const auto& rec : records) {
        if (rec.failed) continue;  // reported in the failure rate instead
        auto it = items_by_id.find(rec.item_id);
        if (it == items_by_id.end()) {
            throw IntegrityError("mc_accuracy: record for unknown item '" + rec.item_id + "'");
        }
        const auto& item = it->second;
        if (item.task != corpus::TaskType::multiple_choice) {
            throw ConfigError("mc_accuracy: item '" + rec.item_id + "' is not multiple_choice");
        }
        ++total;
        if (rec.parsed_option && item.correct_option && *rec.parsed_option == *item.correct_option) ++correct;
    }
    if (total == 0) return std::nullopt;
    return static_cast<double>(correct) / static_cast<double>(total);
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

const std::vector<std::string>& metric_names() {
    static const std::vector<std::string> names = {
        "meteor",          "semantic_f1",      "nli_entailment",     "nli_non_contradiction",
        "judge_correctness", "judge_completeness", "judge_faithfulness", "mc_accuracy"};
    return names;
}

std::optional<double> metric_value(const MetricReport& report, const std::string& name) {
    if (name == "meteor") return report.meteor;
    if (name == "semantic_f1") return report.semantic_f1;
    if (name == "nli_entailment") return report.nli_entailment;
    if (name == "nli_non_contradiction") return report.nli_non_contradiction;
    if (name == "judge_correctness") return report.judge_correctness;
    if (name == "judge_completeness") return report.judge_completeness;
    if (name == "judge_faithfulness") return report.judge_faithfulness;
    if (name == "mc_accuracy") {
        if (!report.mc_correct) return std::nullopt;
        return *report.mc_correct ? 1.0 : 0.0;
    }
    return std::nullopt;
}

std::vector<std::vector<std::optional<double>>> correlation_matrix(const std::vector<const MetricReport*>& reports) {
    const auto& names = metric_names();
    const std::size_t n = names.size();
    std::vector<std::vector<std::optional<double>>> matrix(n, std::vector<std::optional<double>>(n));

    for (std::size_t a = 0; a < n; ++a) {
        for (std::size_t b = a; b < n; ++b) {
            // Pairwise-complete observations.
            std::vector<double> xs, ys;
            for (const auto* r : reports) {
                const auto x = metric_value(*r, names[a]);
                const auto y = metric_value(*r, names[b]);
                if (x && y) {
                    xs.push_back(*x);
                    ys.push_back(*y);
                }
            }
            if (xs.size() < 2) continue;
            if (a == b) {
                matrix[a][b] = 1.0;
                continue;
            }
            const double nn = static_cast<double>(xs.size());
            double mx = 0.0, my = 0.0;
            for (std::size_t i = 0; i < xs.size(); ++i) {
                mx += xs[i];
                my += ys[i];
            }
            mx /= nn;
            my /= nn;
            double sxy = 0.0, sxx = 0.0, syy = 0.0;
            for (std::size_t i = 0; i < xs.size(); ++i) {
                sxy += (xs[i] - mx) * (ys[i] - my);
                sxx += (xs[i] - mx) * (xs[i] - mx);
                syy += (ys[i] - my) * (ys[i] - my);
            }
            if (sxx <= 0.0 || syy <= 0.0) continue;  // zero variance: undefined
            const double r = sxy / std::sqrt(sxx * syy);
            matrix[a][b] = r;
            matrix[b][a] = r;
        }
    }
    return matrix;
}

AggregateReport aggregate(const std::vector<ScoredItem>& items) {
    AggregateReport report;
    report.metric_names = metric_names();

    std::map<GroupKey, std::vector<const MetricReport*>> groups;
    for (const auto& item : items) groups[item.key].push_back(&item.report);

    for (const auto& [key, reports] : groups) {
        AggregateGroup group;
        group.key = key;
        for (const auto& name : report.metric_names) {
            MetricStats stats;
            double sum = 0.0;
            for (const auto* r : reports) {
                if (auto v = metric_value(*r, name)) {
                    sum += *v;
                    ++stats.count;
                }
            }
            if (stats.count > 0) stats.mean = sum / static_cast<double>(stats.count);
            group.stats[name] = stats;
        }
        group.correlation = correlation_matrix(reports);
        report.groups.push_back(std::move(group));
    }

    // Min-max normalization of group means, per metric, across groups.
    for (const auto& name : report.metric_names) {
        double lo = std::numeric_limits<double>::infinity();
        double hi = -std::numeric_limits<double>::infinity();
        for (const auto& g : report.groups) {
            const auto& s = g.stats.at(name);
            if (s.count == 0) continue;
            lo = std::min(lo, s.mean);
            hi = std::max(hi, s.mean);
        }
        for (auto& g : report.groups) {
            auto& s = g.stats.at(name);
            if (s.count == 0) continue;
            if (hi > lo) {
                s.normalized = (s.mean - lo) / (hi - lo);
            } else {
                s.normalized = 0.0;  // degenerate spread maps to 0
                s.degenerate = true;
            }
        }
    }
    return report;
}

}  // namespace lcqa::eval
