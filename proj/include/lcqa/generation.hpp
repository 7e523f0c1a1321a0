#pragma once

#include <optional>
#include <string>
#include <vector>

#include "lcqa/assembly.hpp"
#include "lcqa/corpus.hpp"
#include "lcqa/model_profile.hpp"
#include "lcqa/services.hpp"

namespace lcqa::generation {

struct RetryPolicy {
    int max_attempts = 3;
    int backoff_ms = 50;
};

/// Outcome of one generation call, raw output kept verbatim.
struct GenerationRecord {
    std::string item_id;
    std::string model_id;
    std::string strategy_id;
    corpus::Scenario scenario = corpus::Scenario::include_all;
    std::string raw_output;
    std::string parsed_answer;
    std::optional<std::string> parsed_option;  // multiple_choice only
    double latency_ms = 0.0;
    int prompt_tokens = 0;
    int completion_tokens = 0;
    bool overflow = false;
    bool failed = false;
    int attempts = 0;
    std::string error;
};

/// Sends the prompt, retrying transient failures with exponential backoff.
/// Reasoning-family outputs have the delimited thinking segment stripped
/// before answer parsing. Exhausted retries mark the record failed instead
/// of throwing, so a run can continue.
GenerationRecord generate(const assembly::PromptBundle& bundle, const ModelProfile& profile,
                          services::GenerationService& service, const RetryPolicy& retry = {});

/// Removes the first `open`...`close` block (e.g. <think>...</think>).
std::string strip_thinking(const std::string& raw, const std::string& open, const std::string& close);

/// Pulls the answer out of a structured response: text after the last
/// "[[ ## answer ## ]]" marker up to "[[ ## completed ## ]]"; without the
/// marker the whole trimmed output is the answer.
std::string extract_answer_field(const std::string& output);

/// Option extraction: first a standalone label token ("B", "(B)", "B."),
/// then a case-insensitive whole-output match of an option text. Two
/// distinct standalone labels are ambiguous and parse to null.
std::optional<std::string> extract_option(const std::string& raw_output,
                                          const std::vector<corpus::OptionItem>& options);

}  // namespace lcqa::generation
