#pragma once

#include <optional>
#include <string>

namespace lcqa::generation {

enum class Family { instruct, reasoning };

std::string to_string(Family f);
std::optional<Family> family_from_string(std::string_view s);

/// One generation backend. Temperature defaults by family (instruct 0,
/// reasoning 1) and may be overridden; think budgets apply to the reasoning
/// family only.
struct ModelProfile {
    std::string model_id;
    Family family = Family::instruct;
    long long context_window = 131072;
    double temperature = 0.0;
    std::optional<int> think_token_budget;
    std::string endpoint = "stub:echo-gold";
    int max_output_tokens = 512;
    std::string think_open = "<think>";
    std::string think_close = "</think>";

    static ModelProfile make(std::string model_id, Family family);
};

}  // namespace lcqa::generation
