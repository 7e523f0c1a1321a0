#include "lcqa/generation.hpp"

#include <cctype>
#include <chrono>
#include <set>

#include "lcqa/errors.hpp"
#include "lcqa/text.hpp"

namespace lcqa::generation {

std::string to_string(Family f) {
    return f == Family::instruct ? "instruct" : "reasoning";
}

std::optional<Family> family_from_string(std::string_view s) {
    if (s == "instruct") return Family::instruct;
    if (s == "reasoning") return Family::reasoning;
    return std::nullopt;
}

ModelProfile ModelProfile::make(std::string model_id, Family family) {
    ModelProfile p;
    p.model_id = std::move(model_id);
    p.family = family;
    p.temperature = family == Family::reasoning ? 1.0 : 0.0;
    return p;
}

std::string strip_thinking(const std::string& raw, const std::string& open, const std::string& close) {
    if (open.empty() || close.empty()) return raw;
    const auto b = raw.find(open);
    if (b == std::string::npos) return raw;
    const auto e = raw.find(close, b + open.size());
    if (e == std::string::npos) return raw.substr(0, b);
    return raw.substr(0, b) + raw.substr(e + close.size());
}

std::string extract_answer_field(const std::string& output) {
    static const std::string answer_marker = "[[ ## answer ## ]]";
    static const std::string completed_marker = "[[ ## completed ## ]]";
    const auto pos = output.rfind(answer_marker);
    if (pos == std::string::npos) return util::trim(output);
    const auto start = pos + answer_marker.size();
    auto stop = output.find(completed_marker, start);
    if (stop == std::string::npos) stop = output.size();
    return util::trim(output.substr(start, stop - start));
}

GenerationRecord generate(const assembly::PromptBundle& bundle, const ModelProfile& profile,
                          services::GenerationService& service, const RetryPolicy& retry) {
    GenerationRecord record;
    record.model_id = profile.model_id;

    services::GenerationRequest request;
    request.model_id = profile.model_id;
    request.system_text = bundle.system_text;
    request.user_text = bundle.user_text;
    request.temperature = bundle.temperature;
    request.max_tokens = bundle.max_output_tokens;

    const auto t0 = std::chrono::steady_clock::now();
    services::GenerationResponse response;
    try {
        services::with_retries(
            retry.max_attempts, retry.backoff_ms, [&] { response = service.generate(request); }, &record.attempts);
    } catch (const ServiceError& e) {
        record.failed = true;
        record.error = e.what();
    }
    const auto t1 = std::chrono::steady_clock::now();
    record.latency_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();

    if (record.failed) return record;

    record.raw_output = response.text;
    record.prompt_tokens = response.prompt_tokens;
    record.completion_tokens = response.completion_tokens;

    std::string visible = response.text;
    if (profile.family == Family::reasoning) {
        visible = strip_thinking(visible, profile.think_open, profile.think_close);
    }
    record.parsed_answer = extract_answer_field(visible);
    return record;
}

namespace {

// Strips label decoration: "(B)" -> "B", "B." -> "B", "B:" -> "B".
std::string strip_token_punct(std::string_view token) {
    std::size_t b = 0, e = token.size();
    auto is_decor = [](char c) {
        return c == '(' || c == ')' || c == '[' || c == ']' || c == '.' || c == ':' || c == ',' || c == ';' ||
               c == '"' || c == '\'' || c == '*';
    };
    while (b < e && is_decor(token[b])) ++b;
    while (e > b && is_decor(token[e - 1])) --e;
    return std::string(token.substr(b, e - b));
}

std::vector<std::string> whitespace_tokens(const std::string& text) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        std::size_t b = i;
        while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        if (i > b) out.push_back(text.substr(b, i - b));
    }
    return out;
}

}  // namespace

std::optional<std::string> extract_option(const std::string& raw_output,
                                          const std::vector<corpus::OptionItem>& options) {
    if (options.empty()) return std::nullopt;

    std::set<std::string> labels;
    for (const auto& o : options) labels.insert(o.label);

    // Rule 1: standalone label tokens, case-sensitive so the article "a"
    // does not read as option A. Multiple distinct labels are ambiguous.
    std::set<std::string> found;
    for (const auto& token : whitespace_tokens(raw_output)) {
        const std::string bare = strip_token_punct(token);
        if (labels.count(bare)) found.insert(bare);
    }
    if (found.size() == 1) return *found.begin();
    if (found.size() > 1) return std::nullopt;

    // Rule 2: whole output equals one option's text, case-insensitive.
    const std::string norm = util::to_lower(util::collapse_whitespace(raw_output));
    for (const auto& o : options) {
        if (norm == util::to_lower(util::collapse_whitespace(o.text))) return o.label;
    }
    return std::nullopt;
}

}  // namespace lcqa::generation
