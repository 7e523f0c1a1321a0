#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace lcqa::chunking {

/// Half-open byte range of one token inside the source text.
struct TokenSpan {
    std::size_t begin = 0;
    std::size_t end = 0;
};

/// Deterministic token counting with a named, versioned scheme.
///
/// Two schemes ship with the repo:
///  - "whitespace": tokens are maximal non-whitespace runs.
///  - "subword-v1" (default): words are split at letter/digit boundaries,
///    ASCII punctuation is one token per character, and long runs are cut
///    into windows of at most 8 bytes (extended to the next UTF-8 codepoint
///    boundary so a token never splits a codepoint).
///
/// Both schemes guarantee count(a + b) >= max(count(a), count(b)) and tokens
/// are contiguous, non-overlapping byte spans, so chunk slices can be cut at
/// token boundaries without loss.
class TokenCounter {
public:
    static TokenCounter make(const std::string& scheme_id);

    const std::string& scheme_id() const { return scheme_id_; }

    std::vector<TokenSpan> tokenize(std::string_view text) const;

    long long count(std::string_view text) const;

private:
    explicit TokenCounter(std::string scheme_id) : scheme_id_(std::move(scheme_id)) {}

    std::string scheme_id_;
};

}  // namespace lcqa::chunking
