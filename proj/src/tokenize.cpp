#include "lcqa/tokenize.hpp"

#include <cctype>

#include "lcqa/errors.hpp"

namespace lcqa::chunking {

namespace {

constexpr std::size_t kWindowBytes = 8;

enum class ByteClass { whitespace, letter, digit, punct };

ByteClass classify(unsigned char c) {
    if (std::isspace(c)) return ByteClass::whitespace;
    if (std::isdigit(c)) return ByteClass::digit;
    // Non-ASCII bytes join letter runs so multi-byte codepoints stay whole.
    if (std::isalpha(c) || c >= 0x80) return ByteClass::letter;
    return ByteClass::punct;
}

bool is_continuation(unsigned char c) {
    return (c & 0xC0) == 0x80;
}

std::vector<TokenSpan> tokenize_whitespace(std::string_view text) {
    std::vector<TokenSpan> spans;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        if (i >= text.size()) break;
        std::size_t b = i;
        while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        spans.push_back({b, i});
    }
    return spans;
}

// Cuts [begin,end) into windows of kWindowBytes, each extended to the next
// codepoint boundary so no window splits a UTF-8 sequence.
void emit_windows(std::string_view text, std::size_t begin, std::size_t end, std::vector<TokenSpan>& out) {
    std::size_t b = begin;
    while (b < end) {
        std::size_t e = b + kWindowBytes;
        if (e >= end) {
            e = end;
        } else {
            while (e < end && is_continuation(static_cast<unsigned char>(text[e]))) ++e;
        }
        out.push_back({b, e});
        b = e;
    }
}

std::vector<TokenSpan> tokenize_subword(std::string_view text) {
    std::vector<TokenSpan> spans;
    std::size_t i = 0;
    const std::size_t n = text.size();
    while (i < n) {
        const ByteClass cls = classify(static_cast<unsigned char>(text[i]));
        if (cls == ByteClass::whitespace) {
            ++i;
            continue;
        }
        if (cls == ByteClass::punct) {
            spans.push_back({i, i + 1});
            ++i;
            continue;
        }
        std::size_t b = i;
        while (i < n && classify(static_cast<unsigned char>(text[i])) == cls) ++i;
        emit_windows(text, b, i, spans);
    }
    return spans;
}

}  // namespace

TokenCounter TokenCounter::make(const std::string& scheme_id) {
    if (scheme_id != "whitespace" && scheme_id != "subword-v1") {
        throw ConfigError("unknown token scheme: " + scheme_id);
    }
    return TokenCounter(scheme_id);
}

std::vector<TokenSpan> TokenCounter::tokenize(std::string_view text) const {
    if (scheme_id_ == "whitespace") return tokenize_whitespace(text);
    return tokenize_subword(text);
}

long long TokenCounter::count(std::string_view text) const {
    return static_cast<long long>(tokenize(text).size());
}

}  // namespace lcqa::chunking
