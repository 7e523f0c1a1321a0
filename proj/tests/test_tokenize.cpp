#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "lcqa/errors.hpp"
#include "lcqa/tokenize.hpp"

using lcqa::chunking::TokenCounter;

TEST_CASE("whitespace scheme counts maximal non-space runs") {
    auto counter = TokenCounter::make("whitespace");
    CHECK(counter.count("") == 0);
    CHECK(counter.count("a b c") == 3);
    CHECK(counter.count("  a\t b \n c  ") == 3);
    CHECK(counter.count("one-token") == 1);
}

TEST_CASE("subword scheme splits long words and punctuation") {
    auto counter = TokenCounter::make("subword-v1");
    CHECK(counter.count("") == 0);
    CHECK(counter.count("a b c") == 3);
    // "pneumonia" = 9 letters -> windows of 8+1
    CHECK(counter.count("pneumonia") == 2);
    // digits split from letters, punctuation one token per char
    CHECK(counter.count("type2") == 2);
    CHECK(counter.count("bp120/80.") == 5);  // bp, 120, /, 80, .
}

TEST_CASE("unknown scheme is a configuration error") {
    CHECK_THROWS_AS(TokenCounter::make("bpe-gigantic"), lcqa::ConfigError);
}

TEST_CASE("token spans are contiguous, non-overlapping and inside the text") {
    auto counter = TokenCounter::make("subword-v1");
    const std::string text = "Admitted 2113-09-30, bp 120/80; naproxen 500mg PO daily.";
    const auto spans = counter.tokenize(text);
    REQUIRE(!spans.empty());
    std::size_t prev_end = 0;
    for (const auto& s : spans) {
        CHECK(s.begin < s.end);
        CHECK(s.begin >= prev_end);
        CHECK(s.end <= text.size());
        prev_end = s.end;
    }
}

TEST_CASE("subword windows never split a UTF-8 codepoint") {
    auto counter = TokenCounter::make("subword-v1");
    // 12 two-byte codepoints in a row: windows must end on boundaries.
    const std::string text =
        "\xc3\xa9\xc3\xa9\xc3\xa9\xc3\xa9\xc3\xa9\xc3\xa9\xc3\xa9\xc3\xa9\xc3\xa9\xc3\xa9\xc3\xa9\xc3\xa9";
    for (const auto& s : counter.tokenize(text)) {
        CHECK((static_cast<unsigned char>(text[s.begin]) & 0xC0) != 0x80);
        if (s.end < text.size()) {
            CHECK((static_cast<unsigned char>(text[s.end]) & 0xC0) != 0x80);
        }
    }
}

TEST_CASE("counting is deterministic and monotone under concatenation") {
    std::mt19937_64 rng(411);
    std::uniform_int_distribution<int> len(0, 60);
    std::uniform_int_distribution<int> ch(0, 15);
    auto random_text = [&](int n) {
        static const char alphabet[] = {'a', 'b', 'z', 'q', '0', '7', ' ', ' ',
                                        '.', '-', '/', 'M', 'x', '\t', '\n', 'e'};
        std::string s;
        for (int i = 0; i < n; ++i) s.push_back(alphabet[ch(rng)]);
        return s;
    };

    for (const char* scheme : {"whitespace", "subword-v1"}) {
        auto counter = TokenCounter::make(scheme);
        for (int trial = 0; trial < 500; ++trial) {
            const std::string a = random_text(len(rng));
            const std::string b = random_text(len(rng));
            const auto ca = counter.count(a);
            const auto cb = counter.count(b);
            const auto cab = counter.count(a + b);
            CHECK(cab >= std::max(ca, cb));
            CHECK(counter.count(a) == ca);  // deterministic
        }
    }
}

TEST_CASE("monotonicity holds with multi-byte text at the junction") {
    auto counter = TokenCounter::make("subword-v1");
    std::mt19937_64 rng(97);
    std::uniform_int_distribution<int> len(0, 30);
    std::uniform_int_distribution<int> pick(0, 5);
    auto random_text = [&](int n) {
        static const char* pieces[] = {"\xc3\xa9", "a", " ", "42", "\xe2\x82\xac", "."};
        std::string s;
        for (int i = 0; i < n; ++i) s += pieces[pick(rng)];
        return s;
    };
    for (int trial = 0; trial < 500; ++trial) {
        const std::string a = random_text(len(rng));
        const std::string b = random_text(len(rng));
        CHECK(counter.count(a + b) >= std::max(counter.count(a), counter.count(b)));
    }
}
