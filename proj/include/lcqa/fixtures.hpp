#pragma once

#include <cstdint>
#include <filesystem>

#include "lcqa/corpus.hpp"

namespace lcqa::fixtures {

struct FixtureSpec {
    int patients = 12;
    int notes_per_patient = 6;
    int items = 60;
    std::uint64_t seed = 17;
    int min_sentences_per_note = 6;
    int max_sentences_per_note = 24;
};

/// Deterministic synthetic corpus in the production schema. Each QA item
/// plants a unique marker sentence in one note so retrieval has a findable
/// target; tasks cycle through extractive, open-ended and multiple choice.
corpus::Corpus make_fixture(const FixtureSpec& spec);

/// Writes notes.jsonl / qa.jsonl under `dir`.
void write_fixture(const corpus::Corpus& corpus, const std::filesystem::path& dir);

}  // namespace lcqa::fixtures
