#pragma once

#include <string>
#include <vector>

#include "lcqa/corpus.hpp"
#include "lcqa/tokenize.hpp"

namespace lcqa::chunking {

/// A fixed-size token window of one note; the retrieval unit.
struct Chunk {
    std::string chunk_id;  // deterministic: "<parent_note_id>#<seq_index>"
    std::string parent_note_id;
    std::string patient_id;
    int seq_index = 0;
    std::int64_t timestamp = 0;  // inherited from the parent note
    std::string text;            // token-aligned slice of the note text
    long long token_count = 0;   // == size for every chunk except possibly the last
};

std::string make_chunk_id(const std::string& parent_note_id, int seq_index);

/// Segments a note into consecutive `size`-token chunks. The concatenated
/// chunk token sequences reproduce the note's token sequence exactly; only
/// the final chunk may be short. Empty note text yields an empty list.
std::vector<Chunk> chunk_note(const corpus::ClinicalNote& note, const TokenCounter& counter, int size = 512);

}  // namespace lcqa::chunking
