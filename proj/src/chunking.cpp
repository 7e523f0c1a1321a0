#include "lcqa/chunking.hpp"

#include <cstdio>

#include "lcqa/errors.hpp"

namespace lcqa::chunking {

std::string make_chunk_id(const std::string& parent_note_id, int seq_index) {
    char suffix[16];
    std::snprintf(suffix, sizeof(suffix), "#%04d", seq_index);
    return parent_note_id + suffix;
}

std::vector<Chunk> chunk_note(const corpus::ClinicalNote& note, const TokenCounter& counter, int size) {
    if (size < 1) throw ConfigError("chunk size must be >= 1, got " + std::to_string(size));

    const auto spans = counter.tokenize(note.text);
    std::vector<Chunk> chunks;
    if (spans.empty()) return chunks;

    const std::size_t n = spans.size();
    const std::size_t width = static_cast<std::size_t>(size);
    chunks.reserve((n + width - 1) / width);
    for (std::size_t start = 0; start < n; start += width) {
        const std::size_t stop = std::min(start + width, n);
        Chunk chunk;
        chunk.parent_note_id = note.note_id;
        chunk.patient_id = note.patient_id;
        chunk.seq_index = static_cast<int>(start / width);
        chunk.chunk_id = make_chunk_id(note.note_id, chunk.seq_index);
        chunk.timestamp = note.timestamp;
        chunk.token_count = static_cast<long long>(stop - start);
        // Slice from the first token's begin to the last token's end; interior
        // whitespace is kept, boundary whitespace belongs to no token.
        chunk.text = note.text.substr(spans[start].begin, spans[stop - 1].end - spans[start].begin);
        chunks.push_back(std::move(chunk));
    }
    return chunks;
}

}  // namespace lcqa::chunking
