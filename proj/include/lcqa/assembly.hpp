#pragma once

#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "lcqa/chunking.hpp"
#include "lcqa/corpus.hpp"
#include "lcqa/model_profile.hpp"
#include "lcqa/retrieval.hpp"

namespace lcqa::assembly {

/// Context construction strategy. Canonical ids: "full_context", "rag_<k>"
/// (direct chunk inclusion) and "rag_hir_<k>" (deduplicated parent notes).
struct Strategy {
    enum class Kind { full_context, rag_chunks, rag_hierarchical };

    Kind kind = Kind::full_context;
    int k = 0;

    std::string id() const;
    static std::optional<Strategy> parse(std::string_view text);

    static Strategy full_context() { return {Kind::full_context, 0}; }
    static Strategy rag_chunks(int k) { return {Kind::rag_chunks, k}; }
    static Strategy rag_hierarchical(int k) { return {Kind::rag_hierarchical, k}; }

    bool operator==(const Strategy&) const = default;
};

struct Segment {
    std::string text;
    std::string parent_note_id;
    std::int64_t timestamp = 0;
    int seq_index = 0;       // chunk position within the parent; 0 for whole notes
    int source_rank = 0;     // best retrieval rank that pulled this segment in; 0 = unranked
    corpus::NoteType note_type = corpus::NoteType::other;
};

/// A prompt-ready context: segments in ascending (timestamp, parent_note_id,
/// seq_index) order, never retrieval-score order.
struct AssembledContext {
    std::string item_id;
    Strategy strategy;
    std::vector<Segment> segments;
    long long token_count = 0;
    corpus::ContextBin bin = corpus::ContextBin::bin_short;
    bool over_cap = false;
    bool overflow_trimmed = false;  // segments were dropped to fit a model window
};

/// Resolves chunk ids against one scenario's notes and chunks.
class ChunkStore {
public:
    ChunkStore(std::vector<corpus::ClinicalNote> scenario_notes, std::vector<chunking::Chunk> chunks);

    const chunking::Chunk* find_chunk(const std::string& chunk_id) const;
    const corpus::ClinicalNote* find_note(const std::string& note_id) const;
    const std::vector<corpus::ClinicalNote>& notes() const { return notes_; }
    const std::vector<chunking::Chunk>& chunks() const { return chunks_; }

private:
    std::vector<corpus::ClinicalNote> notes_;
    std::vector<chunking::Chunk> chunks_;
    std::unordered_map<std::string, std::size_t> note_index_;
    std::unordered_map<std::string, std::size_t> chunk_index_;
};

/// Order-preserving assembly: rag_<k> takes the top-k chunks re-sorted
/// temporally; rag_hir_<k> takes the deduplicated parent notes of the top-k
/// chunks as whole-note segments; full_context takes every scenario note.
AssembledContext assemble(const retrieval::RankedList& ranked, const ChunkStore& store, Strategy strategy,
                          const chunking::TokenCounter& counter, const std::string& item_id);

/// Drops every segment of the worst-ranked source (whole parent for the
/// hierarchical strategy) and recomputes counts. Returns false when there is
/// nothing rankable left to drop.
bool drop_lowest_ranked(AssembledContext& context, const chunking::TokenCounter& counter);

struct PromptBundle {
    std::string system_text;
    std::string user_text;
    corpus::TaskType task = corpus::TaskType::open_ended;
    double temperature = 0.0;
    int max_output_tokens = 512;
    std::optional<int> think_token_budget;
};

struct TaskTemplate {
    std::string id;
    std::string system_text;
};

struct JudgeTemplate {
    std::string id;
    std::string system_text;
    std::string user_pattern;  // placeholders {question} {reference} {candidate}
};

/// One-shot exemplar: a fixed synthetic mini-record.
struct Exemplar {
    std::vector<std::string> record_lines;
    std::string question;
    std::string answer;
    std::vector<corpus::OptionItem> mc_options;
    std::string mc_question;
    std::string mc_answer;
};

struct TemplateSet {
    TaskTemplate extractive;
    TaskTemplate multiple_choice;
    TaskTemplate open_ended;
    JudgeTemplate judge;
    Exemplar exemplar;

    static TemplateSet builtin();
    /// Loads the same layout from versioned text files in a directory.
    static TemplateSet load(const std::filesystem::path& dir);

    const TaskTemplate& for_task(corpus::TaskType task) const;
};

/// Renders the structured one-shot prompt: chronological medical_record
/// list, the question, task-specific output instructions, and decoding
/// settings from the model profile.
PromptBundle render_prompt(const AssembledContext& context, const corpus::QAItem& item,
                           const generation::ModelProfile& profile, const TemplateSet& templates);

/// Header line prefixed to each segment: "[<note_type> | <timestamp>] ".
std::string segment_display(const Segment& segment);

}  // namespace lcqa::assembly
