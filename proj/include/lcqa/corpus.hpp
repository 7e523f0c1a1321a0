#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "lcqa/tokenize.hpp"

namespace lcqa::corpus {

enum class NoteType { discharge_summary, clinical_note, radiology_report, other };

std::string to_string(NoteType t);
std::optional<NoteType> note_type_from_string(std::string_view s);

enum class TaskType { extractive, multiple_choice, open_ended };

std::string to_string(TaskType t);
std::optional<TaskType> task_from_string(std::string_view s);

enum class Scenario { exclude_all, exclude_relevant, include_all, include_related };

std::string to_string(Scenario s);
std::optional<Scenario> scenario_from_string(std::string_view s);

/// Context-length bin; boundaries are half-open with the edge value in the
/// upper bin: short [0,8000), medium [8000,16000), large [16000,32000),
/// extended [32000,...]. Counts above 128000 stay in extended and are flagged.
enum class ContextBin { bin_short, bin_medium, bin_large, bin_extended };

std::string to_string(ContextBin b);

struct ClinicalNote {
    std::string note_id;
    std::string patient_id;
    std::optional<std::string> stay_id;
    NoteType note_type = NoteType::other;
    std::int64_t timestamp = 0;  // UTC epoch seconds
    std::string text;
};

struct OptionItem {
    std::string label;
    std::string text;
};

struct QAItem {
    std::string item_id;
    std::string patient_id;
    std::string question;
    TaskType task = TaskType::open_ended;
    std::string gold_answer;
    std::vector<OptionItem> options;
    std::optional<std::string> correct_option;
    std::set<std::string> relevant_note_ids;
    std::set<NoteType> related_note_types;
};

struct ScenarioContext {
    std::string item_id;
    Scenario scenario = Scenario::include_all;
    std::vector<ClinicalNote> notes;  // ascending (timestamp, note_id)
    long long token_count = 0;
    ContextBin bin = ContextBin::bin_short;
    bool over_cap = false;  // token_count > 128000
};

struct Corpus {
    std::vector<ClinicalNote> notes;
    std::vector<QAItem> items;
};

/// Reads record-per-line notes/QA files, validates schema and referential
/// integrity (duplicate note ids, dangling relevant_note_ids, option/task
/// coherence). Errors carry file:line context.
Corpus ingest_corpus(const std::filesystem::path& notes_file, const std::filesystem::path& qa_file);

/// Drops per-patient exact duplicates (texts compared after whitespace
/// collapsing, earliest (timestamp, note_id) kept) and sorts ascending by
/// (timestamp, note_id). Idempotent.
std::vector<ClinicalNote> normalize_notes(std::vector<ClinicalNote> notes);

/// Selects the note subset for one inclusion scenario over a patient's
/// notes, chronologically ordered, with token count and bin filled in.
ScenarioContext build_scenario(const QAItem& item, const std::vector<ClinicalNote>& patient_notes,
                               Scenario scenario, const chunking::TokenCounter& counter);

ContextBin assign_bin(long long token_count, bool* over_cap = nullptr);

/// Chronological order: ascending (timestamp, note_id).
bool note_before(const ClinicalNote& a, const ClinicalNote& b);

}  // namespace lcqa::corpus
