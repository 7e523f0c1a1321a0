#include "lcqa/corpus.hpp"

#include <algorithm>
#include <map>
#include <unordered_map>
#include <unordered_set>

#include "lcqa/errors.hpp"
#include "lcqa/jsonl.hpp"
#include "lcqa/text.hpp"
#include "lcqa/time_util.hpp"

namespace lcqa::corpus {

using nlohmann::json;

std::string to_string(NoteType t) {
    switch (t) {
        case NoteType::discharge_summary: return "discharge_summary";
        case NoteType::clinical_note: return "clinical_note";
        case NoteType::radiology_report: return "radiology_report";
        case NoteType::other: return "other";
    }
    return "other";
}

std::optional<NoteType> note_type_from_string(std::string_view s) {
    if (s == "discharge_summary") return NoteType::discharge_summary;
    if (s == "clinical_note") return NoteType::clinical_note;
    if (s == "radiology_report") return NoteType::radiology_report;
    if (s == "other") return NoteType::other;
    return std::nullopt;
}

std::string to_string(TaskType t) {
    switch (t) {
        case TaskType::extractive: return "extractive";
        case TaskType::multiple_choice: return "multiple_choice";
        case TaskType::open_ended: return "open_ended";
    }
    return "open_ended";
}

std::optional<TaskType> task_from_string(std::string_view s) {
    if (s == "extractive") return TaskType::extractive;
    if (s == "multiple_choice") return TaskType::multiple_choice;
    if (s == "open_ended") return TaskType::open_ended;
    return std::nullopt;
}

std::string to_string(Scenario s) {
    switch (s) {
        case Scenario::exclude_all: return "exclude_all";
        case Scenario::exclude_relevant: return "exclude_relevant";
        case Scenario::include_all: return "include_all";
        case Scenario::include_related: return "include_related";
    }
    return "include_all";
}

std::optional<Scenario> scenario_from_string(std::string_view s) {
    if (s == "exclude_all") return Scenario::exclude_all;
    if (s == "exclude_relevant") return Scenario::exclude_relevant;
    if (s == "include_all") return Scenario::include_all;
    if (s == "include_related") return Scenario::include_related;
    return std::nullopt;
}

std::string to_string(ContextBin b) {
    switch (b) {
        case ContextBin::bin_short: return "short";
        case ContextBin::bin_medium: return "medium";
        case ContextBin::bin_large: return "large";
        case ContextBin::bin_extended: return "extended";
    }
    return "short";
}

bool note_before(const ClinicalNote& a, const ClinicalNote& b) {
    if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
    return a.note_id < b.note_id;
}

namespace {

std::string ctx(const std::filesystem::path& file, std::size_t line) {
    return file.string() + ":" + std::to_string(line) + ": ";
}

std::string require_string(const json& rec, const char* key, const std::string& where) {
    auto it = rec.find(key);
    if (it == rec.end() || !it->is_string()) {
        throw ParseError(where + "missing or non-string field '" + key + "'");
    }
    return it->get<std::string>();
}

ClinicalNote parse_note(const json& rec, const std::string& where) {
    ClinicalNote note;
    note.note_id = require_string(rec, "note_id", where);
    note.patient_id = require_string(rec, "patient_id", where);
    if (auto it = rec.find("stay_id"); it != rec.end() && !it->is_null()) {
        if (!it->is_string()) throw ParseError(where + "field 'stay_id' must be a string or null");
        note.stay_id = it->get<std::string>();
    }
    const std::string type_str = require_string(rec, "note_type", where);
    auto type = note_type_from_string(type_str);
    if (!type) throw ParseError(where + "unknown note_type '" + type_str + "'");
    note.note_type = *type;
    const std::string ts = require_string(rec, "timestamp", where);
    auto instant = util::parse_iso8601(ts);
    if (!instant) {
        throw ParseError(where + "unparseable timestamp '" + ts + "' for note " + note.note_id);
    }
    note.timestamp = *instant;
    note.text = require_string(rec, "text", where);
    if (util::trim(note.text).empty()) {
        throw ParseError(where + "empty text for note " + note.note_id);
    }
    return note;
}

QAItem parse_item(const json& rec, const std::string& where) {
    QAItem item;
    item.item_id = require_string(rec, "item_id", where);
    item.patient_id = require_string(rec, "patient_id", where);
    item.question = require_string(rec, "question", where);
    const std::string task_str = require_string(rec, "task", where);
    auto task = task_from_string(task_str);
    if (!task) throw ParseError(where + "unknown task '" + task_str + "'");
    item.task = *task;
    item.gold_answer = require_string(rec, "gold_answer", where);

    if (auto it = rec.find("options"); it != rec.end() && !it->is_null()) {
        if (!it->is_array()) throw ParseError(where + "field 'options' must be an array or null");
        for (const auto& opt : *it) {
            OptionItem o;
            o.label = require_string(opt, "label", where);
            o.text = require_string(opt, "text", where);
            item.options.push_back(std::move(o));
        }
    }
    if (auto it = rec.find("correct_option"); it != rec.end() && !it->is_null()) {
        if (!it->is_string()) throw ParseError(where + "field 'correct_option' must be a string or null");
        item.correct_option = it->get<std::string>();
    }
    if (auto it = rec.find("relevant_note_ids"); it != rec.end() && !it->is_null()) {
        if (!it->is_array()) throw ParseError(where + "field 'relevant_note_ids' must be an array");
        for (const auto& id : *it) {
            if (!id.is_string()) throw ParseError(where + "relevant_note_ids entries must be strings");
            item.relevant_note_ids.insert(id.get<std::string>());
        }
    }
    if (auto it = rec.find("related_note_types"); it != rec.end() && !it->is_null()) {
        if (!it->is_array()) throw ParseError(where + "field 'related_note_types' must be an array");
        for (const auto& t : *it) {
            if (!t.is_string()) throw ParseError(where + "related_note_types entries must be strings");
            auto type = note_type_from_string(t.get<std::string>());
            if (!type) throw ParseError(where + "unknown note_type '" + t.get<std::string>() + "'");
            item.related_note_types.insert(*type);
        }
    }

    // Task coherence.
    if (item.task == TaskType::multiple_choice) {
        if (item.options.empty()) {
            throw ParseError(where + "multiple_choice item " + item.item_id + " has no options");
        }
        if (!item.correct_option) {
            throw ParseError(where + "multiple_choice item " + item.item_id + " has no correct_option");
        }
        bool found = false;
        for (const auto& o : item.options) found = found || o.label == *item.correct_option;
        if (!found) {
            throw ParseError(where + "correct_option '" + *item.correct_option + "' is not an option label");
        }
    } else {
        if (!item.options.empty() || item.correct_option) {
            throw ParseError(where + "item " + item.item_id + " carries options but task is " + task_str);
        }
        if (util::trim(item.gold_answer).empty()) {
            throw ParseError(where + "empty gold_answer for item " + item.item_id);
        }
    }
    return item;
}

}  // namespace

Corpus ingest_corpus(const std::filesystem::path& notes_file, const std::filesystem::path& qa_file) {
    Corpus corpus;
    std::unordered_set<std::string> seen_ids;
    util::for_each_record(notes_file, [&](std::size_t line, const json& rec) {
        ClinicalNote note = parse_note(rec, ctx(notes_file, line));
        if (!seen_ids.insert(note.note_id).second) {
            throw IntegrityError(ctx(notes_file, line) + "duplicate note_id '" + note.note_id + "'");
        }
        corpus.notes.push_back(std::move(note));
    });

    std::unordered_map<std::string, const ClinicalNote*> by_id;
    for (const auto& n : corpus.notes) by_id[n.note_id] = &n;

    std::unordered_set<std::string> seen_items;
    util::for_each_record(qa_file, [&](std::size_t line, const json& rec) {
        QAItem item = parse_item(rec, ctx(qa_file, line));
        if (!seen_items.insert(item.item_id).second) {
            throw IntegrityError(ctx(qa_file, line) + "duplicate item_id '" + item.item_id + "'");
        }
        for (const auto& id : item.relevant_note_ids) {
            auto it = by_id.find(id);
            if (it == by_id.end()) {
                throw IntegrityError(ctx(qa_file, line) + "item " + item.item_id +
                                     " references unknown note_id '" + id + "'");
            }
            if (it->second->patient_id != item.patient_id) {
                throw IntegrityError(ctx(qa_file, line) + "item " + item.item_id + " references note '" + id +
                                     "' of a different patient");
            }
        }
        corpus.items.push_back(std::move(item));
    });
    return corpus;
}

std::vector<ClinicalNote> normalize_notes(std::vector<ClinicalNote> notes) {
    std::sort(notes.begin(), notes.end(), note_before);
    // Per-patient dedup on whitespace-collapsed text; the sort above makes the
    // earliest (timestamp, note_id) the survivor.
    std::unordered_set<std::string> seen;
    std::vector<ClinicalNote> out;
    out.reserve(notes.size());
    for (auto& note : notes) {
        std::string key = note.patient_id + "\x1f" + util::collapse_whitespace(note.text);
        if (!seen.insert(std::move(key)).second) continue;
        out.push_back(std::move(note));
    }
    return out;
}

ContextBin assign_bin(long long token_count, bool* over_cap) {
    if (over_cap) *over_cap = token_count > 128000;
    if (token_count < 8000) return ContextBin::bin_short;
    if (token_count < 16000) return ContextBin::bin_medium;
    if (token_count < 32000) return ContextBin::bin_large;
    return ContextBin::bin_extended;
}

ScenarioContext build_scenario(const QAItem& item, const std::vector<ClinicalNote>& patient_notes,
                               Scenario scenario, const chunking::TokenCounter& counter) {
    ScenarioContext ctx;
    ctx.item_id = item.item_id;
    ctx.scenario = scenario;

    if (scenario == Scenario::include_related && item.related_note_types.empty()) {
        throw ConfigError("include_related scenario for item " + item.item_id + " with empty related_note_types");
    }

    for (const auto& note : patient_notes) {
        if (note.patient_id != item.patient_id) {
            throw IntegrityError("note " + note.note_id + " does not belong to patient " + item.patient_id);
        }
        switch (scenario) {
            case Scenario::exclude_all:
                continue;
            case Scenario::exclude_relevant:
                if (item.relevant_note_ids.count(note.note_id) > 0) continue;
                break;
            case Scenario::include_all:
                break;
            case Scenario::include_related:
                if (item.related_note_types.count(note.note_type) == 0) continue;
                break;
        }
        ctx.notes.push_back(note);
    }
    std::sort(ctx.notes.begin(), ctx.notes.end(), note_before);

    for (const auto& note : ctx.notes) ctx.token_count += counter.count(note.text);
    ctx.bin = assign_bin(ctx.token_count, &ctx.over_cap);
    return ctx;
}

}  // namespace lcqa::corpus
