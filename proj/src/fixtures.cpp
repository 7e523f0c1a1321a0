#include "lcqa/fixtures.hpp"

#include <array>
#include <fstream>
#include <random>

#include <json.hpp>

#include "lcqa/errors.hpp"
#include "lcqa/time_util.hpp"

namespace lcqa::fixtures {

using nlohmann::json;

namespace {

const std::array<const char*, 64> kWords = {
    "patient",    "admitted",   "discharged", "stable",     "chest",      "pain",      "fever",      "cough",
    "dyspnea",    "nausea",     "vomiting",   "diarrhea",   "hypertension", "diabetes", "pneumonia", "sepsis",
    "fracture",   "lesion",     "effusion",   "edema",      "anemia",     "infection", "renal",      "hepatic",
    "cardiac",    "pulmonary",  "abdominal",  "neurologic", "lisinopril", "metformin", "warfarin",   "heparin",
    "aspirin",    "furosemide", "insulin",    "azithromycin", "ct",       "mri",       "xray",       "ultrasound",
    "ekg",        "labs",       "creatinine", "sodium",     "potassium",  "glucose",   "hemoglobin", "platelets",
    "followup",   "clinic",     "surgery",    "biopsy",     "culture",    "negative",  "positive",   "improved",
    "worsened",   "resolved",   "persistent", "acute",      "chronic",    "bilateral", "moderate",   "severe"};

const std::array<corpus::NoteType, 4> kTypes = {corpus::NoteType::discharge_summary, corpus::NoteType::clinical_note,
                                                corpus::NoteType::radiology_report, corpus::NoteType::other};

std::string sentence(std::mt19937_64& rng, int words) {
    std::uniform_int_distribution<std::size_t> pick(0, kWords.size() - 1);
    std::string out;
    for (int i = 0; i < words; ++i) {
        if (i) out += ' ';
        out += kWords[pick(rng)];
    }
    out += '.';
    return out;
}

std::string pad(int v, int width) {
    std::string s = std::to_string(v);
    while (static_cast<int>(s.size()) < width) s.insert(s.begin(), '0');
    return s;
}

}  // namespace

corpus::Corpus make_fixture(const FixtureSpec& spec) {
    if (spec.patients < 1 || spec.notes_per_patient < 1 || spec.items < 1) {
        throw ConfigError("fixture spec needs at least one patient, note and item");
    }
    std::mt19937_64 rng(spec.seed);
    std::uniform_int_distribution<int> sent_count(spec.min_sentences_per_note, spec.max_sentences_per_note);
    std::uniform_int_distribution<int> sent_words(5, 14);
    std::uniform_int_distribution<int> hour_step(3, 200);

    corpus::Corpus out;
    const std::int64_t base = *util::parse_iso8601("2113-01-01T00:00:00Z");

    for (int p = 0; p < spec.patients; ++p) {
        const std::string patient_id = "pt" + pad(p, 3);
        std::int64_t ts = base + static_cast<std::int64_t>(p) * 86400;
        for (int n = 0; n < spec.notes_per_patient; ++n) {
            corpus::ClinicalNote note;
            note.note_id = patient_id + "-n" + pad(n, 3);
            note.patient_id = patient_id;
            if (n % 2 == 0) note.stay_id = patient_id + "-s" + pad(n / 2, 2);
            note.note_type = kTypes[static_cast<std::size_t>(n) % kTypes.size()];
            ts += static_cast<std::int64_t>(hour_step(rng)) * 3600;
            note.timestamp = ts;
            const int sentences = sent_count(rng);
            for (int s = 0; s < sentences; ++s) {
                if (s) note.text += ' ';
                note.text += sentence(rng, sent_words(rng));
            }
            out.notes.push_back(std::move(note));
        }
    }

    std::uniform_int_distribution<std::size_t> pick_word(0, kWords.size() - 1);
    for (int i = 0; i < spec.items; ++i) {
        const int p = i % spec.patients;
        const std::string patient_id = "pt" + pad(p, 3);
        const std::size_t note_slot = static_cast<std::size_t>(p) * static_cast<std::size_t>(spec.notes_per_patient) +
                                      static_cast<std::size_t>(i / spec.patients) %
                                          static_cast<std::size_t>(spec.notes_per_patient);
        corpus::ClinicalNote& target = out.notes[note_slot];

        const std::string marker = "mk" + pad(i, 3);
        const std::string finding = std::string(kWords[pick_word(rng)]) + " " + kWords[pick_word(rng)];
        target.text += " Marker " + marker + " documented as " + finding + ".";

        corpus::QAItem item;
        item.item_id = "qa" + pad(i, 3);
        item.patient_id = patient_id;
        item.question = "What was documented for marker " + marker + " in this patient's record?";
        item.relevant_note_ids = {target.note_id};
        item.related_note_types = {target.note_type};

        switch (i % 3) {
            case 0:
                item.task = corpus::TaskType::extractive;
                item.gold_answer = "Marker " + marker + " documented as " + finding + ".";
                break;
            case 1:
                item.task = corpus::TaskType::open_ended;
                item.gold_answer = "Marker " + marker + " was documented as " + finding + ".";
                break;
            default: {
                item.task = corpus::TaskType::multiple_choice;
                item.gold_answer = finding;
                const std::array<const char*, 4> labels = {"A", "B", "C", "D"};
                std::uniform_int_distribution<int> pick_label(0, 3);
                const int correct = pick_label(rng);
                for (int o = 0; o < 4; ++o) {
                    corpus::OptionItem opt;
                    opt.label = labels[static_cast<std::size_t>(o)];
                    opt.text = o == correct ? finding
                                            : std::string(kWords[pick_word(rng)]) + " " + kWords[pick_word(rng)];
                    item.options.push_back(std::move(opt));
                }
                item.correct_option = labels[static_cast<std::size_t>(correct)];
                break;
            }
        }
        out.items.push_back(std::move(item));
    }
    return out;
}

void write_fixture(const corpus::Corpus& corpus, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    {
        std::ofstream notes(dir / "notes.jsonl");
        for (const auto& n : corpus.notes) {
            json rec = {{"note_id", n.note_id},
                        {"patient_id", n.patient_id},
                        {"stay_id", n.stay_id ? json(*n.stay_id) : json(nullptr)},
                        {"note_type", corpus::to_string(n.note_type)},
                        {"timestamp", util::format_iso8601(n.timestamp)},
                        {"text", n.text}};
            notes << rec.dump() << "\n";
        }
    }
    {
        std::ofstream qa(dir / "qa.jsonl");
        for (const auto& it : corpus.items) {
            json options = json(nullptr);
            if (!it.options.empty()) {
                options = json::array();
                for (const auto& o : it.options) options.push_back({{"label", o.label}, {"text", o.text}});
            }
            json types = json::array();
            for (const auto& t : it.related_note_types) types.push_back(corpus::to_string(t));
            json rec = {{"item_id", it.item_id},
                        {"patient_id", it.patient_id},
                        {"question", it.question},
                        {"task", corpus::to_string(it.task)},
                        {"gold_answer", it.gold_answer},
                        {"options", options},
                        {"correct_option", it.correct_option ? json(*it.correct_option) : json(nullptr)},
                        {"relevant_note_ids", json(std::vector<std::string>(it.relevant_note_ids.begin(),
                                                                            it.relevant_note_ids.end()))},
                        {"related_note_types", types}};
            qa << rec.dump() << "\n";
        }
    }
}

}  // namespace lcqa::fixtures
