#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "lcqa/corpus.hpp"
#include "lcqa/errors.hpp"
#include "lcqa/time_util.hpp"
#include "oracles.hpp"

using namespace lcqa;
namespace fs = std::filesystem;

namespace {

fs::path write_tmp(const std::string& name, const std::string& content) {
    const fs::path path = fs::temp_directory_path() / name;
    std::ofstream out(path);
    out << content;
    return path;
}

const char* kNotes3 =
    R"({"note_id":"n1","patient_id":"p1","stay_id":"s1","note_type":"discharge_summary","timestamp":"2113-09-30T08:00:00Z","text":"Discharged in stable condition."}
{"note_id":"n2","patient_id":"p1","stay_id":null,"note_type":"radiology_report","timestamp":"2113-09-28T10:30:00Z","text":"Chest xray shows small effusion."}
{"note_id":"n3","patient_id":"p2","stay_id":null,"note_type":"clinical_note","timestamp":"2113-10-01T09:00:00Z","text":"Follow up visit, doing well."}
)";

const char* kQa2 =
    R"({"item_id":"q1","patient_id":"p1","question":"What did the xray show?","task":"open_ended","gold_answer":"A small effusion.","options":null,"correct_option":null,"relevant_note_ids":["n2"],"related_note_types":["radiology_report"]}
{"item_id":"q2","patient_id":"p2","question":"How is the patient doing?","task":"extractive","gold_answer":"doing well","options":null,"correct_option":null,"relevant_note_ids":["n3"],"related_note_types":["clinical_note"]}
)";

corpus::ClinicalNote make_note(const std::string& id, const std::string& patient, std::int64_t ts,
                               const std::string& text,
                               corpus::NoteType type = corpus::NoteType::clinical_note) {
    corpus::ClinicalNote n;
    n.note_id = id;
    n.patient_id = patient;
    n.note_type = type;
    n.timestamp = ts;
    n.text = text;
    return n;
}

}  // namespace

TEST_CASE("fixture corpus of 3 notes / 2 items parses with resolved references") {
    const auto notes = write_tmp("lcqa_notes3.jsonl", kNotes3);
    const auto qa = write_tmp("lcqa_qa2.jsonl", kQa2);
    auto corpus = corpus::ingest_corpus(notes, qa);
    CHECK(corpus.notes.size() == 3);
    CHECK(corpus.items.size() == 2);
}

TEST_CASE("empty qa file yields notes and an empty item set") {
    const auto notes = write_tmp("lcqa_notes3b.jsonl", kNotes3);
    const auto qa = write_tmp("lcqa_qa_empty.jsonl", "");
    auto corpus = corpus::ingest_corpus(notes, qa);
    CHECK(corpus.notes.size() == 3);
    CHECK(corpus.items.empty());
}

TEST_CASE("dangling relevant_note_id is rejected naming the id") {
    const auto notes = write_tmp("lcqa_notes3c.jsonl", kNotes3);
    const auto qa = write_tmp(
        "lcqa_qa_dangling.jsonl",
        R"({"item_id":"q1","patient_id":"p1","question":"x?","task":"open_ended","gold_answer":"y","relevant_note_ids":["missing-note"],"related_note_types":[]})"
        "\n");
    try {
        corpus::ingest_corpus(notes, qa);
        FAIL("expected IntegrityError");
    } catch (const IntegrityError& e) {
        CHECK(std::string(e.what()).find("missing-note") != std::string::npos);
    }
}

TEST_CASE("duplicate note_id is rejected") {
    std::string doubled = kNotes3;
    doubled +=
        R"({"note_id":"n1","patient_id":"p1","stay_id":null,"note_type":"other","timestamp":"2113-09-30T09:00:00Z","text":"dup"})"
        "\n";
    const auto notes = write_tmp("lcqa_notes_dup.jsonl", doubled);
    const auto qa = write_tmp("lcqa_qa_empty2.jsonl", "");
    CHECK_THROWS_AS(corpus::ingest_corpus(notes, qa), IntegrityError);
}

TEST_CASE("malformed record reports the line number") {
    const auto notes = write_tmp("lcqa_notes_bad.jsonl", std::string(kNotes3) + "{not json\n");
    const auto qa = write_tmp("lcqa_qa_empty3.jsonl", "");
    try {
        corpus::ingest_corpus(notes, qa);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find(":4:") != std::string::npos);
    }
}

TEST_CASE("equivalent timestamp spellings parse to one instant") {
    const auto a = util::parse_iso8601("2113-09-30T08:00Z");
    const auto b = util::parse_iso8601("2113-09-30 08:00:00+00:00");
    const auto c = util::parse_iso8601("2113-09-30T10:00:00+02:00");
    REQUIRE(a);
    REQUIRE(b);
    REQUIRE(c);
    CHECK(*a == *b);
    CHECK(*a == *c);
    CHECK(util::format_iso8601(*a) == "2113-09-30T08:00:00Z");
    CHECK_FALSE(util::parse_iso8601("not a time"));
    CHECK_FALSE(util::parse_iso8601("2113-13-01T00:00:00Z"));
    CHECK_FALSE(util::parse_iso8601("2113-02-29T00:00:00Z"));  // not a leap year
}

TEST_CASE("normalize drops per-patient duplicates after whitespace collapsing") {
    std::vector<corpus::ClinicalNote> notes = {
        make_note("b", "p1", 100, "same  text here"),
        make_note("a", "p1", 100, "same text\nhere"),
        make_note("c", "p2", 100, "same text here"),  // different patient: kept
    };
    auto out = corpus::normalize_notes(notes);
    REQUIRE(out.size() == 2);
    CHECK(out[0].note_id == "a");  // earliest (timestamp, note_id) survives
    CHECK(out[1].note_id == "c");
}

TEST_CASE("normalize sorts by (timestamp, note_id) and is idempotent") {
    std::mt19937_64 rng(7);
    auto notes = oracles::random_patient_notes(rng, "p9", 5);
    std::shuffle(notes.begin(), notes.end(), rng);
    notes[2].timestamp = notes[4].timestamp;  // force a tie broken by note_id

    auto once = corpus::normalize_notes(notes);
    auto twice = corpus::normalize_notes(once);
    REQUIRE(once.size() == twice.size());
    for (std::size_t i = 0; i < once.size(); ++i) CHECK(once[i].note_id == twice[i].note_id);
    for (std::size_t i = 1; i < once.size(); ++i) {
        const bool ordered = once[i - 1].timestamp < once[i].timestamp ||
                             (once[i - 1].timestamp == once[i].timestamp && once[i - 1].note_id < once[i].note_id);
        CHECK(ordered);
    }
}

TEST_CASE("assign_bin honors half-open boundaries with the edge in the upper bin") {
    using corpus::ContextBin;
    CHECK(corpus::assign_bin(0) == ContextBin::bin_short);
    CHECK(corpus::assign_bin(7999) == ContextBin::bin_short);
    CHECK(corpus::assign_bin(8000) == ContextBin::bin_medium);
    CHECK(corpus::assign_bin(15999) == ContextBin::bin_medium);
    CHECK(corpus::assign_bin(16000) == ContextBin::bin_large);
    CHECK(corpus::assign_bin(31999) == ContextBin::bin_large);
    CHECK(corpus::assign_bin(32000) == ContextBin::bin_extended);
    CHECK(corpus::assign_bin(128000) == ContextBin::bin_extended);

    bool over_cap = false;
    CHECK(corpus::assign_bin(128001, &over_cap) == ContextBin::bin_extended);
    CHECK(over_cap);
    corpus::assign_bin(128000, &over_cap);
    CHECK_FALSE(over_cap);
}

TEST_CASE("assign_bin is a total monotone step function") {
    std::mt19937_64 rng(23);
    std::uniform_int_distribution<long long> dist(0, 200000);
    for (int i = 0; i < 2000; ++i) {
        const long long a = dist(rng), b = dist(rng);
        const auto ba = corpus::assign_bin(std::min(a, b));
        const auto bb = corpus::assign_bin(std::max(a, b));
        CHECK(static_cast<int>(ba) <= static_cast<int>(bb));
    }
}

TEST_CASE("scenario construction matches each scenario definition") {
    auto counter = chunking::TokenCounter::make("whitespace");
    std::vector<corpus::ClinicalNote> notes = {
        make_note("n1", "p1", 300, "late discharge summary", corpus::NoteType::discharge_summary),
        make_note("n2", "p1", 100, "early clinical note", corpus::NoteType::clinical_note),
        make_note("n3", "p1", 200, "mid radiology report", corpus::NoteType::radiology_report),
        make_note("n4", "p1", 200, "another discharge summary", corpus::NoteType::discharge_summary),
    };
    corpus::QAItem item;
    item.item_id = "q1";
    item.patient_id = "p1";
    item.question = "q?";
    item.task = corpus::TaskType::open_ended;
    item.gold_answer = "a";
    item.relevant_note_ids = {"n3"};
    item.related_note_types = {corpus::NoteType::discharge_summary};

    SUBCASE("exclude_all is empty with zero tokens in the short bin") {
        auto ctx = corpus::build_scenario(item, notes, corpus::Scenario::exclude_all, counter);
        CHECK(ctx.notes.empty());
        CHECK(ctx.token_count == 0);
        CHECK(ctx.bin == corpus::ContextBin::bin_short);
    }
    SUBCASE("exclude_relevant removes exactly the annotated notes") {
        auto ctx = corpus::build_scenario(item, notes, corpus::Scenario::exclude_relevant, counter);
        REQUIRE(ctx.notes.size() == 3);
        for (const auto& n : ctx.notes) CHECK(n.note_id != "n3");
    }
    SUBCASE("exclude_relevant covering all notes leaves an empty context") {
        corpus::QAItem all = item;
        all.relevant_note_ids = {"n1", "n2", "n3", "n4"};
        auto ctx = corpus::build_scenario(all, notes, corpus::Scenario::exclude_relevant, counter);
        CHECK(ctx.notes.empty());
    }
    SUBCASE("include_related keeps only the related types, chronological") {
        auto ctx = corpus::build_scenario(item, notes, corpus::Scenario::include_related, counter);
        REQUIRE(ctx.notes.size() == 2);
        CHECK(ctx.notes[0].note_id == "n4");  // ts 200 < 300
        CHECK(ctx.notes[1].note_id == "n1");
    }
    SUBCASE("include_related without related types is a configuration error") {
        corpus::QAItem bare = item;
        bare.related_note_types.clear();
        CHECK_THROWS_AS(corpus::build_scenario(bare, notes, corpus::Scenario::include_related, counter),
                        ConfigError);
    }
    SUBCASE("notes of another patient are rejected") {
        auto foreign = notes;
        foreign.push_back(make_note("x1", "p2", 50, "foreign note"));
        CHECK_THROWS_AS(corpus::build_scenario(item, foreign, corpus::Scenario::include_all, counter),
                        IntegrityError);
    }
}

TEST_CASE("scenario invariants and algebra hold over randomized corpora") {
    auto counter = chunking::TokenCounter::make("whitespace");
    std::mt19937_64 rng(1234);
    std::uniform_int_distribution<int> note_count(1, 12);
    std::uniform_int_distribution<int> pick_type(0, 3);

    int cases = 0;
    for (int trial = 0; trial < 350; ++trial) {
        auto notes = oracles::random_patient_notes(rng, "p1", note_count(rng));
        corpus::QAItem item;
        item.item_id = "q";
        item.patient_id = "p1";
        item.question = "q?";
        item.task = corpus::TaskType::open_ended;
        item.gold_answer = "a";
        std::uniform_int_distribution<std::size_t> pick_note(0, notes.size() - 1);
        const int relevant = std::min<int>(static_cast<int>(notes.size()), 1 + trial % 3);
        for (int i = 0; i < relevant; ++i) item.relevant_note_ids.insert(notes[pick_note(rng)].note_id);
        item.related_note_types = {static_cast<corpus::NoteType>(pick_type(rng))};

        auto all = corpus::build_scenario(item, notes, corpus::Scenario::include_all, counter);
        auto rel = corpus::build_scenario(item, notes, corpus::Scenario::include_related, counter);
        auto excl = corpus::build_scenario(item, notes, corpus::Scenario::exclude_relevant, counter);
        auto none = corpus::build_scenario(item, notes, corpus::Scenario::exclude_all, counter);

        auto ids = [](const corpus::ScenarioContext& c) {
            std::set<std::string> out;
            for (const auto& n : c.notes) out.insert(n.note_id);
            return out;
        };
        const auto all_ids = ids(all);
        const auto rel_ids = ids(rel);
        const auto excl_ids = ids(excl);

        // include_all >= include_related
        for (const auto& id : rel_ids) CHECK(all_ids.count(id) == 1);
        // exclude_relevant U relevant == include_all
        std::set<std::string> uni = excl_ids;
        for (const auto& id : item.relevant_note_ids) uni.insert(id);
        CHECK(uni == all_ids);
        // per-scenario invariants
        CHECK(none.notes.empty());
        for (const auto& n : excl.notes) CHECK(item.relevant_note_ids.count(n.note_id) == 0);
        for (const auto& n : rel.notes) CHECK(item.related_note_types.count(n.note_type) == 1);
        for (const auto& ctx : {&all, &rel, &excl}) {
            for (std::size_t i = 1; i < ctx->notes.size(); ++i) {
                CHECK(corpus::note_before(ctx->notes[i - 1], ctx->notes[i]));
            }
            CHECK(ctx->bin == corpus::assign_bin(ctx->token_count));
            ++cases;
        }
    }
    CHECK(cases >= 1000);
}
