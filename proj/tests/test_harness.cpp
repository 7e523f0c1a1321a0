#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "lcqa/errors.hpp"
#include "lcqa/fixtures.hpp"
#include "lcqa/harness.hpp"

using namespace lcqa;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

struct TempTree {
    fs::path root;
    explicit TempTree(const std::string& name) : root(fs::temp_directory_path() / name) {
        fs::remove_all(root);
        fs::create_directories(root);
    }
    ~TempTree() { fs::remove_all(root); }
};

harness::ExperimentConfig small_config(const TempTree& tree, int items = 9) {
    fixtures::FixtureSpec spec;
    spec.patients = 3;
    spec.notes_per_patient = 4;
    spec.items = items;
    auto corpus = fixtures::make_fixture(spec);
    fixtures::write_fixture(corpus, tree.root / "fixture");

    harness::ExperimentConfig config;
    config.notes_file = (tree.root / "fixture" / "notes.jsonl").string();
    config.qa_file = (tree.root / "fixture" / "qa.jsonl").string();
    config.scenarios = {corpus::Scenario::include_all, corpus::Scenario::exclude_relevant};
    config.strategies = {assembly::Strategy::full_context(), assembly::Strategy::rag_chunks(5),
                         assembly::Strategy::rag_hierarchical(3)};
    config.cache_dir = (tree.root / "cache").string();
    config.output_dir = (tree.root / "runs").string();
    config.workers = 2;
    return config;
}

}  // namespace

TEST_CASE("defaults pin the published experiment grid") {
    harness::ExperimentConfig config;
    CHECK(config.fusion.k_rrf == 60.0);
    CHECK(config.fusion.candidate_multiplier == 2);
    CHECK(config.chunk_size == 512);
    CHECK(config.bm25.k1 == 1.2);
    CHECK(config.bm25.b == 0.75);

    std::vector<std::string> ids;
    for (const auto& s : config.strategies) ids.push_back(s.id());
    CHECK(ids == std::vector<std::string>{"full_context", "rag_5", "rag_10", "rag_15", "rag_hir_3", "rag_hir_5",
                                          "rag_hir_7"});

    CHECK(generation::ModelProfile::make("i", generation::Family::instruct).temperature == 0.0);
    CHECK(generation::ModelProfile::make("r", generation::Family::reasoning).temperature == 1.0);
}

TEST_CASE("validation fails fast on impossible configurations") {
    harness::ExperimentConfig config;
    SUBCASE("zero strategies") {
        config.strategies.clear();
        CHECK_THROWS_AS(harness::validate(config), ConfigError);
    }
    SUBCASE("zero scenarios") {
        config.scenarios.clear();
        CHECK_THROWS_AS(harness::validate(config), ConfigError);
    }
    SUBCASE("no metrics") {
        config.metrics = {false, false, false, false, false};
        CHECK_THROWS_AS(harness::validate(config), ConfigError);
    }
    SUBCASE("bad k") {
        config.strategies = {assembly::Strategy::rag_chunks(0)};
        CHECK_THROWS_AS(harness::validate(config), ConfigError);
    }
    SUBCASE("think budget on an instruct model") {
        config.models[0].think_token_budget = 1000;
        CHECK_THROWS_AS(harness::validate(config), ConfigError);
    }
}

TEST_CASE("config files load with env overrides and a stable digest") {
    TempTree tree("lcqa_cfg_test");
    const fs::path path = tree.root / "config.json";
    {
        std::ofstream out(path);
        out << R"({
            "corpus": {"notes_file": "n.jsonl", "qa_file": "q.jsonl"},
            "scenarios": ["include_all"],
            "strategies": ["rag_5"],
            "retrieval": {"k1": 0.9, "b": 0.4}
        })";
    }
    auto config = harness::load_config(path);
    CHECK(config.bm25.k1 == 0.9);
    CHECK(config.scenarios.size() == 1);
    CHECK(config.strategies.size() == 1);

    const auto digest = harness::config_digest(config);
    CHECK(digest == harness::config_digest(config));  // stable
    auto changed = config;
    changed.fusion.k_rrf = 61.0;
    CHECK(harness::config_digest(changed) != digest);  // changes iff config changes

    setenv("LCQA_CACHE_DIR", "/tmp/lcqa-override-cache", 1);
    auto overridden = harness::load_config(path);
    unsetenv("LCQA_CACHE_DIR");
    CHECK(overridden.cache_dir == "/tmp/lcqa-override-cache");
}

TEST_CASE("a stub-everything run over the fixture completes with zero failures") {
    TempTree tree("lcqa_run_test");
    auto config = small_config(tree);
    auto result = harness::run_experiment(config);
    CHECK(result.completed);
    CHECK(result.failed_tasks == 0);
    CHECK(result.total_tasks == 9 * 2 * 3);
    CHECK(result.completed_tasks == result.total_tasks);
    CHECK(fs::exists(result.run_dir / "manifest.json"));
    CHECK(fs::exists(result.run_dir / "scores.jsonl"));
    CHECK(fs::exists(result.run_dir / "reports" / "aggregates.tsv"));

    // The manifest records template ids and the token scheme.
    const json manifest = json::parse(slurp(result.run_dir / "manifest.json"));
    CHECK(manifest.at("token_scheme") == "subword-v1");
    CHECK(manifest.at("template_ids").at("open_ended") == "open_ended-v1");
}

TEST_CASE("interrupted runs resume to byte-identical outputs") {
    TempTree tree("lcqa_resume_test");
    auto config = small_config(tree);

    // Clean pass in its own directory.
    auto clean_config = config;
    clean_config.output_dir = (tree.root / "runs-clean").string();
    auto clean = harness::run_experiment(clean_config);
    REQUIRE(clean.completed);

    // Interrupted pass: stop after 10 settled tasks, then resume.
    std::atomic<int> budget{10};
    harness::RunOptions stopper;
    stopper.should_stop = [&] { return budget.fetch_sub(1) <= 0; };
    auto partial = harness::run_experiment(config, stopper);
    CHECK_FALSE(partial.completed);
    CHECK(partial.completed_tasks < clean.completed_tasks);

    auto resumed = harness::run_experiment(config);
    REQUIRE(resumed.completed);
    CHECK(resumed.completed_tasks == clean.completed_tasks);

    CHECK(slurp(resumed.run_dir / "scores.jsonl") == slurp(clean.run_dir / "scores.jsonl"));
    CHECK(slurp(resumed.run_dir / "reports" / "aggregates.tsv") ==
          slurp(clean.run_dir / "reports" / "aggregates.tsv"));
    CHECK(slurp(resumed.run_dir / "reports" / "correlations.json") ==
          slurp(clean.run_dir / "reports" / "correlations.json"));
}

TEST_CASE("short-context fixtures land in a single bin row per group") {
    TempTree tree("lcqa_bins_test");
    auto config = small_config(tree, 6);
    config.scenarios = {corpus::Scenario::include_all};
    config.strategies = {assembly::Strategy::full_context()};
    auto result = harness::run_experiment(config);
    REQUIRE(result.completed);

    const std::string tsv = slurp(result.run_dir / "reports" / "aggregates.tsv");
    std::stringstream ss(tsv);
    std::string line;
    std::getline(ss, line);  // header
    int rows = 0;
    while (std::getline(ss, line)) {
        if (line.empty()) continue;
        CHECK(line.find("\tshort\t") != std::string::npos);
        ++rows;
    }
    CHECK(rows > 0);
}

TEST_CASE("identical stub scores across models normalize to zero with flags") {
    TempTree tree("lcqa_degenerate_test");
    auto config = small_config(tree, 6);
    config.scenarios = {corpus::Scenario::include_all};
    config.strategies = {assembly::Strategy::full_context()};
    auto second = generation::ModelProfile::make("stub-echo-2", generation::Family::instruct);
    config.models.push_back(second);  // same echo endpoint, same scores
    auto result = harness::run_experiment(config);
    REQUIRE(result.completed);

    const std::string tsv = slurp(result.run_dir / "reports" / "aggregates.tsv");
    std::stringstream ss(tsv);
    std::string line;
    std::getline(ss, line);
    int degenerate_rows = 0, total_rows = 0;
    while (std::getline(ss, line)) {
        if (line.empty()) continue;
        ++total_rows;
        if (line.back() == '1') ++degenerate_rows;
    }
    CHECK(total_rows > 0);
    CHECK(degenerate_rows == total_rows);  // both models identical -> min == max everywhere
}

TEST_CASE("grouped means equal a hand recomputation from the score lines") {
    TempTree tree("lcqa_means_test");
    auto config = small_config(tree, 6);
    config.scenarios = {corpus::Scenario::include_all};
    config.strategies = {assembly::Strategy::rag_chunks(5)};
    auto result = harness::run_experiment(config);
    REQUIRE(result.completed);

    // Average the meteor column of scores.jsonl by hand.
    double sum = 0.0;
    int count = 0;
    std::stringstream ss(slurp(result.run_dir / "scores.jsonl"));
    std::string line;
    while (std::getline(ss, line)) {
        if (line.empty()) continue;
        const json rec = json::parse(line);
        if (!rec.at("meteor").is_null()) {
            sum += rec.at("meteor").get<double>();
            ++count;
        }
    }
    REQUIRE(count > 0);
    const double hand_mean = sum / count;

    const json agg = json::parse(slurp(result.run_dir / "reports" / "aggregates.json"));
    bool found = false;
    for (const auto& group : agg.at("groups")) {
        if (group.at("strategy") == "rag_5" && group.at("metrics").contains("meteor")) {
            CHECK(group.at("metrics").at("meteor").at("mean").get<double>() == doctest::Approx(hand_mean));
            CHECK(group.at("metrics").at("meteor").at("count").get<int>() == count);
            found = true;
        }
    }
    CHECK(found);
}

TEST_CASE("run requires corpus files") {
    harness::ExperimentConfig config;
    CHECK_THROWS_AS(harness::run_experiment(config), ConfigError);
}

TEST_CASE("a tiny model window triggers the overflow policy") {
    TempTree tree("lcqa_overflow_test");
    auto config = small_config(tree, 3);
    config.scenarios = {corpus::Scenario::include_all};
    config.strategies = {assembly::Strategy::full_context(), assembly::Strategy::rag_hierarchical(3)};
    config.models[0].context_window = 600;  // far below any full prompt
    config.models[0].max_output_tokens = 64;
    auto result = harness::run_experiment(config);
    REQUIRE(result.completed);

    // full_context cannot shrink: its tasks are overflow-skipped; the RAG
    // strategy drops parents until the prompt fits (or skips as well).
    int overflow_skips = 0, trimmed = 0;
    std::stringstream ss(slurp(result.run_dir / "records.jsonl"));
    std::string line;
    while (std::getline(ss, line)) {
        if (line.empty()) continue;
        const json rec = json::parse(line);
        if (rec.at("strategy") == "full_context") {
            CHECK(rec.at("failed").get<bool>());
            CHECK(rec.at("overflow").get<bool>());
            ++overflow_skips;
        } else if (rec.at("overflow").get<bool>() && !rec.at("failed").get<bool>()) {
            ++trimmed;
        }
    }
    CHECK(overflow_skips == 3);
    CHECK(result.failed_tasks == overflow_skips);
    CHECK(trimmed > 0);
}

TEST_CASE("the min-context filter prunes small scenarios from the grid") {
    TempTree tree("lcqa_minctx_test");
    auto config = small_config(tree, 6);
    config.scenarios = {corpus::Scenario::include_all};
    config.strategies = {assembly::Strategy::full_context()};
    config.min_context_tokens = 1000000;  // nothing qualifies
    auto result = harness::run_experiment(config);
    CHECK(result.completed);
    CHECK(result.total_tasks == 0);
    CHECK(result.completed_tasks == 0);
}

TEST_CASE("per-item scenario failures are recorded and the run continues") {
    TempTree tree("lcqa_itemfail_test");
    const fs::path dir = tree.root / "fixture";
    fs::create_directories(dir);
    {
        std::ofstream notes(dir / "notes.jsonl");
        notes << R"({"note_id":"n1","patient_id":"p1","stay_id":null,"note_type":"clinical_note","timestamp":"2113-01-01T00:00:00Z","text":"patient seen, marker alpha documented"})"
              << "\n";
    }
    {
        std::ofstream qa(dir / "qa.jsonl");
        // First item lacks related_note_types: include_related cannot build.
        qa << R"({"item_id":"q1","patient_id":"p1","question":"What was marker alpha?","task":"open_ended","gold_answer":"alpha","relevant_note_ids":["n1"],"related_note_types":[]})"
           << "\n"
           << R"({"item_id":"q2","patient_id":"p1","question":"What marker was seen?","task":"open_ended","gold_answer":"alpha","relevant_note_ids":["n1"],"related_note_types":["clinical_note"]})"
           << "\n";
    }

    harness::ExperimentConfig config;
    config.notes_file = (dir / "notes.jsonl").string();
    config.qa_file = (dir / "qa.jsonl").string();
    config.scenarios = {corpus::Scenario::include_related};
    config.strategies = {assembly::Strategy::full_context()};
    config.cache_dir = (tree.root / "cache").string();
    config.output_dir = (tree.root / "runs").string();
    config.workers = 1;

    auto result = harness::run_experiment(config);
    CHECK(result.completed);
    CHECK(result.total_tasks == 2);
    CHECK(result.completed_tasks == 2);
    CHECK(result.failed_tasks == 1);  // q1 failed, q2 succeeded
}

TEST_CASE("reports over an empty run dir warn and stay empty") {
    TempTree tree("lcqa_empty_report_test");
    harness::write_reports(tree.root);
    const std::string tsv = slurp(tree.root / "reports" / "aggregates.tsv");
    std::stringstream ss(tsv);
    std::string header;
    std::getline(ss, header);
    CHECK(header.rfind("model\t", 0) == 0);
    std::string rest;
    CHECK_FALSE(std::getline(ss, rest));  // header only
}
