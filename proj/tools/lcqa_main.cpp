#include <atomic>
#include <csignal>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "lcqa/corpus.hpp"
#include "lcqa/errors.hpp"
#include "lcqa/fixtures.hpp"
#include "lcqa/harness.hpp"

namespace {

std::atomic<bool> g_interrupted{false};

void handle_signal(int) {
    g_interrupted.store(true);
}

int cmd_ingest(const std::string& notes_file, const std::string& qa_file, const std::string& token_scheme) {
    auto counter = lcqa::chunking::TokenCounter::make(token_scheme);
    auto corpus = lcqa::corpus::ingest_corpus(notes_file, qa_file);
    corpus.notes = lcqa::corpus::normalize_notes(std::move(corpus.notes));

    long long tokens = 0;
    for (const auto& n : corpus.notes) tokens += counter.count(n.text);
    std::cout << "notes: " << corpus.notes.size() << "\n"
              << "qa items: " << corpus.items.size() << "\n"
              << "total note tokens (" << token_scheme << "): " << tokens << "\n";

    std::map<std::string, int> bins;
    for (const auto& item : corpus.items) {
        std::vector<lcqa::corpus::ClinicalNote> patient_notes;
        for (const auto& n : corpus.notes) {
            if (n.patient_id == item.patient_id) patient_notes.push_back(n);
        }
        auto ctx = lcqa::corpus::build_scenario(item, patient_notes, lcqa::corpus::Scenario::include_all, counter);
        ++bins[lcqa::corpus::to_string(ctx.bin)];
    }
    std::cout << "include_all context bins:";
    for (const auto& [bin, count] : bins) std::cout << " " << bin << "=" << count;
    std::cout << "\n";
    return 0;
}

void write_sample_config(const std::filesystem::path& dir) {
    nlohmann::json config = {
        {"corpus",
         {{"notes_file", (dir / "notes.jsonl").string()}, {"qa_file", (dir / "qa.jsonl").string()}}},
        {"scenarios", {"exclude_all", "exclude_relevant", "include_all", "include_related"}},
        {"strategies", {"full_context", "rag_5", "rag_10", "rag_15", "rag_hir_3", "rag_hir_5", "rag_hir_7"}},
        {"models",
         {{{"model_id", "stub-echo"}, {"family", "instruct"}, {"endpoint", "stub:echo-gold"}},
          {{"model_id", "stub-echo-reasoning"},
           {"family", "reasoning"},
           {"endpoint", "stub:echo-gold"},
           {"think_token_budget", 20000}}}},
        {"retrieval", {{"k1", 1.2}, {"b", 0.75}, {"k_rrf", 60}, {"candidate_multiplier", 2}}},
        {"chunking", {{"chunk_size", 512}, {"token_scheme", "subword-v1"}}},
        {"services",
         {{"embedding_endpoint", "stub:onehot"},
          {"token_embedding_endpoint", "stub:onehot"},
          {"nli_endpoint", "stub:match"},
          {"judge_endpoint", "stub:judge:5/5/5"}}},
        {"cache_dir", (dir / "cache").string()},
        {"output_dir", (dir / "runs").string()},
        {"workers", 4}};
    std::ofstream out(dir / "config.sample.json");
    out << config.dump(2) << "\n";
}

int cmd_run(const std::string& config_path) {
    auto config = lcqa::harness::load_config(config_path);

    std::signal(SIGINT, handle_signal);
    std::signal(SIGTERM, handle_signal);
    lcqa::harness::RunOptions options;
    options.should_stop = [] { return g_interrupted.load(); };

    auto result = lcqa::harness::run_experiment(config, options);
    std::cout << "run dir: " << result.run_dir.string() << "\n"
              << "tasks: " << result.completed_tasks << "/" << result.total_tasks
              << " (failed: " << result.failed_tasks << ")\n";
    if (!result.completed) {
        std::cout << "run interrupted; invoke again with the same config to resume\n";
        return 2;
    }
    return result.failed_tasks > 0 ? 2 : 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Long-context clinical QA experiment harness"};
    app.require_subcommand(1);

    // ingest
    auto* ingest = app.add_subcommand("ingest", "Parse and validate a notes/QA corpus");
    std::string notes_file, qa_file, token_scheme = "subword-v1";
    ingest->add_option("--notes", notes_file, "Notes JSONL file")->required();
    ingest->add_option("--qa", qa_file, "QA JSONL file")->required();
    ingest->add_option("--token-scheme", token_scheme, "Token counting scheme");

    // fixtures
    auto* fixtures = app.add_subcommand("fixtures", "Emit a synthetic sample corpus");
    std::string out_dir = "fixtures";
    lcqa::fixtures::FixtureSpec spec;
    fixtures->add_option("--out-dir", out_dir, "Output directory");
    fixtures->add_option("--patients", spec.patients, "Number of patients");
    fixtures->add_option("--notes-per-patient", spec.notes_per_patient, "Notes per patient");
    fixtures->add_option("--items", spec.items, "Number of QA items");
    fixtures->add_option("--seed", spec.seed, "Random seed");

    // run
    auto* run = app.add_subcommand("run", "Execute an experiment");
    std::string config_path;
    run->add_option("--config", config_path, "Experiment config JSON")->required();

    // report
    auto* report = app.add_subcommand("report", "Regenerate reports for a run directory");
    std::string run_dir;
    report->add_option("--run-dir", run_dir, "Run directory")->required();

    // validate-config
    auto* validate = app.add_subcommand("validate-config", "Schema-validate a config file");
    std::string validate_path;
    validate->add_option("--config", validate_path, "Experiment config JSON")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (ingest->parsed()) return cmd_ingest(notes_file, qa_file, token_scheme);
        if (fixtures->parsed()) {
            auto corpus = lcqa::fixtures::make_fixture(spec);
            lcqa::fixtures::write_fixture(corpus, out_dir);
            write_sample_config(out_dir);
            std::cout << "wrote " << corpus.notes.size() << " notes and " << corpus.items.size() << " items to "
                      << out_dir << " (with config.sample.json)\n";
            return 0;
        }
        if (run->parsed()) return cmd_run(config_path);
        if (report->parsed()) {
            lcqa::harness::write_reports(run_dir);
            std::cout << "reports written under " << run_dir << "/reports\n";
            return 0;
        }
        if (validate->parsed()) {
            lcqa::harness::load_config(validate_path);
            std::cout << "config ok\n";
            return 0;
        }
    } catch (const lcqa::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const lcqa::ParseError& e) {
        std::cerr << "parse error: " << e.what() << "\n";
        return 1;
    } catch (const lcqa::IntegrityError& e) {
        std::cerr << "integrity error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
