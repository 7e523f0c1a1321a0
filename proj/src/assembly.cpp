#include "lcqa/assembly.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>

#include "lcqa/errors.hpp"
#include "lcqa/time_util.hpp"

namespace lcqa::assembly {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Strategy
// ---------------------------------------------------------------------------

std::string Strategy::id() const {
    switch (kind) {
        case Kind::full_context: return "full_context";
        case Kind::rag_chunks: return "rag_" + std::to_string(k);
        case Kind::rag_hierarchical: return "rag_hir_" + std::to_string(k);
    }
    return "full_context";
}

std::optional<Strategy> Strategy::parse(std::string_view text) {
    if (text == "full_context") return full_context();
    auto parse_k = [](std::string_view digits) -> std::optional<int> {
        if (digits.empty()) return std::nullopt;
        int v = 0;
        for (char c : digits) {
            if (c < '0' || c > '9') return std::nullopt;
            v = v * 10 + (c - '0');
        }
        return v > 0 ? std::optional<int>(v) : std::nullopt;
    };
    if (text.starts_with("rag_hir_")) {
        if (auto k = parse_k(text.substr(8))) return rag_hierarchical(*k);
        return std::nullopt;
    }
    if (text.starts_with("rag_")) {
        if (auto k = parse_k(text.substr(4))) return rag_chunks(*k);
        return std::nullopt;
    }
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// ChunkStore
// ---------------------------------------------------------------------------

ChunkStore::ChunkStore(std::vector<corpus::ClinicalNote> scenario_notes, std::vector<chunking::Chunk> chunks)
    : notes_(std::move(scenario_notes)), chunks_(std::move(chunks)) {
    for (std::size_t i = 0; i < notes_.size(); ++i) note_index_[notes_[i].note_id] = i;
    for (std::size_t i = 0; i < chunks_.size(); ++i) chunk_index_[chunks_[i].chunk_id] = i;
}

const chunking::Chunk* ChunkStore::find_chunk(const std::string& chunk_id) const {
    auto it = chunk_index_.find(chunk_id);
    return it == chunk_index_.end() ? nullptr : &chunks_[it->second];
}

const corpus::ClinicalNote* ChunkStore::find_note(const std::string& note_id) const {
    auto it = note_index_.find(note_id);
    return it == note_index_.end() ? nullptr : &notes_[it->second];
}

// ---------------------------------------------------------------------------
// Assembly
// ---------------------------------------------------------------------------

namespace {

bool segment_before(const Segment& a, const Segment& b) {
    if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
    if (a.parent_note_id != b.parent_note_id) return a.parent_note_id < b.parent_note_id;
    return a.seq_index < b.seq_index;
}

void finalize(AssembledContext& ctx, const chunking::TokenCounter& counter) {
    std::sort(ctx.segments.begin(), ctx.segments.end(), segment_before);
    ctx.token_count = 0;
    for (const auto& s : ctx.segments) ctx.token_count += counter.count(s.text);
    ctx.bin = corpus::assign_bin(ctx.token_count, &ctx.over_cap);
}

}  // namespace

AssembledContext assemble(const retrieval::RankedList& ranked, const ChunkStore& store, Strategy strategy,
                          const chunking::TokenCounter& counter, const std::string& item_id) {
    AssembledContext ctx;
    ctx.item_id = item_id;
    ctx.strategy = strategy;

    switch (strategy.kind) {
        case Strategy::Kind::full_context: {
            for (const auto& note : store.notes()) {
                ctx.segments.push_back({note.text, note.note_id, note.timestamp, 0, 0, note.note_type});
            }
            break;
        }
        case Strategy::Kind::rag_chunks: {
            const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(strategy.k),
                                                           ranked.entries.size());
            for (std::size_t i = 0; i < take; ++i) {
                const auto& id = ranked.entries[i].chunk_id;
                const auto* chunk = store.find_chunk(id);
                if (!chunk) throw IntegrityError("ranked list references unknown chunk '" + id + "'");
                const auto* note = store.find_note(chunk->parent_note_id);
                if (!note) throw IntegrityError("chunk '" + id + "' references unknown note");
                ctx.segments.push_back({chunk->text, chunk->parent_note_id, chunk->timestamp, chunk->seq_index,
                                        static_cast<int>(i + 1), note->note_type});
            }
            break;
        }
        case Strategy::Kind::rag_hierarchical: {
            const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(strategy.k),
                                                           ranked.entries.size());
            std::unordered_map<std::string, int> best_rank;  // parent -> best (smallest) rank
            for (std::size_t i = 0; i < take; ++i) {
                const auto& id = ranked.entries[i].chunk_id;
                const auto* chunk = store.find_chunk(id);
                if (!chunk) throw IntegrityError("ranked list references unknown chunk '" + id + "'");
                auto [it, inserted] = best_rank.try_emplace(chunk->parent_note_id, static_cast<int>(i + 1));
                if (!inserted) it->second = std::min(it->second, static_cast<int>(i + 1));
            }
            for (const auto& [note_id, rank] : best_rank) {
                const auto* note = store.find_note(note_id);
                if (!note) throw IntegrityError("chunk parent references unknown note '" + note_id + "'");
                ctx.segments.push_back({note->text, note->note_id, note->timestamp, 0, rank, note->note_type});
            }
            break;
        }
    }

    finalize(ctx, counter);
    return ctx;
}

bool drop_lowest_ranked(AssembledContext& context, const chunking::TokenCounter& counter) {
    int worst = 0;
    for (const auto& s : context.segments) worst = std::max(worst, s.source_rank);
    if (worst == 0) return false;
    std::erase_if(context.segments, [&](const Segment& s) { return s.source_rank == worst; });
    context.overflow_trimmed = true;
    finalize(context, counter);
    return true;
}

// ---------------------------------------------------------------------------
// Templates
// ---------------------------------------------------------------------------

namespace {

constexpr const char* kExtractiveSystem =
    R"(Your input fields are:
1. `medical_record` (list[str]): List of patient notes (chronological order).
2. `question` (str): A question about the patient's record.
Your output fields are:
1. `answer` (str): The span from the medical record that best answers the question.

All interactions will be structured in the following way, with the appropriate values filled in.

[[ ## medical_record ## ]]
{medical_record}

[[ ## question ## ]]
{question}

[[ ## answer ## ]]
{answer}

[[ ## completed ## ]]

In adhering to this structure, your objective is:
Given a patient's medical record and a question, answer the question correctly and shortly by extracting the most relevant span from the record.)";

constexpr const char* kOpenEndedSystem =
    R"(Your input fields are:
1. `medical_record` (list[str]): List of patient notes (chronological order).
2. `question` (str): A question about the patient's record.
Your output fields are:
1. `answer` (str): Short single-sentence answer to the question.

All interactions will be structured in the following way, with the appropriate values filled in.

[[ ## medical_record ## ]]
{medical_record}

[[ ## question ## ]]
{question}

[[ ## answer ## ]]
{answer}

[[ ## completed ## ]]

In adhering to this structure, your objective is:
Given a patient's medical record and a question, answer the question correctly and shortly.)";

constexpr const char* kMultipleChoiceSystem =
    R"(Your input fields are:
1. `medical_record` (list[str]): List of patient notes (chronological order).
2. `question` (str): A question about the patient's record.
3. `options` (list[str]): Labeled answer options.
Your output fields are:
1. `answer` (str): The label of the single correct option.

All interactions will be structured in the following way, with the appropriate values filled in.

[[ ## medical_record ## ]]
{medical_record}

[[ ## question ## ]]
{question}

[[ ## options ## ]]
{options}

[[ ## answer ## ]]
{answer}

[[ ## completed ## ]]

In adhering to this structure, your objective is:
Given a patient's medical record, a question and labeled options, answer with the label of the correct option.)";

constexpr const char* kJudgeSystem =
    R"(You are a careful clinical QA evaluator. Compare a candidate answer against a reference answer and rate three aspects, each as an integer from 1 (worst) to 5 (best):
- correctness: factual agreement with the reference; contradictions lower the score, compatible extra information does not.
- completeness: coverage of the information present in the reference.
- faithfulness: whether the candidate contains only information supported by or derivable from the reference.

Respond with exactly three lines and nothing else:
correctness: <1-5>
completeness: <1-5>
faithfulness: <1-5>)";

constexpr const char* kJudgeUserPattern =
    R"([[ ## question ## ]]
{question}

[[ ## reference ## ]]
{reference}

[[ ## candidate ## ]]
{candidate})";

Exemplar builtin_exemplar() {
    Exemplar ex;
    ex.record_lines = {
        "[clinical_note | 2098-02-10T09:15:00Z] Patient seen for persistent dry cough lasting two weeks. "
        "Lungs clear on exam. Started on dextromethorphan as needed.",
        "[discharge_summary | 2098-02-18T14:00:00Z] Admitted for community acquired pneumonia. Treated with "
        "azithromycin for five days. Cough resolved. Discharged home in stable condition."};
    ex.question = "What antibiotic was the patient treated with during the admission?";
    ex.answer = "The patient was treated with azithromycin.";
    ex.mc_question = "What condition led to the admission?";
    ex.mc_options = {{"A", "Community acquired pneumonia"},
                     {"B", "Congestive heart failure"},
                     {"C", "Pulmonary embolism"},
                     {"D", "Asthma exacerbation"}};
    ex.mc_answer = "A";
    return ex;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open template file: " + path.string());
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

std::string strip_trailing_newline(std::string s) {
    while (!s.empty() && (s.back() == '\n' || s.back() == '\r')) s.pop_back();
    return s;
}

}  // namespace

TemplateSet TemplateSet::builtin() {
    TemplateSet t;
    t.extractive = {"extractive-v1", kExtractiveSystem};
    t.multiple_choice = {"multiple_choice-v1", kMultipleChoiceSystem};
    t.open_ended = {"open_ended-v1", kOpenEndedSystem};
    t.judge = {"judge-v1", kJudgeSystem, kJudgeUserPattern};
    t.exemplar = builtin_exemplar();
    return t;
}

TemplateSet TemplateSet::load(const std::filesystem::path& dir) {
    TemplateSet t = builtin();
    t.extractive.system_text = strip_trailing_newline(read_file(dir / (t.extractive.id + ".txt")));
    t.multiple_choice.system_text = strip_trailing_newline(read_file(dir / (t.multiple_choice.id + ".txt")));
    t.open_ended.system_text = strip_trailing_newline(read_file(dir / (t.open_ended.id + ".txt")));
    const std::string judge_raw = read_file(dir / (t.judge.id + ".txt"));
    const std::string sep = "\n---user---\n";
    const auto pos = judge_raw.find(sep);
    if (pos == std::string::npos) throw ConfigError("judge template misses the ---user--- separator");
    t.judge.system_text = strip_trailing_newline(judge_raw.substr(0, pos));
    t.judge.user_pattern = strip_trailing_newline(judge_raw.substr(pos + sep.size()));

    const json ex = json::parse(read_file(dir / "exemplar-v1.json"));
    t.exemplar.record_lines = ex.at("record_lines").get<std::vector<std::string>>();
    t.exemplar.question = ex.at("question").get<std::string>();
    t.exemplar.answer = ex.at("answer").get<std::string>();
    t.exemplar.mc_question = ex.at("mc_question").get<std::string>();
    t.exemplar.mc_answer = ex.at("mc_answer").get<std::string>();
    t.exemplar.mc_options.clear();
    for (const auto& o : ex.at("mc_options")) {
        t.exemplar.mc_options.push_back({o.at("label").get<std::string>(), o.at("text").get<std::string>()});
    }
    return t;
}

const TaskTemplate& TemplateSet::for_task(corpus::TaskType task) const {
    switch (task) {
        case corpus::TaskType::extractive: return extractive;
        case corpus::TaskType::multiple_choice: return multiple_choice;
        case corpus::TaskType::open_ended: return open_ended;
    }
    return open_ended;
}

// ---------------------------------------------------------------------------
// Prompt rendering
// ---------------------------------------------------------------------------

std::string segment_display(const Segment& segment) {
    return "[" + corpus::to_string(segment.note_type) + " | " + util::format_iso8601(segment.timestamp) + "] " +
           segment.text;
}

namespace {

std::string options_block(const std::vector<corpus::OptionItem>& options) {
    std::string out;
    for (const auto& o : options) {
        out += o.label;
        out += ". ";
        out += o.text;
        out += "\n";
    }
    if (!out.empty()) out.pop_back();
    return out;
}

std::string interaction_block(const std::string& record_json, const std::string& question,
                              const std::vector<corpus::OptionItem>* options, const std::string* answer) {
    std::string out;
    out += "[[ ## medical_record ## ]]\n" + record_json + "\n\n";
    out += "[[ ## question ## ]]\n" + question + "\n\n";
    if (options) out += "[[ ## options ## ]]\n" + options_block(*options) + "\n\n";
    out += "[[ ## answer ## ]]\n";
    if (answer) out += *answer + "\n\n[[ ## completed ## ]]\n";
    return out;
}

}  // namespace

PromptBundle render_prompt(const AssembledContext& context, const corpus::QAItem& item,
                           const generation::ModelProfile& profile, const TemplateSet& templates) {
    const bool mc = item.task == corpus::TaskType::multiple_choice;
    if (mc && item.options.empty()) {
        throw ConfigError("multiple_choice item " + item.item_id + " has no options to render");
    }

    PromptBundle bundle;
    bundle.task = item.task;
    bundle.system_text = templates.for_task(item.task).system_text;

    json record = json::array();
    for (const auto& s : context.segments) record.push_back(segment_display(s));
    const std::string record_json = record.dump();

    // One-shot exemplar, then the real interaction left open at the answer.
    const auto& ex = templates.exemplar;
    const std::string ex_record = json(ex.record_lines).dump();
    std::string user;
    if (mc) {
        user = interaction_block(ex_record, ex.mc_question, &ex.mc_options, &ex.mc_answer);
        user += "\n";
        user += interaction_block(record_json, item.question, &item.options, nullptr);
    } else {
        user = interaction_block(ex_record, ex.question, nullptr, &ex.answer);
        user += "\n";
        user += interaction_block(record_json, item.question, nullptr, nullptr);
    }
    bundle.user_text = std::move(user);

    bundle.temperature = profile.temperature;
    bundle.max_output_tokens = profile.max_output_tokens;
    if (profile.family == generation::Family::reasoning) {
        bundle.think_token_budget = profile.think_token_budget;
    }
    return bundle;
}

}  // namespace lcqa::assembly
