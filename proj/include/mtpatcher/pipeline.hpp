#pragma once

#include <cstdint>
#include <initializer_list>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mtpatcher/dataset.hpp"
#include "mtpatcher/extension.hpp"
#include "mtpatcher/gateway.hpp"
#include "mtpatcher/result.hpp"
#include "mtpatcher/types.hpp"

namespace mtpatcher::pipeline {

using Json = nlohmann::json;

// --- Structured logging --------------------------------------------------------

/// Renders key=value fields as one log line; values containing whitespace,
/// quotes, or '=' are double-quoted with backslash escapes.
std::string kv_line(std::initializer_list<std::pair<std::string_view, std::string>> fields);

/// Writes kv_line(fields) to standard error.
void log_kv(std::initializer_list<std::pair<std::string_view, std::string>> fields);

// --- JSONL stage files -----------------------------------------------------------

struct StageFile {
    std::vector<Json> records;
    bool complete = false;  // terminal sentinel present
};

/// Reads a stage JSONL file: one JSON object per line, completion marked by
/// a final {"kind": "sentinel", "records": N} line. Without the sentinel a
/// torn trailing line is dropped (interrupted write); malformed lines
/// anywhere else, records after the sentinel, or a sentinel count mismatch
/// are errors.
Result<StageFile> read_stage_file(const std::string& path);

/// Append-oriented writer for stage files; finish() seals the file with the
/// sentinel. Each append is flushed so an interrupted run loses at most the
/// line being written.
class StageWriter {
public:
    /// keep_existing retains the current records (resume); otherwise the
    /// file restarts empty. existing is the number of records already in
    /// the file, counted into the sentinel.
    static Result<StageWriter> open(const std::string& path, bool keep_existing,
                                    std::int64_t existing = 0);
    StageWriter(StageWriter&&) noexcept = default;
    StageWriter& operator=(StageWriter&&) noexcept = default;

    Status append(const Json& record);
    Status finish();
    std::int64_t records() const { return records_; }

private:
    StageWriter() = default;
    std::unique_ptr<std::ofstream> out_;
    std::string path_;
    std::int64_t records_ = 0;
};

// --- Configuration ------------------------------------------------------------

struct IterativeConfig {
    bool enabled = false;
    int max_epochs = 4;  // valid range 1..8
};

struct PipelineConfig {
    std::string source_lang;  // human-readable names, used in prompts
    std::string target_lang;
    std::map<std::string, gateway::BackendSpec> backends;  // teacher, student_mt, judge
    std::int64_t sample_n = 20000;
    extension::ExtensionConfig extension;
    IterativeConfig iterative;
    dataset::DatasetMode mode = dataset::DatasetMode::PE_PDS_WA;
    std::int64_t seed = 0;
    std::string corpus_path;
    std::string workdir;
    std::string cache_dir;
    // Runtime knobs; never part of the fingerprint.
    int parallelism = 4;
    bool dry_run = false;
    std::int64_t limit = 0;  // stop a backend stage after N records this run (0 = off)

    static Result<PipelineConfig> from_json(const Json& j);
    static Result<PipelineConfig> load(const std::string& path);
    Status validate() const;
    Result<gateway::BackendSpec> backend(const std::string& name) const;

    /// Canonical identity of everything that shapes outputs (languages,
    /// backends, extension knobs, mode, seed, corpus); runtime knobs such
    /// as parallelism, dry_run, limit, workdir, and cache_dir are excluded
    /// so they never invalidate a resume.
    Json canonical() const;
    std::string fingerprint() const;
};

// --- Checkpoint -----------------------------------------------------------------

enum class Stage {
    Sampled,
    Translated,
    FeedbackDone,
    Selected,
    Extended,
    DatasetBuilt,
    Evaluated,
};

const char* stage_name(Stage s);
std::optional<Stage> stage_from_name(std::string_view name);

struct Checkpoint {
    std::optional<Stage> stage;  // last fully completed stage
    std::set<core::RecordId> completed_record_ids;
    std::string config_fingerprint;

    Json to_json() const;
    static Result<Checkpoint> from_json(const Json& j);
};

/// Missing checkpoint file yields an empty Checkpoint; a malformed one is
/// an error (the workdir is corrupt, resuming blindly could repeat work).
Result<Checkpoint> load_checkpoint(const std::string& workdir);
Status save_checkpoint(const std::string& workdir, const Checkpoint& checkpoint);

// --- Workdir lock -----------------------------------------------------------------

/// <workdir>/.lock with the owning pid. Acquiring over a live process is
/// LockHeld; a lock whose pid is gone is stale and taken over.
class WorkdirLock {
public:
    static Result<WorkdirLock> acquire(const std::string& workdir);
    WorkdirLock() = default;
    WorkdirLock(WorkdirLock&& other) noexcept;
    WorkdirLock& operator=(WorkdirLock&& other) noexcept;
    ~WorkdirLock();
    void release();

private:
    std::string path_;
};

// --- Stage running -----------------------------------------------------------------

struct StageResult {
    std::string stage;
    std::int64_t in = 0;
    std::int64_t out = 0;
    std::int64_t failures = 0;
    std::int64_t shortfall = 0;
    bool complete = true;  // false when --limit stopped the stage early
    Json extra;            // stage-specific summary fields
};

struct SplitsArgs {
    std::string words_tsv;
    std::int64_t seen_n = 5500;
    std::int64_t unseen_n = 500;
};

struct EvaluateArgs {
    std::string bleu_hyp;     // plain text, one hypothesis per line
    std::string bleu_ref;     // plain text, one reference per line
    std::string term_items;   // TSV: source_phrase, target_phrase, hypothesis
};

struct JudgeArgs {
    std::string items_path;  // JSONL: {idiom, definition, source, hypothesis}
};

struct CompareArgs {
    std::string items_path;  // JSONL: {source, word, translation_a, translation_b}
    bool debias = false;
};

/// Owns one workdir run: lock, checkpoint, gateway, and the stage
/// implementations. Stage methods are restartable; completed stages are
/// skipped, interrupted ones resume from their stage file. run_pipeline and
/// run_stage take the workdir lock; the other methods assume the caller
/// holds it.
class Runner {
public:
    explicit Runner(PipelineConfig config);

    /// sample -> translate -> feedback -> select -> extend -> build-dataset.
    /// Returns the manifest, or nullopt when a dry run stopped before the
    /// dataset was built (prompts rendered, no backend calls).
    Result<std::optional<dataset::DatasetManifest>> run_pipeline();

    /// One stage by CLI name ("sample" ... "build-dataset", "splits",
    /// "forge-sets", "evaluate", "judge", "compare").
    Result<StageResult> run_stage(const std::string& name);

    // Utility stages with their own inputs.
    Result<StageResult> splits(const SplitsArgs& args);
    Result<StageResult> forge_sets();
    Result<StageResult> evaluate(const EvaluateArgs& args);
    Result<StageResult> judge(const JudgeArgs& args);
    Result<StageResult> compare(const CompareArgs& args);

    void set_splits_args(SplitsArgs args) { splits_args_ = std::move(args); }
    void set_evaluate_args(EvaluateArgs args) { evaluate_args_ = std::move(args); }
    void set_judge_args(JudgeArgs args) { judge_args_ = std::move(args); }
    void set_compare_args(CompareArgs args) { compare_args_ = std::move(args); }

    gateway::Gateway& gw() { return *gw_; }
    const PipelineConfig& config() const { return config_; }

private:
    Result<StageResult> sample_stage();
    Result<StageResult> translate_stage();
    Result<StageResult> feedback_stage();
    Result<StageResult> select_stage();
    Result<StageResult> extend_stage();
    Result<std::pair<StageResult, dataset::DatasetManifest>> build_dataset_stage();

    Result<Checkpoint> sync_checkpoint();
    Status mark_stage(Stage stage, const std::vector<core::RecordId>& ids);
    Status write_summary(const StageResult& result);
    std::string stage_path(std::string_view stem) const;

    PipelineConfig config_;
    std::unique_ptr<gateway::Gateway> gw_;
    SplitsArgs splits_args_;
    EvaluateArgs evaluate_args_;
    JudgeArgs judge_args_;
    CompareArgs compare_args_;
};

}  // namespace mtpatcher::pipeline
