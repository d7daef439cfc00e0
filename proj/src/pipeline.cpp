#include "mtpatcher/pipeline.hpp"

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <thread>
#include <unordered_map>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "mtpatcher/evaluation.hpp"
#include "mtpatcher/feedback.hpp"
#include "mtpatcher/prompts.hpp"
#include "mtpatcher/text.hpp"

namespace mtpatcher::pipeline {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Structured logging
// ---------------------------------------------------------------------------

std::string kv_line(std::initializer_list<std::pair<std::string_view, std::string>> fields) {
    std::string line;
    for (const auto& [key, value] : fields) {
        if (!line.empty()) line += ' ';
        line += key;
        line += '=';
        bool needs_quotes =
            value.empty() || value.find_first_of(" \t\n\"=") != std::string::npos;
        if (!needs_quotes) {
            line += value;
            continue;
        }
        line += '"';
        for (char c : value) {
            if (c == '"' || c == '\\') line += '\\';
            if (c == '\n') {
                line += "\\n";
                continue;
            }
            line += c;
        }
        line += '"';
    }
    return line;
}

void log_kv(std::initializer_list<std::pair<std::string_view, std::string>> fields) {
    std::cerr << kv_line(fields) << '\n';
}

// ---------------------------------------------------------------------------
// JSONL stage files
// ---------------------------------------------------------------------------

Result<StageFile> read_stage_file(const std::string& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) return make_error(ErrorCode::IoError, "cannot open " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(file, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    StageFile out;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (text::trim(lines[i]).empty()) continue;
        Json j = Json::parse(lines[i], nullptr, false);
        if (j.is_discarded()) {
            // A torn final line is what an interrupted append leaves behind.
            if (i + 1 == lines.size()) break;
            return make_error(ErrorCode::ParseFailure,
                              path + ":" + std::to_string(i + 1) + ": malformed JSON line");
        }
        if (j.is_object() && j.value("kind", std::string()) == "sentinel") {
            for (std::size_t k = i + 1; k < lines.size(); ++k) {
                if (!text::trim(lines[k]).empty())
                    return make_error(ErrorCode::ParseFailure,
                                      path + ": records after the sentinel line");
            }
            auto counted = j.value("records", std::int64_t{-1});
            if (counted != static_cast<std::int64_t>(out.records.size()))
                return make_error(ErrorCode::ParseFailure,
                                  path + ": sentinel counts " + std::to_string(counted) +
                                      " records, file has " +
                                      std::to_string(out.records.size()));
            out.complete = true;
            break;
        }
        out.records.push_back(std::move(j));
    }
    return out;
}

Result<StageWriter> StageWriter::open(const std::string& path, bool keep_existing,
                                      std::int64_t existing) {
    StageWriter writer;
    writer.path_ = path;
    writer.records_ = keep_existing ? existing : 0;
    auto mode = std::ios::binary | (keep_existing ? std::ios::app : std::ios::trunc);
    writer.out_ = std::make_unique<std::ofstream>(path, mode);
    if (!*writer.out_)
        return make_error(ErrorCode::IoError, "cannot open " + path + " for writing");
    return writer;
}

Status StageWriter::append(const Json& record) {
    *out_ << record.dump() << '\n';
    out_->flush();
    if (!*out_) return make_error(ErrorCode::IoError, "short write to " + path_);
    records_ += 1;
    return ok_status();
}

Status StageWriter::finish() {
    Json sentinel{{"kind", "sentinel"}, {"records", records_}};
    *out_ << sentinel.dump() << '\n';
    out_->flush();
    if (!*out_) return make_error(ErrorCode::IoError, "short write to " + path_);
    out_->close();
    return ok_status();
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

Result<PipelineConfig> PipelineConfig::from_json(const Json& j) {
    if (!j.is_object())
        return make_error(ErrorCode::ConfigError, "config is not a JSON object");
    PipelineConfig config;
    auto str_field = [&](const char* key, std::string& into, bool required) -> Status {
        if (!j.contains(key)) {
            if (required)
                return make_error(ErrorCode::ConfigError,
                                  std::string("config is missing \"") + key + "\"");
            return ok_status();
        }
        if (!j.at(key).is_string())
            return make_error(ErrorCode::ConfigError, std::string(key) + " must be a string");
        into = j.at(key).get<std::string>();
        return ok_status();
    };
    if (auto s = str_field("source_lang", config.source_lang, true); !s) return s.error();
    if (auto s = str_field("target_lang", config.target_lang, true); !s) return s.error();
    config.sample_n = j.value("sample_n", config.sample_n);
    config.seed = j.value("seed", config.seed);
    config.parallelism = j.value("parallelism", config.parallelism);
    config.limit = j.value("limit", config.limit);
    config.dry_run = j.value("dry_run", config.dry_run);
    if (j.contains("mode")) {
        if (!j.at("mode").is_string())
            return make_error(ErrorCode::ConfigError, "mode must be a string");
        auto mode = dataset::dataset_mode_from_name(j.at("mode").get<std::string>());
        if (!mode) return mode.error();
        config.mode = *mode;
    }
    if (j.contains("backends")) {
        if (!j.at("backends").is_object())
            return make_error(ErrorCode::ConfigError, "backends must be an object");
        for (const auto& [name, spec_json] : j.at("backends").items()) {
            auto spec = gateway::BackendSpec::from_json(spec_json);
            if (!spec)
                return make_error(ErrorCode::ConfigError,
                                  "backend \"" + name + "\": " + spec.error().message);
            config.backends.emplace(name, std::move(*spec));
        }
    }
    if (j.contains("extension")) {
        const Json& e = j.at("extension");
        if (!e.is_object())
            return make_error(ErrorCode::ConfigError, "extension must be an object");
        config.extension.pairs_per_word =
            e.value("pairs_per_word", config.extension.pairs_per_word);
        config.extension.words_per_aspect =
            e.value("words_per_aspect", config.extension.words_per_aspect);
        config.extension.contexts_per_analog =
            e.value("contexts_per_analog", config.extension.contexts_per_analog);
        config.extension.max_regen_attempts =
            e.value("max_regen_attempts", config.extension.max_regen_attempts);
    }
    if (j.contains("iterative")) {
        const Json& it = j.at("iterative");
        if (!it.is_object())
            return make_error(ErrorCode::ConfigError, "iterative must be an object");
        config.iterative.enabled = it.value("enabled", config.iterative.enabled);
        config.iterative.max_epochs = it.value("max_epochs", config.iterative.max_epochs);
    }
    if (j.contains("paths")) {
        const Json& p = j.at("paths");
        if (!p.is_object())
            return make_error(ErrorCode::ConfigError, "paths must be an object");
        config.corpus_path = p.value("corpus", config.corpus_path);
        config.workdir = p.value("workdir", config.workdir);
        config.cache_dir = p.value("cache_dir", config.cache_dir);
    }
    return config;
}

Result<PipelineConfig> PipelineConfig::load(const std::string& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) return make_error(ErrorCode::IoError, "cannot open config " + path);
    std::stringstream buffer;
    buffer << file.rdbuf();
    Json j = Json::parse(buffer.str(), nullptr, false);
    if (j.is_discarded())
        return make_error(ErrorCode::ConfigError, path + " is not valid JSON");
    auto config = from_json(j);
    if (!config) return config;
    // Relative paths in the file are resolved against the file's directory,
    // so runs do not depend on the caller's working directory.
    fs::path base = fs::path(path).parent_path();
    auto resolve = [&](std::string& p) {
        if (!p.empty() && fs::path(p).is_relative()) p = (base / p).lexically_normal().string();
    };
    resolve(config->corpus_path);
    resolve(config->workdir);
    resolve(config->cache_dir);
    for (auto& [name, spec] : config->backends) resolve(spec.script_path);
    return config;
}

Status PipelineConfig::validate() const {
    if (source_lang.empty() || target_lang.empty())
        return make_error(ErrorCode::ConfigError, "source_lang and target_lang are required");
    if (sample_n < 1) return make_error(ErrorCode::ConfigError, "sample_n must be >= 1");
    if (parallelism < 1) return make_error(ErrorCode::ConfigError, "parallelism must be >= 1");
    if (limit < 0) return make_error(ErrorCode::ConfigError, "limit must be >= 0");
    if (workdir.empty()) return make_error(ErrorCode::ConfigError, "workdir is required");
    if (iterative.max_epochs < 1 || iterative.max_epochs > 8)
        return make_error(ErrorCode::ConfigError, "iterative.max_epochs must be within 1..8");
    if (auto s = extension.validate(); !s) return s;
    for (const auto& [name, spec] : backends) {
        if (auto s = spec.validate(); !s)
            return make_error(ErrorCode::ConfigError,
                              "backend \"" + name + "\": " + s.error().message);
    }
    return ok_status();
}

Result<gateway::BackendSpec> PipelineConfig::backend(const std::string& name) const {
    auto it = backends.find(name);
    if (it == backends.end())
        return make_error(ErrorCode::ConfigError, "backend not configured: " + name);
    return it->second;
}

Json PipelineConfig::canonical() const {
    Json backends_j = Json::object();
    for (const auto& [name, spec] : backends) backends_j[name] = spec.fingerprint();
    return Json{{"source_lang", source_lang},
                {"target_lang", target_lang},
                {"seed", seed},
                {"sample_n", sample_n},
                {"mode", dataset::dataset_mode_name(mode)},
                {"corpus", corpus_path},
                {"backends", backends_j},
                {"extension",
                 Json{{"pairs_per_word", extension.pairs_per_word},
                      {"words_per_aspect", extension.words_per_aspect},
                      {"contexts_per_analog", extension.contexts_per_analog},
                      {"max_regen_attempts", extension.max_regen_attempts}}},
                {"iterative",
                 Json{{"enabled", iterative.enabled},
                      {"max_epochs", iterative.max_epochs}}}};
}

std::string PipelineConfig::fingerprint() const { return text::sha256_hex(canonical().dump()); }

// ---------------------------------------------------------------------------
// Checkpoint
// ---------------------------------------------------------------------------

const char* stage_name(Stage s) {
    switch (s) {
        case Stage::Sampled: return "sampled";
        case Stage::Translated: return "translated";
        case Stage::FeedbackDone: return "feedback_done";
        case Stage::Selected: return "selected";
        case Stage::Extended: return "extended";
        case Stage::DatasetBuilt: return "dataset_built";
        case Stage::Evaluated: return "evaluated";
    }
    return "unknown";
}

std::optional<Stage> stage_from_name(std::string_view name) {
    static const std::pair<std::string_view, Stage> kStages[] = {
        {"sampled", Stage::Sampled},          {"translated", Stage::Translated},
        {"feedback_done", Stage::FeedbackDone}, {"selected", Stage::Selected},
        {"extended", Stage::Extended},        {"dataset_built", Stage::DatasetBuilt},
        {"evaluated", Stage::Evaluated},
    };
    for (const auto& [n, s] : kStages)
        if (n == name) return s;
    return std::nullopt;
}

Json Checkpoint::to_json() const {
    Json ids = Json::array();
    for (auto id : completed_record_ids) ids.push_back(id);
    Json j{{"completed_record_ids", std::move(ids)},
           {"config_fingerprint", config_fingerprint}};
    if (stage)
        j["stage"] = stage_name(*stage);
    else
        j["stage"] = nullptr;
    return j;
}

Result<Checkpoint> Checkpoint::from_json(const Json& j) {
    if (!j.is_object())
        return make_error(ErrorCode::ParseFailure, "checkpoint is not a JSON object");
    Checkpoint cp;
    if (j.contains("stage") && !j.at("stage").is_null()) {
        if (!j.at("stage").is_string())
            return make_error(ErrorCode::ParseFailure, "checkpoint stage must be a string");
        auto stage = stage_from_name(j.at("stage").get<std::string>());
        if (!stage)
            return make_error(ErrorCode::ParseFailure,
                              "unknown checkpoint stage: " + j.at("stage").get<std::string>());
        cp.stage = *stage;
    }
    if (j.contains("completed_record_ids")) {
        if (!j.at("completed_record_ids").is_array())
            return make_error(ErrorCode::ParseFailure, "completed_record_ids must be an array");
        for (const auto& id : j.at("completed_record_ids")) {
            if (!id.is_number_integer())
                return make_error(ErrorCode::ParseFailure, "record ids must be integers");
            cp.completed_record_ids.insert(id.get<core::RecordId>());
        }
    }
    cp.config_fingerprint = j.value("config_fingerprint", std::string());
    return cp;
}

namespace {

std::string checkpoint_path(const std::string& workdir) {
    return (fs::path(workdir) / "checkpoint.json").string();
}

Status write_file_atomic(const std::string& path, const std::string& body) {
    static std::atomic<std::uint64_t> counter{0};
    std::string tmp = path + ".tmp." + std::to_string(::getpid()) + "." +
                      std::to_string(counter.fetch_add(1));
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) return make_error(ErrorCode::IoError, "cannot open " + tmp);
        out << body;
        out.flush();
        if (!out) {
            std::error_code ec;
            fs::remove(tmp, ec);
            return make_error(ErrorCode::IoError, "short write to " + tmp);
        }
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp, ec);
        return make_error(ErrorCode::IoError, "cannot replace " + path);
    }
    return ok_status();
}

}  // namespace

Result<Checkpoint> load_checkpoint(const std::string& workdir) {
    std::string path = checkpoint_path(workdir);
    if (!fs::exists(path)) return Checkpoint{};
    std::ifstream file(path, std::ios::binary);
    if (!file) return make_error(ErrorCode::IoError, "cannot open " + path);
    std::stringstream buffer;
    buffer << file.rdbuf();
    Json j = Json::parse(buffer.str(), nullptr, false);
    if (j.is_discarded())
        return make_error(ErrorCode::ParseFailure, path + " is not valid JSON");
    return Checkpoint::from_json(j);
}

Status save_checkpoint(const std::string& workdir, const Checkpoint& checkpoint) {
    return write_file_atomic(checkpoint_path(workdir), checkpoint.to_json().dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Workdir lock
// ---------------------------------------------------------------------------

Result<WorkdirLock> WorkdirLock::acquire(const std::string& workdir) {
    std::error_code ec;
    fs::create_directories(workdir, ec);
    std::string path = (fs::path(workdir) / ".lock").string();
    if (fs::exists(path)) {
        std::ifstream existing(path);
        long pid = 0;
        existing >> pid;
        if (pid > 0 && pid != static_cast<long>(::getpid()) &&
            fs::exists("/proc/" + std::to_string(pid)))
            return make_error(ErrorCode::LockHeld,
                              workdir + " is locked by running process " + std::to_string(pid));
        if (pid > 0 && pid != static_cast<long>(::getpid()))
            log_kv({{"event", "stale_lock_takeover"}, {"pid", std::to_string(pid)}});
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) return make_error(ErrorCode::IoError, "cannot write lock file " + path);
    out << ::getpid() << '\n';
    out.flush();
    if (!out) return make_error(ErrorCode::IoError, "cannot write lock file " + path);
    WorkdirLock lock;
    lock.path_ = path;
    return lock;
}

WorkdirLock::WorkdirLock(WorkdirLock&& other) noexcept : path_(std::move(other.path_)) {
    other.path_.clear();
}

WorkdirLock& WorkdirLock::operator=(WorkdirLock&& other) noexcept {
    if (this != &other) {
        release();
        path_ = std::move(other.path_);
        other.path_.clear();
    }
    return *this;
}

WorkdirLock::~WorkdirLock() { release(); }

void WorkdirLock::release() {
    if (path_.empty()) return;
    std::error_code ec;
    fs::remove(path_, ec);
    path_.clear();
}

// ---------------------------------------------------------------------------
// Shared stage plumbing
// ---------------------------------------------------------------------------

namespace {

Result<core::RecordId> id_field(const Json& j, const char* key) {
    if (!j.is_object() || !j.contains(key) || !j.at(key).is_number_integer())
        return make_error(ErrorCode::ParseFailure,
                          std::string("stage record is missing integer \"") + key + "\"");
    return j.at(key).get<core::RecordId>();
}

Result<core::RecordId> origin_record_id(const Json& j) {
    if (!j.is_object() || !j.contains("origin"))
        return make_error(ErrorCode::ParseFailure, "stage record is missing \"origin\"");
    return id_field(j.at("origin"), "record_id");
}

Result<StageFile> require_complete(const std::string& path, const char* producing_stage) {
    if (!fs::exists(path))
        return make_error(ErrorCode::MissingInput,
                          "missing " + path + " (run the " + producing_stage +
                              " stage first)");
    auto file = read_stage_file(path);
    if (!file) return file;
    if (!file->complete)
        return make_error(ErrorCode::MissingInput,
                          path + " is incomplete (rerun the " + producing_stage + " stage)");
    return file;
}

struct ResumeState {
    std::vector<Json> records;
    bool complete = false;
};

// Loads an in-progress stage file and drops the trailing record group (the
// records of the last record id), which an interrupted run may have written
// only partially; the file is rewritten without them so appends continue
// from a clean prefix.
Result<ResumeState> prepare_stage_resume(
    const std::string& path,
    const std::function<Result<core::RecordId>(const Json&)>& id_of) {
    ResumeState state;
    if (!fs::exists(path)) return state;
    auto file = read_stage_file(path);
    if (!file) return file.error();
    state.records = std::move(file->records);
    state.complete = file->complete;
    if (state.complete || state.records.empty()) return state;

    auto last_id = id_of(state.records.back());
    if (!last_id) return last_id.error();
    while (!state.records.empty()) {
        auto id = id_of(state.records.back());
        if (!id) return id.error();
        if (*id != *last_id) break;
        state.records.pop_back();
    }
    std::string body;
    for (const auto& record : state.records) {
        body += record.dump();
        body += '\n';
    }
    if (auto s = write_file_atomic(path, body); !s) return s.error();
    return state;
}

Result<std::vector<Json>> read_jsonl_strict(const std::string& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) return make_error(ErrorCode::IoError, "cannot open " + path);
    std::vector<Json> records;
    std::string line;
    int line_no = 0;
    while (std::getline(file, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (text::trim(line).empty()) continue;
        Json j = Json::parse(line, nullptr, false);
        if (j.is_discarded())
            return make_error(ErrorCode::ParseFailure,
                              path + ":" + std::to_string(line_no) + ": malformed JSON line");
        records.push_back(std::move(j));
    }
    return records;
}

Result<std::vector<std::string>> read_lines(const std::string& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) return make_error(ErrorCode::IoError, "cannot open " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(file, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    return lines;
}

void parallel_for(std::size_t count, int parallelism,
                  const std::function<void(std::size_t)>& fn) {
    if (count == 0) return;
    auto workers = std::min<std::size_t>(count, static_cast<std::size_t>(
                                                    std::max(1, parallelism)));
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (;;) {
                std::size_t i = next.fetch_add(1);
                if (i >= count) return;
                fn(i);
            }
        });
    }
    for (auto& t : pool) t.join();
}

std::string reason_from_error(const Error& e) {
    return e.code == ErrorCode::ParseFailure ? "parse_failure"
                                             : std::string(error_code_name(e.code));
}

Json encode_feedback_record(core::RecordId id, const std::string& hypothesis,
                            const std::optional<core::Feedback>& fb, int epochs,
                            const std::string& status, const std::string& discard_reason) {
    Json j{{"sentence_id", id},
           {"hypothesis", hypothesis},
           {"epochs", epochs},
           {"status", status}};
    if (fb) {
        j["verdict"] = core::verdict_name(fb->verdict());
        Json errors = Json::array();
        for (const auto& span : fb->errors()) errors.push_back(core::encode(span));
        j["errors"] = std::move(errors);
        j["post_edit"] = fb->post_edit();
    }
    if (!discard_reason.empty()) j["discard_reason"] = discard_reason;
    return j;
}

struct TranslateInfo {
    std::string source_text;
    std::string producer;
};

Result<std::unordered_map<core::RecordId, TranslateInfo>> translate_map(
    const std::vector<Json>& records) {
    std::unordered_map<core::RecordId, TranslateInfo> map;
    for (const auto& j : records) {
        auto rec = core::decode_translation_record(j);
        if (!rec) return rec.error();
        map[rec->sentence_id()] = TranslateInfo{rec->source_text(), rec->producer()};
    }
    return map;
}

Result<std::pair<core::TranslationRecord, core::Feedback>> decode_selected(
    const Json& j, const std::unordered_map<core::RecordId, TranslateInfo>& sources) {
    auto id = id_field(j, "sentence_id");
    if (!id) return id.error();
    if (!j.contains("hypothesis") || !j.at("hypothesis").is_string())
        return make_error(ErrorCode::ParseFailure, "selected record has no hypothesis");
    if (!j.contains("post_edit") || !j.at("post_edit").is_string())
        return make_error(ErrorCode::ParseFailure, "selected record has no post_edit");
    if (!j.contains("errors") || !j.at("errors").is_array())
        return make_error(ErrorCode::ParseFailure, "selected record has no errors array");
    auto source = sources.find(*id);
    if (source == sources.end())
        return make_error(ErrorCode::StageFailure,
                          "record " + std::to_string(*id) + " has no translate output");
    auto record = core::TranslationRecord::create(*id, source->second.source_text,
                                                  j.at("hypothesis").get<std::string>(),
                                                  source->second.producer);
    if (!record) return record.error();
    std::vector<core::ErrorSpan> spans;
    for (const auto& span_json : j.at("errors")) {
        auto span = core::decode_error_span(span_json);
        if (!span) return span.error();
        spans.push_back(std::move(*span));
    }
    auto fb = core::Feedback::with_errors(std::move(spans),
                                          j.at("post_edit").get<std::string>());
    if (!fb) return fb.error();
    return std::make_pair(std::move(*record), std::move(*fb));
}

std::string plain_line(std::string_view s) {
    std::string out(s);
    for (char& c : out)
        if (c == '\t' || c == '\n' || c == '\r') c = ' ';
    return out;
}

Status write_pair_tsv(const std::string& path,
                      const std::vector<std::pair<std::string, std::string>>& pairs) {
    std::string body;
    for (const auto& [src, tgt] : pairs) {
        body += plain_line(src);
        body += '\t';
        body += plain_line(tgt);
        body += '\n';
    }
    return write_file_atomic(path, body);
}

}  // namespace

// ---------------------------------------------------------------------------
// Runner
// ---------------------------------------------------------------------------

Runner::Runner(PipelineConfig config) : config_(std::move(config)) {
    gateway::GatewayConfig gcfg;
    gcfg.cache_dir = config_.cache_dir;
    gw_ = std::make_unique<gateway::Gateway>(gcfg);
}

std::string Runner::stage_path(std::string_view stem) const {
    return (fs::path(config_.workdir) / stem).string();
}

Result<Checkpoint> Runner::sync_checkpoint() {
    std::error_code ec;
    fs::create_directories(config_.workdir, ec);
    auto cp = load_checkpoint(config_.workdir);
    if (!cp) return cp;
    std::string fp = config_.fingerprint();
    if (cp->config_fingerprint.empty()) {
        cp->config_fingerprint = fp;
        if (auto s = save_checkpoint(config_.workdir, *cp); !s) return s.error();
    } else if (cp->config_fingerprint != fp) {
        return make_error(ErrorCode::ResumeMismatch,
                          config_.workdir + " was started with a different config (" +
                              cp->config_fingerprint.substr(0, 12) + "... vs " +
                              fp.substr(0, 12) + "...)");
    }
    return cp;
}

Status Runner::mark_stage(Stage stage, const std::vector<core::RecordId>& ids) {
    auto cp = load_checkpoint(config_.workdir);
    if (!cp) return cp.error();
    cp->stage = stage;
    cp->completed_record_ids.clear();
    cp->completed_record_ids.insert(ids.begin(), ids.end());
    cp->config_fingerprint = config_.fingerprint();
    return save_checkpoint(config_.workdir, *cp);
}

Status Runner::write_summary(const StageResult& result) {
    Json j{{"stage", result.stage},     {"in", result.in},
           {"out", result.out},         {"failures", result.failures},
           {"shortfall", result.shortfall}, {"complete", result.complete}};
    if (result.extra.is_object())
        for (const auto& [key, value] : result.extra.items()) j[key] = value;
    log_kv({{"stage", result.stage},
            {"in", std::to_string(result.in)},
            {"out", std::to_string(result.out)},
            {"failures", std::to_string(result.failures)},
            {"shortfall", std::to_string(result.shortfall)},
            {"complete", result.complete ? "true" : "false"}});
    return write_file_atomic(stage_path(result.stage + ".summary.json"), j.dump(2) + "\n");
}

// --- sample ---------------------------------------------------------------------

Result<StageResult> Runner::sample_stage() {
    auto cp = sync_checkpoint();
    if (!cp) return cp.error();
    StageResult result;
    result.stage = "sample";
    std::string out_path = stage_path("sample.jsonl");
    if (fs::exists(out_path)) {
        auto existing = read_stage_file(out_path);
        if (existing && existing->complete) {
            result.in = result.out = static_cast<std::int64_t>(existing->records.size());
            result.extra = Json{{"skipped", true}};
            if (auto s = write_summary(result); !s) return s.error();
            return result;
        }
    }
    if (!fs::exists(config_.corpus_path))
        return make_error(ErrorCode::MissingInput,
                          "missing corpus file " + config_.corpus_path);
    auto lines = read_lines(config_.corpus_path);
    if (!lines) return lines.error();
    std::vector<core::SourceSentence> corpus;
    core::RecordId line_no = 0;
    for (const auto& line : *lines) {
        ++line_no;
        auto sentence = core::SourceSentence::create(line_no, line, config_.source_lang);
        if (sentence) corpus.push_back(std::move(*sentence));
    }
    result.in = static_cast<std::int64_t>(corpus.size());
    auto sampled = dataset::sample_corpus(corpus, static_cast<std::size_t>(config_.sample_n),
                                          static_cast<std::uint64_t>(config_.seed));
    if (!sampled) return sampled.error();
    auto writer = StageWriter::open(out_path, false);
    if (!writer) return writer.error();
    std::vector<core::RecordId> ids;
    for (const auto& sentence : *sampled) {
        if (auto s = writer->append(core::encode(sentence)); !s) return s.error();
        ids.push_back(sentence.id());
    }
    if (auto s = writer->finish(); !s) return s.error();
    result.out = writer->records();
    if (auto s = mark_stage(Stage::Sampled, ids); !s) return s.error();
    if (auto s = write_summary(result); !s) return s.error();
    return result;
}

// --- translate ---------------------------------------------------------------------

Result<StageResult> Runner::translate_stage() {
    auto cp = sync_checkpoint();
    if (!cp) return cp.error();
    StageResult result;
    result.stage = "translate";
    auto upstream = require_complete(stage_path("sample.jsonl"), "sample");
    if (!upstream) return upstream.error();
    std::vector<core::SourceSentence> sentences;
    for (const auto& j : upstream->records) {
        auto sentence = core::decode_source_sentence(j);
        if (!sentence) return sentence.error();
        sentences.push_back(std::move(*sentence));
    }
    result.in = static_cast<std::int64_t>(sentences.size());

    std::string out_path = stage_path("translate.jsonl");
    auto resume = prepare_stage_resume(
        out_path, [](const Json& j) { return id_field(j, "sentence_id"); });
    if (!resume) return resume.error();
    if (resume->complete) {
        result.out = static_cast<std::int64_t>(resume->records.size());
        result.extra = Json{{"skipped", true}};
        if (auto s = write_summary(result); !s) return s.error();
        return result;
    }
    std::unordered_set<core::RecordId> done;
    std::vector<core::RecordId> ids;
    for (const auto& j : resume->records) {
        auto id = id_field(j, "sentence_id");
        if (!id) return id.error();
        done.insert(*id);
        ids.push_back(*id);
    }
    std::vector<core::SourceSentence> pending;
    for (auto& sentence : sentences)
        if (!done.count(sentence.id())) pending.push_back(std::move(sentence));

    auto spec = config_.backend("student_mt");
    if (!spec) return spec.error();
    auto tmpl = prompts::builtin_template("translate");
    if (!tmpl) return tmpl.error();

    bool truncated = false;
    if (config_.limit > 0 && static_cast<std::int64_t>(pending.size()) > config_.limit) {
        pending.erase(pending.begin() + static_cast<std::ptrdiff_t>(config_.limit),
                      pending.end());
        truncated = true;
    }

    std::vector<Result<std::string>> prompts_for;
    prompts_for.reserve(pending.size());
    for (const auto& sentence : pending)
        prompts_for.push_back(prompts::render_prompt(*tmpl,
                                                     {{"srclang", config_.source_lang},
                                                      {"tgtlang", config_.target_lang},
                                                      {"srctext", sentence.text()}}));

    if (config_.dry_run) {
        auto writer = StageWriter::open(stage_path("translate.prompts.jsonl"), false);
        if (!writer) return writer.error();
        for (std::size_t i = 0; i < pending.size(); ++i) {
            if (!prompts_for[i]) continue;
            auto s = writer->append(Json{{"sentence_id", pending[i].id()},
                                         {"prompt", *prompts_for[i]}});
            if (!s) return s.error();
        }
        if (auto s = writer->finish(); !s) return s.error();
        result.out = 0;
        result.extra = Json{{"dry_run", true},
                            {"prompts", stage_path("translate.prompts.jsonl")}};
        if (auto s = write_summary(result); !s) return s.error();
        return result;
    }

    std::vector<gateway::ChatRequest> requests;
    std::vector<std::size_t> request_index(pending.size(), SIZE_MAX);
    for (std::size_t i = 0; i < pending.size(); ++i) {
        if (!prompts_for[i]) continue;
        auto request = gateway::ChatRequest::create(spec->model, {{"user", *prompts_for[i]}},
                                                    0.0, 512);
        if (!request) continue;
        request_index[i] = requests.size();
        requests.push_back(std::move(*request));
    }
    auto responses = gw_->complete_batch(*spec, requests, config_.parallelism);

    auto writer = StageWriter::open(out_path, true,
                                    static_cast<std::int64_t>(resume->records.size()));
    if (!writer) return writer.error();
    for (std::size_t i = 0; i < pending.size(); ++i) {
        const auto& sentence = pending[i];
        if (request_index[i] == SIZE_MAX) {
            result.failures += 1;
            log_kv({{"stage", "translate"},
                    {"record", std::to_string(sentence.id())},
                    {"error", prompts_for[i] ? "bad request" : prompts_for[i].error().message}});
            continue;
        }
        const auto& response = responses[request_index[i]];
        if (!response) {
            result.failures += 1;
            log_kv({{"stage", "translate"},
                    {"record", std::to_string(sentence.id())},
                    {"error", response.error().message}});
            continue;
        }
        auto record = core::TranslationRecord::create(sentence.id(), sentence.text(),
                                                      text::trim(response->content),
                                                      "student_mt:" + spec->model);
        if (!record) {
            result.failures += 1;
            log_kv({{"stage", "translate"},
                    {"record", std::to_string(sentence.id())},
                    {"error", record.error().message}});
            continue;
        }
        if (auto s = writer->append(core::encode(*record)); !s) return s.error();
        ids.push_back(sentence.id());
    }
    result.out = writer->records();
    result.complete = !truncated;
    if (!truncated) {
        if (auto s = writer->finish(); !s) return s.error();
        if (auto s = mark_stage(Stage::Translated, ids); !s) return s.error();
    }
    if (auto s = write_summary(result); !s) return s.error();
    return result;
}

// --- feedback ---------------------------------------------------------------------

Result<StageResult> Runner::feedback_stage() {
    auto cp = sync_checkpoint();
    if (!cp) return cp.error();
    StageResult result;
    result.stage = "feedback";
    auto upstream = require_complete(stage_path("translate.jsonl"), "translate");
    if (!upstream) return upstream.error();
    std::vector<core::TranslationRecord> records;
    for (const auto& j : upstream->records) {
        auto record = core::decode_translation_record(j);
        if (!record) return record.error();
        records.push_back(std::move(*record));
    }
    result.in = static_cast<std::int64_t>(records.size());

    std::string out_path = stage_path("feedback.jsonl");
    auto resume = prepare_stage_resume(
        out_path, [](const Json& j) { return id_field(j, "sentence_id"); });
    if (!resume) return resume.error();
    if (resume->complete) {
        result.out = static_cast<std::int64_t>(resume->records.size());
        for (const auto& j : resume->records)
            if (j.value("status", std::string()) == "discarded") result.failures += 1;
        result.extra = Json{{"skipped", true}};
        if (auto s = write_summary(result); !s) return s.error();
        return result;
    }
    std::unordered_set<core::RecordId> done;
    std::vector<core::RecordId> ids;
    for (const auto& j : resume->records) {
        auto id = id_field(j, "sentence_id");
        if (!id) return id.error();
        done.insert(*id);
        ids.push_back(*id);
        if (j.value("status", std::string()) == "discarded") result.failures += 1;
    }
    std::vector<core::TranslationRecord> pending;
    for (auto& record : records)
        if (!done.count(record.sentence_id())) pending.push_back(std::move(record));

    auto spec = config_.backend("teacher");
    if (!spec) return spec.error();
    auto tmpl = prompts::builtin_template("feedback");
    if (!tmpl) return tmpl.error();

    bool truncated = false;
    if (config_.limit > 0 && static_cast<std::int64_t>(pending.size()) > config_.limit) {
        pending.erase(pending.begin() + static_cast<std::ptrdiff_t>(config_.limit),
                      pending.end());
        truncated = true;
    }

    if (config_.dry_run) {
        auto writer = StageWriter::open(stage_path("feedback.prompts.jsonl"), false);
        if (!writer) return writer.error();
        for (const auto& record : pending) {
            auto prompt = prompts::render_prompt(*tmpl,
                                                 {{"srclang", config_.source_lang},
                                                  {"tgtlang", config_.target_lang},
                                                  {"srctext", record.source_text()},
                                                  {"tgttext", record.hypothesis()}});
            if (!prompt) continue;
            auto s = writer->append(Json{{"sentence_id", record.sentence_id()},
                                         {"prompt", *prompt}});
            if (!s) return s.error();
        }
        if (auto s = writer->finish(); !s) return s.error();
        result.extra = Json{{"dry_run", true},
                            {"prompts", stage_path("feedback.prompts.jsonl")}};
        if (auto s = write_summary(result); !s) return s.error();
        return result;
    }

    feedback::FeedbackContext base{gw_.get(),          *spec,
                                   *tmpl,              config_.source_lang,
                                   config_.target_lang, 0.0,
                                   1024};
    std::vector<Json> outputs(pending.size());
    parallel_for(pending.size(), config_.parallelism, [&](std::size_t i) {
        feedback::FeedbackContext ctx = base;
        const auto& record = pending[i];
        if (config_.iterative.enabled) {
            auto state = feedback::iterate_feedback(ctx, record, config_.iterative.max_epochs);
            std::optional<core::Feedback> fb;
            std::string status = feedback::iteration_status_name(state.status);
            std::string reason = state.discard_reason;
            if (state.status == feedback::IterationStatus::Kept) {
                if (state.corrected_spans.empty()) {
                    fb = core::Feedback::no_error(state.current_translation);
                } else {
                    auto made = core::Feedback::with_errors(state.corrected_spans,
                                                            state.current_translation);
                    if (made) {
                        fb = std::move(*made);
                    } else {
                        status = "discarded";
                        reason = "parse_failure";
                    }
                }
            }
            outputs[i] = encode_feedback_record(record.sentence_id(), record.hypothesis(), fb,
                                                state.epoch, status, reason);
            return;
        }
        auto fb = feedback::request_feedback(ctx, record.source_text(), record.hypothesis());
        if (fb) {
            outputs[i] = encode_feedback_record(record.sentence_id(), record.hypothesis(), *fb,
                                                1, "kept", {});
        } else {
            outputs[i] = encode_feedback_record(record.sentence_id(), record.hypothesis(),
                                                std::nullopt, 1, "discarded",
                                                reason_from_error(fb.error()));
        }
    });

    auto writer = StageWriter::open(out_path, true,
                                    static_cast<std::int64_t>(resume->records.size()));
    if (!writer) return writer.error();
    for (std::size_t i = 0; i < pending.size(); ++i) {
        if (outputs[i].value("status", std::string()) == "discarded") {
            result.failures += 1;
            log_kv({{"stage", "feedback"},
                    {"record", std::to_string(pending[i].sentence_id())},
                    {"discard_reason", outputs[i].value("discard_reason", std::string())}});
        }
        if (auto s = writer->append(outputs[i]); !s) return s.error();
        ids.push_back(pending[i].sentence_id());
    }
    result.out = writer->records();
    result.complete = !truncated;
    if (!truncated) {
        if (auto s = writer->finish(); !s) return s.error();
        if (auto s = mark_stage(Stage::FeedbackDone, ids); !s) return s.error();
    }
    if (auto s = write_summary(result); !s) return s.error();
    return result;
}

// --- select ---------------------------------------------------------------------

Result<StageResult> Runner::select_stage() {
    auto cp = sync_checkpoint();
    if (!cp) return cp.error();
    StageResult result;
    result.stage = "select";
    auto upstream = require_complete(stage_path("feedback.jsonl"), "feedback");
    if (!upstream) return upstream.error();
    result.in = static_cast<std::int64_t>(upstream->records.size());

    std::string out_path = stage_path("select.jsonl");
    if (fs::exists(out_path)) {
        auto existing = read_stage_file(out_path);
        if (existing && existing->complete) {
            result.out = static_cast<std::int64_t>(existing->records.size());
            result.extra = Json{{"skipped", true}};
            if (auto s = write_summary(result); !s) return s.error();
            return result;
        }
    }
    auto writer = StageWriter::open(out_path, false);
    if (!writer) return writer.error();
    std::vector<core::RecordId> ids;
    for (const auto& j : upstream->records) {
        if (j.value("status", std::string()) != "kept") continue;
        if (j.value("verdict", std::string()) != core::verdict_name(core::Verdict::HasErrors))
            continue;
        if (auto s = writer->append(j); !s) return s.error();
        auto id = id_field(j, "sentence_id");
        if (id) ids.push_back(*id);
    }
    if (auto s = writer->finish(); !s) return s.error();
    result.out = writer->records();
    if (auto s = mark_stage(Stage::Selected, ids); !s) return s.error();
    if (auto s = write_summary(result); !s) return s.error();
    return result;
}

// --- extend ---------------------------------------------------------------------

Result<StageResult> Runner::extend_stage() {
    auto cp = sync_checkpoint();
    if (!cp) return cp.error();
    StageResult result;
    result.stage = "extend";
    auto selected_file = require_complete(stage_path("select.jsonl"), "select");
    if (!selected_file) return selected_file.error();
    result.in = static_cast<std::int64_t>(selected_file->records.size());

    std::string out_path = stage_path("extend.jsonl");
    auto resume = prepare_stage_resume(out_path, origin_record_id);
    if (!resume) return resume.error();
    if (resume->complete) {
        result.out = static_cast<std::int64_t>(resume->records.size());
        result.extra = Json{{"skipped", true}};
        if (auto s = write_summary(result); !s) return s.error();
        return result;
    }

    if (config_.mode == dataset::DatasetMode::PE) {
        auto writer = StageWriter::open(out_path, false);
        if (!writer) return writer.error();
        if (auto s = writer->finish(); !s) return s.error();
        result.extra = Json{{"mode", dataset::dataset_mode_name(config_.mode)},
                            {"synthesis", "disabled"}};
        if (auto s = mark_stage(Stage::Extended, {}); !s) return s.error();
        if (auto s = write_summary(result); !s) return s.error();
        return result;
    }

    auto translated = require_complete(stage_path("translate.jsonl"), "translate");
    if (!translated) return translated.error();
    auto sources = translate_map(translated->records);
    if (!sources) return sources.error();

    std::vector<std::pair<core::TranslationRecord, core::Feedback>> selected;
    for (const auto& j : selected_file->records) {
        auto pair = decode_selected(j, *sources);
        if (!pair) return pair.error();
        selected.push_back(std::move(*pair));
    }

    std::unordered_set<core::RecordId> done;
    std::vector<core::RecordId> ids;
    for (const auto& j : resume->records) {
        auto id = origin_record_id(j);
        if (!id) return id.error();
        if (done.insert(*id).second) ids.push_back(*id);
    }
    std::vector<std::pair<core::TranslationRecord, core::Feedback>> pending;
    for (auto& pair : selected)
        if (!done.count(pair.first.sentence_id())) pending.push_back(std::move(pair));

    auto spec = config_.backend("teacher");
    if (!spec) return spec.error();
    auto analysis = prompts::builtin_template("sentence_analysis");
    if (!analysis) return analysis.error();
    auto synthesis = prompts::builtin_template("parallel_synthesis");
    if (!synthesis) return synthesis.error();
    auto analogy = prompts::builtin_template("word_analogy");
    if (!analogy) return analogy.error();

    bool truncated = false;
    if (config_.limit > 0 && static_cast<std::int64_t>(pending.size()) > config_.limit) {
        pending.erase(pending.begin() + static_cast<std::ptrdiff_t>(config_.limit),
                      pending.end());
        truncated = true;
    }

    if (config_.dry_run) {
        auto writer = StageWriter::open(stage_path("extend.prompts.jsonl"), false);
        if (!writer) return writer.error();
        for (const auto& [record, fb] : pending) {
            auto prompt = prompts::render_prompt(
                *analysis, {{"srclang", config_.source_lang},
                            {"tgtlang", config_.target_lang},
                            {"srctext", record.source_text()}});
            if (!prompt) continue;
            auto s = writer->append(Json{{"sentence_id", record.sentence_id()},
                                         {"prompt", *prompt}});
            if (!s) return s.error();
        }
        if (auto s = writer->finish(); !s) return s.error();
        result.extra = Json{{"dry_run", true},
                            {"prompts", stage_path("extend.prompts.jsonl")}};
        if (auto s = write_summary(result); !s) return s.error();
        return result;
    }

    extension::ExtensionContext base{gw_.get(), *spec,     config_.source_lang,
                                     config_.target_lang, *analysis, *synthesis,
                                     *analogy};
    bool analogies = config_.mode == dataset::DatasetMode::PE_PDS_WA;
    std::vector<std::vector<Json>> outputs(pending.size());
    std::vector<extension::ExtensionMetrics> metrics(pending.size());
    parallel_for(pending.size(), config_.parallelism, [&](std::size_t i) {
        extension::ExtensionContext ctx = base;
        auto pairs = extension::extend_errors(ctx, {pending[i]}, config_.extension, analogies,
                                              &metrics[i]);
        for (const auto& pair : pairs) outputs[i].push_back(core::encode(pair));
    });

    auto writer = StageWriter::open(out_path, true,
                                    static_cast<std::int64_t>(resume->records.size()));
    if (!writer) return writer.error();
    extension::ExtensionMetrics folded;
    for (std::size_t i = 0; i < pending.size(); ++i) {
        for (const auto& record : outputs[i])
            if (auto s = writer->append(record); !s) return s.error();
        ids.push_back(pending[i].first.sentence_id());
        folded.generation_requests += metrics[i].generation_requests;
        folded.profile_requests += metrics[i].profile_requests;
        folded.analogy_requests += metrics[i].analogy_requests;
        folded.invalid_candidates += metrics[i].invalid_candidates;
        folded.shortfall += metrics[i].shortfall;
        folded.records_failed += metrics[i].records_failed;
    }
    result.out = writer->records();
    result.failures = folded.records_failed;
    result.shortfall = folded.shortfall;
    result.extra = Json{{"mode", dataset::dataset_mode_name(config_.mode)},
                        {"generation_requests", folded.generation_requests},
                        {"profile_requests", folded.profile_requests},
                        {"analogy_requests", folded.analogy_requests},
                        {"invalid_candidates", folded.invalid_candidates}};
    result.complete = !truncated;
    if (!truncated) {
        if (auto s = writer->finish(); !s) return s.error();
        if (auto s = mark_stage(Stage::Extended, ids); !s) return s.error();
    }
    if (auto s = write_summary(result); !s) return s.error();
    return result;
}

// --- build-dataset ---------------------------------------------------------------

Result<std::pair<StageResult, dataset::DatasetManifest>> Runner::build_dataset_stage() {
    auto cp = sync_checkpoint();
    if (!cp) return cp.error();
    StageResult result;
    result.stage = "build-dataset";
    std::string out_path = stage_path("dataset.jsonl");
    std::string manifest_path = stage_path("manifest.json");
    if (fs::exists(out_path) && fs::exists(manifest_path)) {
        auto existing = read_stage_file(out_path);
        if (existing && existing->complete) {
            auto manifest = dataset::read_manifest(manifest_path);
            if (!manifest) return manifest.error();
            result.in = result.out = manifest->total;
            result.extra = Json{{"skipped", true}};
            if (auto s = write_summary(result); !s) return s.error();
            return std::make_pair(std::move(result), std::move(*manifest));
        }
    }

    auto selected_file = require_complete(stage_path("select.jsonl"), "select");
    if (!selected_file) return selected_file.error();
    auto extended_file = require_complete(stage_path("extend.jsonl"), "extend");
    if (!extended_file) return extended_file.error();
    auto translated = require_complete(stage_path("translate.jsonl"), "translate");
    if (!translated) return translated.error();
    auto sources = translate_map(translated->records);
    if (!sources) return sources.error();

    std::vector<std::pair<core::TranslationRecord, core::Feedback>> post_edits;
    for (const auto& j : selected_file->records) {
        auto pair = decode_selected(j, *sources);
        if (!pair) return pair.error();
        post_edits.push_back(std::move(*pair));
    }
    std::vector<core::SyntheticPair> synthetic;
    for (const auto& j : extended_file->records) {
        auto pair = core::decode_synthetic_pair(j);
        if (!pair) return pair.error();
        synthetic.push_back(std::move(*pair));
    }
    result.in = static_cast<std::int64_t>(post_edits.size() + synthetic.size());

    auto [examples, manifest] =
        dataset::build_dataset(post_edits, synthetic, config_.mode, config_.seed,
                               {"select.jsonl", "extend.jsonl"});
    auto writer = StageWriter::open(out_path, false);
    if (!writer) return writer.error();
    for (const auto& example : examples)
        if (auto s = writer->append(core::encode(example)); !s) return s.error();
    if (auto s = writer->finish(); !s) return s.error();
    if (auto s = dataset::write_corpus_tsv(stage_path("dataset.tsv"), examples); !s)
        return s.error();
    if (auto s = dataset::write_manifest(manifest_path, manifest); !s) return s.error();

    result.out = manifest.total;
    Json counts = Json::object();
    for (const auto& [origin, count] : manifest.counts_by_origin) counts[origin] = count;
    result.extra = Json{{"mode", dataset::dataset_mode_name(config_.mode)},
                        {"counts_by_origin", counts},
                        {"pre_dedup_total", manifest.pre_dedup_total}};
    std::vector<core::RecordId> ids;
    for (const auto& [record, fb] : post_edits) ids.push_back(record.sentence_id());
    if (auto s = mark_stage(Stage::DatasetBuilt, ids); !s) return s.error();
    if (auto s = write_summary(result); !s) return s.error();
    return std::make_pair(std::move(result), std::move(manifest));
}

// --- full pipeline ----------------------------------------------------------------

Result<std::optional<dataset::DatasetManifest>> Runner::run_pipeline() {
    if (auto s = config_.validate(); !s) return s.error();
    auto lock = WorkdirLock::acquire(config_.workdir);
    if (!lock) return lock.error();

    auto interrupted = [](const char* stage) {
        return make_error(ErrorCode::StageFailure,
                          std::string("record limit reached in stage ") + stage);
    };
    auto dry_stop = [](const StageResult& r) {
        return r.extra.is_object() && r.extra.value("dry_run", false);
    };

    auto sample = sample_stage();
    if (!sample) return sample.error();
    auto translate = translate_stage();
    if (!translate) return translate.error();
    if (dry_stop(*translate)) {
        log_kv({{"event", "dry_run_stop"}, {"after", "translate"}});
        return std::optional<dataset::DatasetManifest>{};
    }
    if (!translate->complete) return interrupted("translate");
    auto feedback_result = feedback_stage();
    if (!feedback_result) return feedback_result.error();
    if (dry_stop(*feedback_result)) {
        log_kv({{"event", "dry_run_stop"}, {"after", "feedback"}});
        return std::optional<dataset::DatasetManifest>{};
    }
    if (!feedback_result->complete) return interrupted("feedback");
    auto select = select_stage();
    if (!select) return select.error();
    auto extend = extend_stage();
    if (!extend) return extend.error();
    if (dry_stop(*extend)) {
        log_kv({{"event", "dry_run_stop"}, {"after", "extend"}});
        return std::optional<dataset::DatasetManifest>{};
    }
    if (!extend->complete) return interrupted("extend");
    auto built = build_dataset_stage();
    if (!built) return built.error();
    log_kv({{"event", "pipeline_done"},
            {"total", std::to_string(built->second.total)},
            {"manifest", stage_path("manifest.json")}});
    return std::optional<dataset::DatasetManifest>{std::move(built->second)};
}

// --- splits ---------------------------------------------------------------------

Result<StageResult> Runner::splits(const SplitsArgs& args) {
    StageResult result;
    result.stage = "splits";
    std::error_code ec;
    fs::create_directories(config_.workdir, ec);
    if (args.words_tsv.empty() || !fs::exists(args.words_tsv))
        return make_error(ErrorCode::MissingInput, "missing word list " + args.words_tsv);
    auto words = dataset::read_word_tsv(args.words_tsv);
    if (!words) return words.error();
    result.in = static_cast<std::int64_t>(words->size());
    auto split = dataset::split_wordset(*words, static_cast<std::size_t>(args.seen_n),
                                        static_cast<std::size_t>(args.unseen_n),
                                        static_cast<std::uint64_t>(config_.seed));
    if (!split) return split.error();
    if (auto s = dataset::write_word_tsv(stage_path("seen.tsv"), split->seen); !s)
        return s.error();
    if (auto s = dataset::write_word_tsv(stage_path("unseen.tsv"), split->unseen); !s)
        return s.error();
    result.out = static_cast<std::int64_t>(split->seen.size() + split->unseen.size());
    result.extra = Json{{"seen", split->seen.size()},
                        {"unseen", split->unseen.size()},
                        {"seen_file", stage_path("seen.tsv")},
                        {"unseen_file", stage_path("unseen.tsv")}};
    if (auto s = write_summary(result); !s) return s.error();
    return result;
}

// --- forge-sets --------------------------------------------------------------------

Result<StageResult> Runner::forge_sets() {
    StageResult result;
    result.stage = "forge-sets";
    std::string seen_path = stage_path("seen.tsv");
    std::string unseen_path = stage_path("unseen.tsv");
    if (!fs::exists(seen_path) || !fs::exists(unseen_path))
        return make_error(ErrorCode::MissingInput,
                          "missing " + seen_path + " / " + unseen_path +
                              " (run the splits stage first)");
    auto seen = dataset::read_word_tsv(seen_path);
    if (!seen) return seen.error();
    auto unseen = dataset::read_word_tsv(unseen_path);
    if (!unseen) return unseen.error();
    result.in = static_cast<std::int64_t>(seen->size() + unseen->size());

    auto spec = config_.backend("teacher");
    if (!spec) return spec.error();
    auto mono_tmpl = prompts::builtin_template("forge_mono");
    if (!mono_tmpl) return mono_tmpl.error();
    auto pair_tmpl = prompts::builtin_template("forge_pair");
    if (!pair_tmpl) return pair_tmpl.error();

    if (config_.dry_run) {
        auto writer = StageWriter::open(stage_path("forge-sets.prompts.jsonl"), false);
        if (!writer) return writer.error();
        auto emit = [&](const core::WordPair& word, bool with_mono) -> Status {
            if (with_mono) {
                auto prompt = prompts::render_prompt(
                    *mono_tmpl, {{"srclang", config_.source_lang},
                                 {"errorword", word.source_phrase()}});
                if (prompt) {
                    auto s = writer->append(Json{{"word", word.source_phrase()},
                                                 {"kind", "monolingual"},
                                                 {"prompt", *prompt}});
                    if (!s) return s;
                }
            }
            auto prompt = prompts::render_prompt(
                *pair_tmpl,
                {{"srclang", config_.source_lang},
                 {"tgtlang", config_.target_lang},
                 {"wordpair", word.source_phrase() + " -> " + word.target_phrase()}});
            if (prompt) {
                auto s = writer->append(Json{{"word", word.source_phrase()},
                                             {"kind", "pair"},
                                             {"prompt", *prompt}});
                if (!s) return s;
            }
            return ok_status();
        };
        for (const auto& word : *seen)
            if (auto s = emit(word, true); !s) return s.error();
        for (const auto& word : *unseen)
            if (auto s = emit(word, false); !s) return s.error();
        if (auto s = writer->finish(); !s) return s.error();
        result.extra = Json{{"dry_run", true},
                            {"prompts", stage_path("forge-sets.prompts.jsonl")}};
        if (auto s = write_summary(result); !s) return s.error();
        return result;
    }

    dataset::ForgeContext fctx{gw_.get(),
                               *spec,
                               config_.source_lang,
                               config_.target_lang,
                               *mono_tmpl,
                               *pair_tmpl,
                               0.7,
                               256,
                               config_.extension.max_regen_attempts,
                               config_.parallelism};
    dataset::WordSetSplit split{std::move(*seen), std::move(*unseen), config_.seed};
    auto forged = dataset::forge_phenomenon_sets(fctx, split);

    std::string mono_body;
    for (const auto& sentence : forged.monolingual) {
        mono_body += plain_line(sentence.text());
        mono_body += '\n';
    }
    if (auto s = write_file_atomic(stage_path("forge_monolingual.txt"), mono_body); !s)
        return s.error();
    if (auto s = write_pair_tsv(stage_path("test_unseen_context.tsv"), forged.unseen_context);
        !s)
        return s.error();
    if (auto s = write_pair_tsv(stage_path("test_unseen_word.tsv"), forged.unseen_word); !s)
        return s.error();

    result.out = static_cast<std::int64_t>(forged.monolingual.size() +
                                           forged.unseen_context.size() +
                                           forged.unseen_word.size());
    result.shortfall =
        forged.mono_shortfall + forged.context_shortfall + forged.word_shortfall;
    result.extra = Json{{"monolingual", forged.monolingual.size()},
                        {"unseen_context", forged.unseen_context.size()},
                        {"unseen_word", forged.unseen_word.size()},
                        {"requests", forged.requests},
                        {"invalid_candidates", forged.invalid_candidates},
                        {"mono_shortfall", forged.mono_shortfall},
                        {"context_shortfall", forged.context_shortfall},
                        {"word_shortfall", forged.word_shortfall}};
    if (auto s = write_summary(result); !s) return s.error();
    return result;
}

// --- evaluate ----------------------------------------------------------------------

Result<StageResult> Runner::evaluate(const EvaluateArgs& args) {
    StageResult result;
    result.stage = "evaluate";
    std::error_code ec;
    fs::create_directories(config_.workdir, ec);
    bool wants_bleu = !args.bleu_hyp.empty() || !args.bleu_ref.empty();
    if (!wants_bleu && args.term_items.empty())
        return make_error(ErrorCode::InvalidArgument,
                          "evaluate needs --bleu-hyp/--bleu-ref and/or --term-items");

    if (wants_bleu) {
        if (args.bleu_hyp.empty() || args.bleu_ref.empty())
            return make_error(ErrorCode::InvalidArgument,
                              "--bleu-hyp and --bleu-ref go together");
        if (!fs::exists(args.bleu_hyp))
            return make_error(ErrorCode::MissingInput, "missing " + args.bleu_hyp);
        if (!fs::exists(args.bleu_ref))
            return make_error(ErrorCode::MissingInput, "missing " + args.bleu_ref);
        auto hyp = read_lines(args.bleu_hyp);
        if (!hyp) return hyp.error();
        auto ref = read_lines(args.bleu_ref);
        if (!ref) return ref.error();
        auto score = evaluation::corpus_bleu(*hyp, *ref);
        if (!score) return score.error();
        auto s = evaluation::write_report(
            stage_path("bleu.report.json"), "bleu",
            Json{{"tokenizer", "intl"}, {"max_n", 4}},
            Json{{"score", *score}, {"sentences", hyp->size()}}, {});
        if (!s) return s.error();
        result.in += static_cast<std::int64_t>(hyp->size());
        result.out += 1;
        result.extra["bleu"] = *score;
    }

    if (!args.term_items.empty()) {
        if (!fs::exists(args.term_items))
            return make_error(ErrorCode::MissingInput, "missing " + args.term_items);
        auto lines = read_lines(args.term_items);
        if (!lines) return lines.error();
        std::vector<std::pair<core::WordPair, std::string>> items;
        int line_no = 0;
        for (const auto& line : *lines) {
            ++line_no;
            if (text::trim(line).empty()) continue;
            auto first = line.find('\t');
            auto second = first == std::string::npos ? std::string::npos
                                                     : line.find('\t', first + 1);
            if (second == std::string::npos)
                return make_error(ErrorCode::ParseFailure,
                                  args.term_items + ":" + std::to_string(line_no) +
                                      ": expected three columns");
            auto word = core::WordPair::create(line.substr(0, first),
                                               line.substr(first + 1, second - first - 1));
            if (!word)
                return make_error(ErrorCode::ParseFailure,
                                  args.term_items + ":" + std::to_string(line_no) + ": " +
                                      word.error().message);
            items.emplace_back(std::move(*word), line.substr(second + 1));
        }
        auto report = evaluation::term_accuracy(items);
        std::vector<Json> misses;
        for (const auto& [word, hypothesis] : report.misses)
            misses.push_back(Json{{"source_phrase", word.source_phrase()},
                                  {"target_phrase", word.target_phrase()},
                                  {"hypothesis", hypothesis}});
        Json aggregate{{"total", report.total}, {"hits", report.hits}};
        if (report.accuracy)
            aggregate["accuracy"] = *report.accuracy;
        else
            aggregate["accuracy"] = nullptr;
        auto s = evaluation::write_report(stage_path("term_accuracy.report.json"),
                                          "term_accuracy", Json::object(), aggregate, misses);
        if (!s) return s.error();
        result.in += report.total;
        result.out += 1;
        if (report.accuracy) result.extra["term_accuracy"] = *report.accuracy;
    }

    if (fs::exists(checkpoint_path(config_.workdir))) {
        auto cp = sync_checkpoint();
        if (cp) {
            std::vector<core::RecordId> ids(cp->completed_record_ids.begin(),
                                            cp->completed_record_ids.end());
            if (auto s = mark_stage(Stage::Evaluated, ids); !s) return s.error();
        }
    }
    if (auto s = write_summary(result); !s) return s.error();
    return result;
}

// --- judge ------------------------------------------------------------------------

Result<StageResult> Runner::judge(const JudgeArgs& args) {
    StageResult result;
    result.stage = "judge";
    std::error_code ec;
    fs::create_directories(config_.workdir, ec);
    if (args.items_path.empty() || !fs::exists(args.items_path))
        return make_error(ErrorCode::MissingInput, "missing judge items " + args.items_path);
    auto items = read_jsonl_strict(args.items_path);
    if (!items) return items.error();
    result.in = static_cast<std::int64_t>(items->size());

    auto spec = config_.backend("judge");
    if (!spec) return spec.error();
    auto idiom_tmpl = prompts::builtin_template("idiom_judge");
    if (!idiom_tmpl) return idiom_tmpl.error();
    auto comparison_tmpl = prompts::builtin_template("comparison");
    if (!comparison_tmpl) return comparison_tmpl.error();

    struct Item {
        std::string idiom, definition, source, hypothesis;
    };
    std::vector<Item> parsed;
    for (std::size_t i = 0; i < items->size(); ++i) {
        const Json& j = (*items)[i];
        Item item{j.value("idiom", std::string()), j.value("definition", std::string()),
                  j.value("source", std::string()), j.value("hypothesis", std::string())};
        if (item.idiom.empty() || item.definition.empty() || item.source.empty() ||
            item.hypothesis.empty())
            return make_error(ErrorCode::ParseFailure,
                              args.items_path + ": item " + std::to_string(i + 1) +
                                  " needs idiom, definition, source, hypothesis");
        parsed.push_back(std::move(item));
    }

    evaluation::JudgeContext base{gw_.get(), *spec, *idiom_tmpl, *comparison_tmpl,
                                  0.0,       512,   config_.extension.max_regen_attempts};
    if (config_.dry_run) {
        auto writer = StageWriter::open(stage_path("judge.prompts.jsonl"), false);
        if (!writer) return writer.error();
        for (std::size_t i = 0; i < parsed.size(); ++i) {
            auto prompt = prompts::render_prompt(*idiom_tmpl,
                                                 {{"errorword", parsed[i].idiom},
                                                  {"definition", parsed[i].definition},
                                                  {"srctext", parsed[i].source},
                                                  {"tgttext", parsed[i].hypothesis}});
            if (!prompt) continue;
            auto s = writer->append(Json{{"index", i}, {"prompt", *prompt}});
            if (!s) return s.error();
        }
        if (auto s = writer->finish(); !s) return s.error();
        result.extra = Json{{"dry_run", true},
                            {"prompts", stage_path("judge.prompts.jsonl")}};
        if (auto s = write_summary(result); !s) return s.error();
        return result;
    }

    std::vector<Result<evaluation::JudgeVerdict>> verdicts(
        parsed.size(), make_error(ErrorCode::ParseFailure, "not judged"));
    parallel_for(parsed.size(), config_.parallelism, [&](std::size_t i) {
        evaluation::JudgeContext ctx = base;
        verdicts[i] = evaluation::judge_idiom(ctx, parsed[i].idiom, parsed[i].definition,
                                              parsed[i].source, parsed[i].hypothesis);
    });

    std::vector<Json> item_reports;
    std::vector<evaluation::JudgeVerdict> scored;
    for (std::size_t i = 0; i < parsed.size(); ++i) {
        Json item{{"index", i}, {"idiom", parsed[i].idiom}};
        if (verdicts[i]) {
            item["score"] = *verdicts[i]->score;
            item["rationale"] = verdicts[i]->rationale;
            scored.push_back(*verdicts[i]);
        } else {
            item["error"] = verdicts[i].error().message;
            result.failures += 1;
        }
        item_reports.push_back(std::move(item));
    }
    result.out = static_cast<std::int64_t>(scored.size());
    auto mean = evaluation::mean_score(scored);
    Json aggregate{{"scored", scored.size()}, {"failures", result.failures}};
    aggregate["mean_score"] = mean ? Json(*mean) : Json(nullptr);
    if (auto s = evaluation::write_report(stage_path("judge.report.json"), "idiom_judge",
                                          Json{{"model", spec->model}}, aggregate,
                                          item_reports);
        !s)
        return s.error();
    if (mean) result.extra["mean_score"] = *mean;
    if (auto s = write_summary(result); !s) return s.error();
    return result;
}

// --- compare -----------------------------------------------------------------------

Result<StageResult> Runner::compare(const CompareArgs& args) {
    StageResult result;
    result.stage = "compare";
    std::error_code ec;
    fs::create_directories(config_.workdir, ec);
    if (args.items_path.empty() || !fs::exists(args.items_path))
        return make_error(ErrorCode::MissingInput,
                          "missing comparison items " + args.items_path);
    auto items = read_jsonl_strict(args.items_path);
    if (!items) return items.error();
    result.in = static_cast<std::int64_t>(items->size());

    auto spec = config_.backend("judge");
    if (!spec) return spec.error();
    auto idiom_tmpl = prompts::builtin_template("idiom_judge");
    if (!idiom_tmpl) return idiom_tmpl.error();
    auto comparison_tmpl = prompts::builtin_template("comparison");
    if (!comparison_tmpl) return comparison_tmpl.error();

    struct Item {
        std::string source, word, translation_a, translation_b;
    };
    std::vector<Item> parsed;
    for (std::size_t i = 0; i < items->size(); ++i) {
        const Json& j = (*items)[i];
        Item item{j.value("source", std::string()), j.value("word", std::string()),
                  j.value("translation_a", std::string()),
                  j.value("translation_b", std::string())};
        if (item.source.empty() || item.word.empty() || item.translation_a.empty() ||
            item.translation_b.empty())
            return make_error(ErrorCode::ParseFailure,
                              args.items_path + ": item " + std::to_string(i + 1) +
                                  " needs source, word, translation_a, translation_b");
        parsed.push_back(std::move(item));
    }

    evaluation::JudgeContext base{gw_.get(), *spec, *idiom_tmpl, *comparison_tmpl,
                                  0.0,       512,   config_.extension.max_regen_attempts};
    if (config_.dry_run) {
        auto writer = StageWriter::open(stage_path("compare.prompts.jsonl"), false);
        if (!writer) return writer.error();
        for (std::size_t i = 0; i < parsed.size(); ++i) {
            auto prompt = prompts::render_prompt(*comparison_tmpl,
                                                 {{"srctext", parsed[i].source},
                                                  {"errorword", parsed[i].word},
                                                  {"translation_a", parsed[i].translation_a},
                                                  {"translation_b", parsed[i].translation_b}});
            if (!prompt) continue;
            auto s = writer->append(Json{{"index", i}, {"prompt", *prompt}});
            if (!s) return s.error();
        }
        if (auto s = writer->finish(); !s) return s.error();
        result.extra = Json{{"dry_run", true},
                            {"prompts", stage_path("compare.prompts.jsonl")}};
        if (auto s = write_summary(result); !s) return s.error();
        return result;
    }

    std::vector<Result<evaluation::JudgeVerdict>> verdicts(
        parsed.size(), make_error(ErrorCode::ParseFailure, "not judged"));
    parallel_for(parsed.size(), config_.parallelism, [&](std::size_t i) {
        evaluation::JudgeContext ctx = base;
        verdicts[i] = evaluation::compare_translations(ctx, parsed[i].source, parsed[i].word,
                                                       parsed[i].translation_a,
                                                       parsed[i].translation_b, args.debias);
    });

    std::map<std::string, std::int64_t> counts{{"A", 0}, {"B", 0}, {"C", 0}, {"D", 0}};
    std::vector<Json> item_reports;
    for (std::size_t i = 0; i < parsed.size(); ++i) {
        Json item{{"index", i}, {"word", parsed[i].word}};
        if (verdicts[i]) {
            const char* name = evaluation::choice_name(*verdicts[i]->choice);
            item["choice"] = name;
            item["rationale"] = verdicts[i]->rationale;
            counts[name] += 1;
        } else {
            item["error"] = verdicts[i].error().message;
            result.failures += 1;
        }
        item_reports.push_back(std::move(item));
    }
    std::int64_t judged = counts["A"] + counts["B"] + counts["C"] + counts["D"];
    result.out = judged;
    Json aggregate{{"judged", judged},
                   {"failures", result.failures},
                   {"counts", Json{{"A", counts["A"]},
                                   {"B", counts["B"]},
                                   {"C", counts["C"]},
                                   {"D", counts["D"]}}}};
    aggregate["b_or_c_fraction"] =
        judged > 0 ? Json(static_cast<double>(counts["B"] + counts["C"]) /
                          static_cast<double>(judged))
                   : Json(nullptr);
    if (auto s = evaluation::write_report(stage_path("compare.report.json"),
                                          "pairwise_comparison",
                                          Json{{"model", spec->model},
                                               {"debias", args.debias}},
                                          aggregate, item_reports);
        !s)
        return s.error();
    result.extra["counts"] = aggregate["counts"];
    if (judged > 0) result.extra["b_or_c_fraction"] = aggregate["b_or_c_fraction"];
    if (auto s = write_summary(result); !s) return s.error();
    return result;
}

// --- stage dispatch ------------------------------------------------------------------

Result<StageResult> Runner::run_stage(const std::string& name) {
    if (auto s = config_.validate(); !s) return s.error();
    auto lock = WorkdirLock::acquire(config_.workdir);
    if (!lock) return lock.error();
    if (name == "sample") return sample_stage();
    if (name == "translate") return translate_stage();
    if (name == "feedback") return feedback_stage();
    if (name == "select") return select_stage();
    if (name == "extend") return extend_stage();
    if (name == "build-dataset") {
        auto built = build_dataset_stage();
        if (!built) return built.error();
        return std::move(built->first);
    }
    if (name == "splits") return splits(splits_args_);
    if (name == "forge-sets") return forge_sets();
    if (name == "evaluate") return evaluate(evaluate_args_);
    if (name == "judge") return judge(judge_args_);
    if (name == "compare") return compare(compare_args_);
    return make_error(ErrorCode::InvalidArgument, "unknown stage: " + name);
}

}  // namespace mtpatcher::pipeline
