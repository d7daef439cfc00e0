#include "mtpatcher/dataset.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <random>
#include <sstream>
#include <thread>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "mtpatcher/extension.hpp"
#include "mtpatcher/text.hpp"

namespace mtpatcher::dataset {

const char* dataset_mode_name(DatasetMode mode) {
    switch (mode) {
        case DatasetMode::PE: return "PE";
        case DatasetMode::PE_PDS: return "PE_PDS";
        case DatasetMode::PE_PDS_WA: return "PE_PDS_WA";
    }
    return "unknown";
}

Result<DatasetMode> dataset_mode_from_name(std::string_view name) {
    std::string key;
    for (char c : name) {
        if (c == '-') c = '_';
        key += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    }
    if (key == "PE") return DatasetMode::PE;
    if (key == "PE_PDS") return DatasetMode::PE_PDS;
    if (key == "PE_PDS_WA") return DatasetMode::PE_PDS_WA;
    return make_error(ErrorCode::ConfigError,
                      "unknown dataset mode \"" + std::string(name) +
                          "\" (want PE, PE_PDS, or PE_PDS_WA)");
}

std::string manifest_timestamp() {
    std::time_t now = std::time(nullptr);
    if (const char* epoch = std::getenv("SOURCE_DATE_EPOCH"); epoch != nullptr && *epoch) {
        char* end = nullptr;
        long long fixed = std::strtoll(epoch, &end, 10);
        if (end != nullptr && *end == '\0') now = static_cast<std::time_t>(fixed);
    }
    std::tm utc{};
    gmtime_r(&now, &utc);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &utc);
    return buf;
}

Json DatasetManifest::to_json() const {
    Json counts = Json::object();
    for (const auto& [origin, count] : counts_by_origin) counts[origin] = count;
    return Json{{"counts_by_origin", counts},
                {"total", total},
                {"pre_dedup_total", pre_dedup_total},
                {"source_stage_ids", source_stage_ids},
                {"seed", seed},
                {"created_at", created_at}};
}

Result<DatasetManifest> DatasetManifest::from_json(const Json& j) {
    auto bad = [](const std::string& what) {
        return make_error(ErrorCode::ParseFailure, "manifest: " + what);
    };
    if (!j.is_object()) return bad("not a JSON object");
    DatasetManifest m;
    if (!j.contains("counts_by_origin") || !j["counts_by_origin"].is_object())
        return bad("missing counts_by_origin object");
    for (const auto& [origin, count] : j["counts_by_origin"].items()) {
        if (!count.is_number_integer()) return bad("non-integer count for " + origin);
        m.counts_by_origin[origin] = count.get<std::int64_t>();
    }
    if (!j.contains("total") || !j["total"].is_number_integer()) return bad("missing total");
    m.total = j["total"].get<std::int64_t>();
    m.pre_dedup_total = j.value("pre_dedup_total", m.total);
    if (j.contains("source_stage_ids")) {
        if (!j["source_stage_ids"].is_array()) return bad("source_stage_ids not an array");
        for (const auto& id : j["source_stage_ids"]) {
            if (!id.is_string()) return bad("non-string stage id");
            m.source_stage_ids.push_back(id.get<std::string>());
        }
    }
    m.seed = j.value("seed", std::int64_t{0});
    m.created_at = j.value("created_at", std::string());
    std::int64_t sum = 0;
    for (const auto& [origin, count] : m.counts_by_origin) sum += count;
    if (sum != m.total) return bad("total does not equal the origin counts");
    return m;
}

// ---------------------------------------------------------------------------
// Sampling and splitting
// ---------------------------------------------------------------------------

namespace {

// std::uniform_int_distribution is not bit-stable across standard library
// implementations, so sampling rolls its own rejection-based bound to keep
// outputs identical everywhere for a given seed.
std::uint64_t bounded_rand(std::mt19937_64& rng, std::uint64_t bound) {
    std::uint64_t threshold = (0 - bound) % bound;
    for (;;) {
        std::uint64_t r = rng();
        if (r >= threshold) return r % bound;
    }
}

// Partial Fisher-Yates: after the call the first n slots hold the sample.
void shuffle_prefix(std::vector<std::size_t>& idx, std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < n && i + 1 < idx.size(); ++i) {
        std::size_t j = i + static_cast<std::size_t>(bounded_rand(rng, idx.size() - i));
        std::swap(idx[i], idx[j]);
    }
}

std::vector<std::size_t> iota_indices(std::size_t n) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    return idx;
}

}  // namespace

Result<std::vector<core::SourceSentence>> sample_corpus(
    const std::vector<core::SourceSentence>& corpus, std::size_t n, std::uint64_t seed) {
    if (n > corpus.size())
        return make_error(ErrorCode::SampleTooLarge,
                          "sample of " + std::to_string(n) + " from a corpus of " +
                              std::to_string(corpus.size()));
    auto idx = iota_indices(corpus.size());
    shuffle_prefix(idx, n, seed);
    std::vector<core::SourceSentence> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(corpus[idx[i]]);
    std::sort(out.begin(), out.end(),
              [](const core::SourceSentence& a, const core::SourceSentence& b) {
                  return a.id() < b.id();
              });
    return out;
}

Result<WordSetSplit> split_wordset(const std::vector<core::WordPair>& words,
                                   std::size_t seen_n, std::size_t unseen_n,
                                   std::uint64_t seed) {
    if (seen_n + unseen_n > words.size())
        return make_error(ErrorCode::SplitTooLarge,
                          "split of " + std::to_string(seen_n) + "+" +
                              std::to_string(unseen_n) + " from " +
                              std::to_string(words.size()) + " words");
    std::unordered_set<std::string> phrases;
    for (const auto& w : words) {
        if (!phrases.insert(w.source_phrase()).second)
            return make_error(ErrorCode::DuplicateWord,
                              "duplicate source phrase \"" + w.source_phrase() + "\"");
    }
    auto idx = iota_indices(words.size());
    shuffle_prefix(idx, seen_n + unseen_n, seed);
    WordSetSplit split;
    split.seed = static_cast<std::int64_t>(seed);
    split.seen.reserve(seen_n);
    split.unseen.reserve(unseen_n);
    for (std::size_t i = 0; i < seen_n; ++i) split.seen.push_back(words[idx[i]]);
    for (std::size_t i = seen_n; i < seen_n + unseen_n; ++i)
        split.unseen.push_back(words[idx[i]]);
    return split;
}

// ---------------------------------------------------------------------------
// Corpus assembly
// ---------------------------------------------------------------------------

namespace {

std::string dedup_key(const std::string& source, const std::string& target) {
    return text::normalize(source) + '\x1f' + text::normalize(target);
}

std::string lineage_record(core::RecordId id) {
    return "record:" + std::to_string(id);
}

std::vector<std::string> lineage_for(const core::SyntheticPair& pair) {
    const auto& origin = pair.origin();
    std::vector<std::string> lineage{lineage_record(origin.record_id),
                                     "span:" + std::to_string(origin.span_index)};
    if (origin.analog)
        lineage.push_back(std::string("analog:") + core::aspect_name(origin.analog->aspect) +
                          ":" + origin.analog->word);
    lineage.push_back("candidate:" + std::to_string(origin.candidate_index));
    return lineage;
}

}  // namespace

std::pair<std::vector<core::FinetuneExample>, DatasetManifest> build_dataset(
    const std::vector<std::pair<core::TranslationRecord, core::Feedback>>& post_edits,
    const std::vector<core::SyntheticPair>& synthetic, DatasetMode mode,
    std::int64_t seed, std::vector<std::string> source_stage_ids) {
    std::vector<core::FinetuneExample> assembled;
    auto add = [&](Result<core::FinetuneExample> example) {
        if (example) assembled.push_back(std::move(*example));
    };

    for (const auto& [record, feedback] : post_edits) {
        if (feedback.verdict() != core::Verdict::HasErrors) continue;
        add(core::FinetuneExample::create(record.source_text(), feedback.post_edit(),
                                          core::ExampleOrigin::PostEdit,
                                          {lineage_record(record.sentence_id())}));
    }
    if (mode != DatasetMode::PE) {
        for (const auto& pair : synthetic) {
            if (pair.origin().analog) continue;
            add(core::FinetuneExample::create(pair.source(), pair.target(),
                                              core::ExampleOrigin::Synthesized,
                                              lineage_for(pair)));
        }
    }
    if (mode == DatasetMode::PE_PDS_WA) {
        for (const auto& pair : synthetic) {
            if (!pair.origin().analog) continue;
            add(core::FinetuneExample::create(pair.source(), pair.target(),
                                              core::ExampleOrigin::AnalogyContext,
                                              lineage_for(pair)));
        }
    }

    DatasetManifest manifest;
    manifest.pre_dedup_total = static_cast<std::int64_t>(assembled.size());
    manifest.counts_by_origin[core::origin_name(core::ExampleOrigin::PostEdit)] = 0;
    if (mode != DatasetMode::PE)
        manifest.counts_by_origin[core::origin_name(core::ExampleOrigin::Synthesized)] = 0;
    if (mode == DatasetMode::PE_PDS_WA)
        manifest.counts_by_origin[core::origin_name(core::ExampleOrigin::AnalogyContext)] = 0;

    std::vector<core::FinetuneExample> kept;
    kept.reserve(assembled.size());
    std::unordered_set<std::string> seen_pairs;
    for (auto& example : assembled) {
        if (!seen_pairs.insert(dedup_key(example.source(), example.target())).second) continue;
        manifest.counts_by_origin[core::origin_name(example.origin())] += 1;
        manifest.total += 1;
        kept.push_back(std::move(example));
    }
    manifest.seed = seed;
    manifest.source_stage_ids = std::move(source_stage_ids);
    manifest.created_at = manifest_timestamp();
    return {std::move(kept), std::move(manifest)};
}

// ---------------------------------------------------------------------------
// Phenomenon-set forging
// ---------------------------------------------------------------------------

namespace {

struct ForgeSlot {
    std::optional<std::string> mono;  // seen words only
    std::optional<std::pair<std::string, std::string>> pair;
};

Result<std::string> forge_completion(ForgeContext& ctx, const std::string& prompt) {
    auto request = gateway::ChatRequest::create(ctx.backend.model, {{"user", prompt}},
                                                ctx.temperature, ctx.max_tokens);
    if (!request) return request.error();
    auto response = ctx.gw->complete(ctx.backend, *request);
    if (!response) return response.error();
    return response->content;
}

}  // namespace

ForgeOutput forge_phenomenon_sets(ForgeContext& ctx, const WordSetSplit& split) {
    ForgeOutput out;
    const std::size_t seen_n = split.seen.size();
    const std::size_t total = seen_n + split.unseen.size();
    std::vector<ForgeSlot> slots(total);
    std::atomic<std::size_t> next{0};
    std::atomic<std::int64_t> requests{0};
    std::atomic<std::int64_t> invalid{0};

    auto forge_word = [&](std::size_t slot_index) {
        const bool is_seen = slot_index < seen_n;
        const core::WordPair& word =
            is_seen ? split.seen[slot_index] : split.unseen[slot_index - seen_n];
        ForgeSlot& slot = slots[slot_index];

        if (is_seen) {
            auto prompt = prompts::render_prompt(ctx.mono_tmpl,
                                                 {{"srclang", ctx.source_lang},
                                                  {"errorword", word.source_phrase()}});
            if (prompt) {
                for (int attempt = 0; attempt <= ctx.max_regen_attempts; ++attempt) {
                    requests.fetch_add(1);
                    auto content =
                        forge_completion(ctx, extension::with_markers(*prompt, 0, attempt));
                    if (!content) continue;
                    auto sentence = extension::parse_source_line(*content);
                    if (!sentence ||
                        !text::contains_normalized(*sentence, word.source_phrase())) {
                        invalid.fetch_add(1);
                        continue;
                    }
                    slot.mono = std::move(*sentence);
                    break;
                }
            }
        }

        auto prompt = prompts::render_prompt(
            ctx.pair_tmpl, {{"srclang", ctx.source_lang},
                            {"tgtlang", ctx.target_lang},
                            {"wordpair",
                             word.source_phrase() + " -> " + word.target_phrase()}});
        if (!prompt) return;
        for (int attempt = 0; attempt <= ctx.max_regen_attempts; ++attempt) {
            requests.fetch_add(1);
            auto content = forge_completion(ctx, extension::with_markers(*prompt, 0, attempt));
            if (!content) continue;
            auto pair = extension::parse_pair_lines(*content);
            if (!pair || !text::contains_normalized(pair->first, word.source_phrase()) ||
                !text::contains_folded(pair->second, word.target_phrase())) {
                invalid.fetch_add(1);
                continue;
            }
            // The monolingual sentence and the test pair for one word must
            // not be the same sentence, or the test would score training data.
            if (slot.mono && text::normalize(*slot.mono) == text::normalize(pair->first)) {
                invalid.fetch_add(1);
                continue;
            }
            slot.pair = std::move(*pair);
            break;
        }
    };

    std::size_t workers = std::max(1, ctx.parallelism);
    workers = std::min(workers, total == 0 ? std::size_t{1} : total);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (;;) {
                std::size_t i = next.fetch_add(1);
                if (i >= total) return;
                forge_word(i);
            }
        });
    }
    for (auto& t : pool) t.join();

    for (std::size_t i = 0; i < total; ++i) {
        const bool is_seen = i < seen_n;
        ForgeSlot& slot = slots[i];
        if (is_seen) {
            if (slot.mono) {
                auto sentence = core::SourceSentence::create(
                    static_cast<core::RecordId>(i + 1), *slot.mono, ctx.source_lang);
                if (sentence)
                    out.monolingual.push_back(std::move(*sentence));
                else
                    out.mono_shortfall += 1;
            } else {
                out.mono_shortfall += 1;
            }
            if (slot.pair)
                out.unseen_context.push_back(std::move(*slot.pair));
            else
                out.context_shortfall += 1;
        } else {
            if (slot.pair)
                out.unseen_word.push_back(std::move(*slot.pair));
            else
                out.word_shortfall += 1;
        }
    }
    out.requests = requests.load();
    out.invalid_candidates = invalid.load();
    return out;
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

namespace {

std::string sanitize_column(std::string_view s) {
    std::string out(s);
    for (char& c : out)
        if (c == '\t' || c == '\n' || c == '\r') c = ' ';
    return out;
}

Status write_text_file(const std::string& path, const std::string& body) {
    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    if (!file) return make_error(ErrorCode::IoError, "cannot open " + path + " for writing");
    file << body;
    file.flush();
    if (!file) return make_error(ErrorCode::IoError, "short write to " + path);
    return ok_status();
}

}  // namespace

Result<std::vector<core::WordPair>> read_word_tsv(const std::string& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) return make_error(ErrorCode::IoError, "cannot open " + path);
    std::vector<core::WordPair> words;
    std::string line;
    int line_no = 0;
    while (std::getline(file, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (text::trim(line).empty()) continue;
        auto tab = line.find('\t');
        if (tab == std::string::npos)
            return make_error(ErrorCode::ParseFailure,
                              path + ":" + std::to_string(line_no) + ": expected two columns");
        auto word = core::WordPair::create(line.substr(0, tab), line.substr(tab + 1));
        if (!word)
            return make_error(ErrorCode::ParseFailure, path + ":" + std::to_string(line_no) +
                                                           ": " + word.error().message);
        words.push_back(std::move(*word));
    }
    return words;
}

Status write_word_tsv(const std::string& path, const std::vector<core::WordPair>& words) {
    std::string body;
    for (const auto& w : words) {
        body += sanitize_column(w.source_phrase());
        body += '\t';
        body += sanitize_column(w.target_phrase());
        body += '\n';
    }
    return write_text_file(path, body);
}

Status write_corpus_tsv(const std::string& path,
                        const std::vector<core::FinetuneExample>& examples) {
    std::string body;
    for (const auto& e : examples) {
        body += sanitize_column(e.source());
        body += '\t';
        body += sanitize_column(e.target());
        body += '\n';
    }
    return write_text_file(path, body);
}

Status write_manifest(const std::string& path, const DatasetManifest& manifest) {
    return write_text_file(path, manifest.to_json().dump(2) + "\n");
}

Result<DatasetManifest> read_manifest(const std::string& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) return make_error(ErrorCode::IoError, "cannot open " + path);
    std::stringstream buffer;
    buffer << file.rdbuf();
    Json j = Json::parse(buffer.str(), nullptr, false);
    if (j.is_discarded())
        return make_error(ErrorCode::ParseFailure, path + ": not valid JSON");
    return DatasetManifest::from_json(j);
}

}  // namespace mtpatcher::dataset
