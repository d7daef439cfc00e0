#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "mtpatcher/gateway.hpp"
#include "mtpatcher/prompts.hpp"
#include "mtpatcher/result.hpp"
#include "mtpatcher/types.hpp"

namespace mtpatcher::dataset {

using Json = nlohmann::json;

// PE fine-tunes on post-edits alone; PE_PDS adds synthetic pairs seeded by
// error spans; PE_PDS_WA adds the analogy-context pairs on top.
enum class DatasetMode { PE, PE_PDS, PE_PDS_WA };

const char* dataset_mode_name(DatasetMode mode);
Result<DatasetMode> dataset_mode_from_name(std::string_view name);

struct DatasetManifest {
    std::map<std::string, std::int64_t> counts_by_origin;
    std::int64_t total = 0;            // post-dedup; always Σ counts_by_origin
    std::int64_t pre_dedup_total = 0;  // examples assembled before dedup
    std::vector<std::string> source_stage_ids;
    std::int64_t seed = 0;
    std::string created_at;  // UTC ISO-8601; honors SOURCE_DATE_EPOCH

    Json to_json() const;
    static Result<DatasetManifest> from_json(const Json& j);
};

struct WordSetSplit {
    std::vector<core::WordPair> seen;
    std::vector<core::WordPair> unseen;
    std::int64_t seed = 0;
};

/// UTC timestamp string for manifests. SOURCE_DATE_EPOCH overrides the wall
/// clock so archived runs and determinism tests get stable bytes.
std::string manifest_timestamp();

// --- Assembly ----------------------------------------------------------------

/// Uniform sample of n sentences without replacement, deterministic for a
/// given seed on every platform, output sorted by id.
Result<std::vector<core::SourceSentence>> sample_corpus(
    const std::vector<core::SourceSentence>& corpus, std::size_t n, std::uint64_t seed);

/// Assembles the fine-tuning corpus for one mode. Examples are grouped by
/// origin (post-edits, then synthesized, then analogy contexts), each group
/// in input order; exact duplicates of normalized (source, target) are
/// dropped keeping the first. Manifest counts are post-dedup. seed and
/// stage_ids are recorded in the manifest verbatim.
std::pair<std::vector<core::FinetuneExample>, DatasetManifest> build_dataset(
    const std::vector<std::pair<core::TranslationRecord, core::Feedback>>& post_edits,
    const std::vector<core::SyntheticPair>& synthetic, DatasetMode mode,
    std::int64_t seed = 0, std::vector<std::string> source_stage_ids = {});

/// Deterministic disjoint seen/unseen split of a word list.
Result<WordSetSplit> split_wordset(const std::vector<core::WordPair>& words,
                                   std::size_t seen_n, std::size_t unseen_n,
                                   std::uint64_t seed);

// --- Phenomenon-set forging ---------------------------------------------------

struct ForgeContext {
    gateway::Gateway* gw = nullptr;
    gateway::BackendSpec backend;
    std::string source_lang;  // human-readable, e.g. "Chinese"
    std::string target_lang;
    prompts::PromptTemplate mono_tmpl;  // builtin "forge_mono"
    prompts::PromptTemplate pair_tmpl;  // builtin "forge_pair"
    double temperature = 0.7;
    int max_tokens = 256;
    int max_regen_attempts = 2;
    int parallelism = 4;
};

struct ForgeOutput {
    std::vector<core::SourceSentence> monolingual;  // one per seen word
    std::vector<std::pair<std::string, std::string>> unseen_context;  // seen words
    std::vector<std::pair<std::string, std::string>> unseen_word;     // unseen words
    std::int64_t requests = 0;
    std::int64_t invalid_candidates = 0;
    std::int64_t mono_shortfall = 0;
    std::int64_t context_shortfall = 0;
    std::int64_t word_shortfall = 0;
};

/// Forges the three phenomenon sets: per seen word one monolingual sentence
/// containing the word and one parallel pair containing the word pair (the
/// two must differ textually), per unseen word one parallel pair. Every
/// sentence is containment-validated with regeneration; exhausted slots are
/// dropped and counted as shortfall, never fatal.
ForgeOutput forge_phenomenon_sets(ForgeContext& ctx, const WordSetSplit& split);

// --- Files ---------------------------------------------------------------------

/// Word list: source_phrase<TAB>target_phrase per line, UTF-8, no header.
Result<std::vector<core::WordPair>> read_word_tsv(const std::string& path);
Status write_word_tsv(const std::string& path, const std::vector<core::WordPair>& words);

/// Two-column trainer export: source<TAB>target per line. Tabs or newlines
/// inside a sentence would corrupt the framing, so they are rewritten to
/// spaces on the way out.
Status write_corpus_tsv(const std::string& path,
                        const std::vector<core::FinetuneExample>& examples);

Status write_manifest(const std::string& path, const DatasetManifest& manifest);
Result<DatasetManifest> read_manifest(const std::string& path);

}  // namespace mtpatcher::dataset
