#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mtpatcher/gateway.hpp"
#include "mtpatcher/prompts.hpp"
#include "mtpatcher/result.hpp"
#include "mtpatcher/types.hpp"

namespace mtpatcher::extension {

struct ExtensionConfig {
    int pairs_per_word = 4;       // synthetic pairs per (error, correction) pair
    int words_per_aspect = 2;     // analogous words kept per aspect
    int contexts_per_analog = 1;  // synthetic pairs per analogous word
    int max_regen_attempts = 2;   // extra attempts per invalid/unparseable generation

    Status validate() const;
};

/// Counters accumulated across generation calls; stages fold these into
/// their summaries.
struct ExtensionMetrics {
    std::int64_t generation_requests = 0;
    std::int64_t profile_requests = 0;
    std::int64_t analogy_requests = 0;
    std::int64_t invalid_candidates = 0;  // containment or parse rejections
    std::int64_t shortfall = 0;           // slots left unfilled after all retries
    std::int64_t records_failed = 0;      // records skipped by extend_errors
};

struct ExtensionContext {
    gateway::Gateway* gw = nullptr;
    gateway::BackendSpec backend;
    std::string source_lang;  // human-readable, e.g. "Chinese"
    std::string target_lang;
    prompts::PromptTemplate analysis_tmpl;
    prompts::PromptTemplate synthesis_tmpl;
    prompts::PromptTemplate analogy_tmpl;
    double analysis_temperature = 0.0;
    double synthesis_temperature = 0.7;
    int max_tokens = 512;
};

// --- Completion parsers (exposed for tests and fixture tooling) ----------

/// Parses Domain:/Topic:/Style: labeled lines, any order, first occurrence
/// of each label wins. All three must be present and non-empty.
Result<core::SentenceProfile> parse_profile(std::string_view raw);

/// Parses a Source:/Target: line pair.
Result<std::pair<std::string, std::string>> parse_pair_lines(std::string_view raw);

/// Parses a lone Source: line (used when only one sentence is requested).
Result<std::string> parse_source_line(std::string_view raw);

/// Parses Category:/Semantics: sections of "word -> translation" lines into
/// an Analogy: per-aspect truncation to words_per_aspect, seed filtered out.
Result<core::Analogy> parse_analogy(std::string_view raw, const core::WordPair& seed,
                                    int words_per_aspect);

/// Appends "(variant N)"/"(retry N)" markers so sibling candidates and
/// regeneration attempts stay distinct under content-addressed caching.
std::string with_markers(const std::string& prompt, int candidate, int attempt);

// --- Operations ------------------------------------------------------------

/// Sentence analyzer: asks for domain/topic/style, retrying unparseable
/// completions up to cfg.max_regen_attempts times (attempts carry a retry
/// marker so they are distinct requests).
Result<core::SentenceProfile> analyze_sentence(ExtensionContext& ctx,
                                               const std::string& source_text,
                                               const ExtensionConfig& cfg,
                                               ExtensionMetrics* metrics = nullptr);
Result<core::SentenceProfile> analyze_sentence(ExtensionContext& ctx,
                                               const core::SourceSentence& source,
                                               const ExtensionConfig& cfg,
                                               ExtensionMetrics* metrics = nullptr);

/// Parallel data synthesizer: one generation request per candidate pair
/// (distinct variant markers), each candidate re-validated against both
/// containment invariants, invalid candidates regenerated then dropped.
/// Returns at most cfg.pairs_per_word pairs; shortfalls land in metrics.
std::vector<core::SyntheticPair> synthesize_pairs(ExtensionContext& ctx,
                                                  const core::SentenceProfile& profile,
                                                  const core::WordPair& word_pair,
                                                  const ExtensionConfig& cfg,
                                                  const core::PairOrigin& base_origin,
                                                  ExtensionMetrics* metrics = nullptr);

/// Word analoger for one seed pair occurring in source_text.
Result<core::Analogy> analogize(ExtensionContext& ctx, const std::string& source_text,
                                const core::WordPair& seed, const ExtensionConfig& cfg,
                                ExtensionMetrics* metrics = nullptr);

/// Full extension pass over selected erroneous records: one profile per
/// record, then per error span the seed synthesis and (optionally) analogy
/// expansion. Per-record failures are counted and skipped, never fatal.
std::vector<core::SyntheticPair> extend_errors(
    ExtensionContext& ctx,
    const std::vector<std::pair<core::TranslationRecord, core::Feedback>>& selected,
    const ExtensionConfig& cfg, bool enable_analogy, ExtensionMetrics* metrics = nullptr);

}  // namespace mtpatcher::extension
