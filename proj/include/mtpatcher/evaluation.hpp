#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "mtpatcher/gateway.hpp"
#include "mtpatcher/prompts.hpp"
#include "mtpatcher/result.hpp"
#include "mtpatcher/types.hpp"

namespace mtpatcher::evaluation {

using Json = nlohmann::json;

// --- Term accuracy -----------------------------------------------------------

struct TermAccuracyReport {
    std::int64_t total = 0;
    std::int64_t hits = 0;
    std::optional<double> accuracy;  // absent when total == 0
    std::vector<std::pair<core::WordPair, std::string>> misses;
};

/// A hit iff the hypothesis contains the pair's target phrase after
/// normalization and case folding on both sides.
TermAccuracyReport term_accuracy(
    const std::vector<std::pair<core::WordPair, std::string>>& items);

// --- BLEU ---------------------------------------------------------------------

/// Tokenization used by corpus_bleu, fixed so scores are bit-reproducible:
/// text is normalized (NFC, whitespace collapsed), then every symbol
/// code point (category S*) is space-padded, every punctuation code point
/// (category P*) is space-padded unless both adjacent code points exist and
/// are numeric (category N*), and the result is split on Unicode
/// whitespace. Case-sensitive; no stemming.
std::vector<std::string> tokenize_intl(std::string_view t);

/// Corpus BLEU-4: geometric mean of modified n-gram precisions (n = 1..4)
/// times the brevity penalty exp(min(0, 1 - ref_len/hyp_len)), scaled to
/// 0..100. Any n with zero matches yields 0.0.
Result<double> corpus_bleu(const std::vector<std::string>& hypotheses,
                           const std::vector<std::string>& references);

// --- LLM judges ----------------------------------------------------------------

enum class Choice { A, B, C, D };

const char* choice_name(Choice c);
std::optional<Choice> choice_from_name(std::string_view name);

enum class JudgeKind { Score, Comparison };

struct JudgeVerdict {
    JudgeKind kind = JudgeKind::Score;
    std::optional<int> score;      // Score verdicts only, 0..5
    std::optional<Choice> choice;  // Comparison verdicts only
    std::string rationale;
};

/// Parses "Score: N" (+ optional "Reason: ...") from a judge completion.
/// N must be a single digit 0..5 once trailing punctuation is stripped;
/// anything else — including out-of-range integers — is ParseFailure.
Result<JudgeVerdict> parse_score_verdict(std::string_view raw);

/// Parses "Comparison: X" (+ optional "Reason: ..."); X must be exactly one
/// of A, B, C, D after trailing punctuation is stripped.
Result<JudgeVerdict> parse_comparison_verdict(std::string_view raw);

struct JudgeContext {
    gateway::Gateway* gw = nullptr;
    gateway::BackendSpec backend;
    prompts::PromptTemplate idiom_tmpl;       // builtin "idiom_judge"
    prompts::PromptTemplate comparison_tmpl;  // builtin "comparison"
    double temperature = 0.0;
    int max_tokens = 512;
    int max_regen_attempts = 2;
};

/// Scores one idiom translation 0..5 with the rubric prompt. Unparseable
/// completions are retried (distinct retry markers) before ParseFailure.
Result<JudgeVerdict> judge_idiom(JudgeContext& ctx, const std::string& idiom,
                                 const std::string& definition, const std::string& source,
                                 const std::string& hypothesis);

/// Relabels a verdict obtained with swapped operands back to the forward
/// orientation and reconciles: agreement keeps the common choice, any
/// disagreement involving D becomes D (the judge doubts both), any other
/// disagreement becomes C (no stable winner). Symmetric by construction.
Choice reconcile_choices(Choice forward, Choice swapped);

/// Pairwise comparison of two translations of `word` in `source`. With
/// debias set, the item runs twice with operands swapped and the two
/// choices are reconciled via reconcile_choices.
Result<JudgeVerdict> compare_translations(JudgeContext& ctx, const std::string& source,
                                          const std::string& word,
                                          const std::string& translation_a,
                                          const std::string& translation_b,
                                          bool debias = false);

/// Mean over Score verdicts; absent when none carry a score.
std::optional<double> mean_score(const std::vector<JudgeVerdict>& verdicts);

// --- Reports and plugins ---------------------------------------------------------

/// External metric contract: the command reads source<TAB>hypothesis<TAB>
/// reference lines on stdin and prints one real number per input line.
Result<std::vector<double>> run_metric_plugin(
    const std::string& command,
    const std::vector<std::array<std::string, 3>>& rows);

/// Report document: {"metric", "config", "aggregate", "items"} as one JSON
/// file, keys sorted, stable across runs given identical inputs.
Status write_report(const std::string& path, const std::string& metric, const Json& config,
                    const Json& aggregate, const std::vector<Json>& items);

}  // namespace mtpatcher::evaluation
