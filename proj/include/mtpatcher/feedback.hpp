#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mtpatcher/gateway.hpp"
#include "mtpatcher/prompts.hpp"
#include "mtpatcher/result.hpp"
#include "mtpatcher/types.hpp"

namespace mtpatcher::feedback {

/// Non-fatal events collected while parsing one assessment: spans the
/// feedbacker claimed but that do not occur in the source (dropped, one
/// message each).
struct ParseIncidents {
    std::vector<std::string> dropped_spans;
};

/// Parses a feedbacker completion into a Feedback value.
///
/// The "No error." sentinel line (standing alone, no error blocks) yields
/// Feedback{NoError, [], hypothesis} with the hypothesis verbatim. Error
/// blocks are line-oriented: an "Error N:" header opens a block, then
/// "Source segment:" / "Translation segment:" / "Reason:" / "Correction:"
/// labeled lines fill it; unlabeled lines continue the open field; the final
/// "Good translation:" line becomes the post-edit. Blocks missing the source
/// segment or correction are a ParseFailure. A source segment that is not a
/// normalized substring of the source drops just that span (recorded in
/// incidents); losing every span is a ParseFailure.
Result<core::Feedback> parse_feedback(std::string_view raw, const std::string& hypothesis,
                                      const std::string& source,
                                      ParseIncidents* incidents = nullptr);

/// Knowledge selection: keeps exactly the pairs with verdict HasErrors,
/// preserving input order.
std::vector<std::pair<core::TranslationRecord, core::Feedback>> select_erroneous(
    const std::vector<std::pair<core::TranslationRecord, core::Feedback>>& feedbacks);

/// Everything needed to ask the feedbacker about one translation.
struct FeedbackContext {
    gateway::Gateway* gw = nullptr;
    gateway::BackendSpec backend;
    prompts::PromptTemplate tmpl;           // the feedback template
    std::string source_lang;                // human-readable, e.g. "Chinese"
    std::string target_lang;
    double temperature = 0.0;
    int max_tokens = 1024;
};

/// One feedbacker round trip: render prompt, complete, parse.
Result<core::Feedback> request_feedback(FeedbackContext& ctx, const std::string& source_text,
                                        const std::string& hypothesis,
                                        ParseIncidents* incidents = nullptr);

enum class IterationStatus { InProgress, Kept, Discarded };

const char* iteration_status_name(IterationStatus s);

/// Consistency loop over repeated feedback rounds. Kept and Discarded are
/// terminal; current_translation always equals the post-edit of the most
/// recent accepted epoch.
struct IterativeState {
    core::TranslationRecord record;
    int epoch = 0;
    std::string current_translation;
    std::vector<core::ErrorSpan> corrected_spans;
    IterationStatus status = IterationStatus::InProgress;
    std::string discard_reason;  // "inconsistent_span", "parse_failure", or a gateway error name
};

/// Runs up to max_epochs feedback rounds. Epoch 1 assesses the original
/// hypothesis, later epochs assess the previous post-edit. Terminates Kept
/// on a NoError epoch or when max_epochs passes without inconsistency;
/// terminates Discarded the first time a newly flagged span overlaps (by
/// normalized character interval in the source) a previously corrected one,
/// or when a round fails to parse.
IterativeState iterate_feedback(FeedbackContext& ctx, const core::TranslationRecord& record,
                                int max_epochs);

}  // namespace mtpatcher::feedback
