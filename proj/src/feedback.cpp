#include "mtpatcher/feedback.hpp"

#include <optional>

#include "mtpatcher/text.hpp"

namespace mtpatcher::feedback {

namespace {

// Matches an error-block header: optional bullet, "Error", optional number,
// then ':'. Returns the remainder after the colon (often the error type).
std::optional<std::string> match_error_header(std::string_view line) {
    std::size_t i = 0;
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    if (i < line.size() && (line[i] == '-' || line[i] == '*')) {
        ++i;
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    }
    static constexpr std::string_view kWord = "error";
    if (line.size() - i < kWord.size()) return std::nullopt;
    for (std::size_t k = 0; k < kWord.size(); ++k) {
        char c = line[i + k];
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
        if (c != kWord[k]) return std::nullopt;
    }
    i += kWord.size();
    while (i < line.size() && line[i] == ' ') ++i;
    bool saw_digit = false;
    while (i < line.size() && line[i] >= '0' && line[i] <= '9') {
        ++i;
        saw_digit = true;
    }
    (void)saw_digit;  // the number is optional and its value is not trusted
    if (i >= line.size() || line[i] != ':') return std::nullopt;
    return text::trim(line.substr(i + 1));
}

struct RawBlock {
    std::string source_segment;
    std::string translation_segment;
    std::string reason;
    std::string correction;
};

void append_field(std::string& field, const std::string& value) {
    if (value.empty()) return;
    if (!field.empty()) field += ' ';
    field += value;
}

}  // namespace

Result<core::Feedback> parse_feedback(std::string_view raw, const std::string& hypothesis,
                                      const std::string& source, ParseIncidents* incidents) {
    std::vector<RawBlock> blocks;
    std::string good_translation;
    bool saw_sentinel = false;

    enum class Open { None, SourceSegment, TranslationSegment, Reason, Correction, Good };
    Open open = Open::None;

    auto open_field = [&](Open which) -> std::string* {
        if (blocks.empty()) return nullptr;
        switch (which) {
            case Open::SourceSegment: return &blocks.back().source_segment;
            case Open::TranslationSegment: return &blocks.back().translation_segment;
            case Open::Reason: return &blocks.back().reason;
            case Open::Correction: return &blocks.back().correction;
            default: return nullptr;
        }
    };

    for (std::string_view line : text::split_lines(raw)) {
        std::string trimmed = text::trim(line);
        if (trimmed == "No error.") {
            saw_sentinel = true;
            open = Open::None;
            continue;
        }
        if (auto header = match_error_header(line)) {
            blocks.emplace_back();
            append_field(blocks.back().reason, *header);
            open = Open::None;
            continue;
        }
        struct LabelTarget {
            const char* label;
            Open which;
        };
        static constexpr LabelTarget kLabels[] = {
            {"Source segment", Open::SourceSegment},
            {"Translation segment", Open::TranslationSegment},
            {"Reason", Open::Reason},
            {"Correction", Open::Correction},
        };
        bool matched = false;
        for (const auto& target : kLabels) {
            if (auto v = text::match_label(line, target.label)) {
                if (blocks.empty()) blocks.emplace_back();  // tolerate a missing header
                append_field(*open_field(target.which), *v);
                open = target.which;
                matched = true;
                break;
            }
        }
        if (matched) continue;
        if (auto v = text::match_label(line, "Good translation")) {
            append_field(good_translation, *v);
            open = Open::Good;
            continue;
        }
        // Unlabeled lines continue the open field; outside any field they are
        // overall-assessment prose and are ignored.
        if (trimmed.empty()) continue;
        if (open == Open::Good) {
            append_field(good_translation, trimmed);
        } else if (auto* field = open_field(open)) {
            append_field(*field, trimmed);
        }
    }

    if (saw_sentinel && blocks.empty()) return core::Feedback::no_error(hypothesis);
    if (saw_sentinel && !blocks.empty())
        return make_error(ErrorCode::ParseFailure,
                          "assessment contains both the No error sentinel and error blocks");
    if (blocks.empty())
        return make_error(ErrorCode::ParseFailure,
                          "assessment has neither the No error sentinel nor error blocks");

    std::vector<core::ErrorSpan> spans;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        const RawBlock& block = blocks[i];
        if (block.source_segment.empty())
            return make_error(ErrorCode::ParseFailure,
                              "error block " + std::to_string(i + 1) + " lacks a source segment");
        if (block.correction.empty())
            return make_error(ErrorCode::ParseFailure,
                              "error block " + std::to_string(i + 1) + " lacks a correction");
        if (!text::contains_normalized(source, block.source_segment)) {
            if (incidents != nullptr)
                incidents->dropped_spans.push_back("claimed segment not found in source: " +
                                                   block.source_segment);
            continue;
        }
        auto span = core::ErrorSpan::create(block.source_segment, block.reason, block.correction);
        if (!span) return span.error();
        spans.push_back(std::move(*span));
    }
    if (spans.empty())
        return make_error(ErrorCode::ParseFailure, "every claimed segment failed source lookup");
    if (good_translation.empty())
        return make_error(ErrorCode::ParseFailure, "error blocks without a good translation");
    return core::Feedback::with_errors(std::move(spans), std::move(good_translation));
}

std::vector<std::pair<core::TranslationRecord, core::Feedback>> select_erroneous(
    const std::vector<std::pair<core::TranslationRecord, core::Feedback>>& feedbacks) {
    std::vector<std::pair<core::TranslationRecord, core::Feedback>> selected;
    for (const auto& pair : feedbacks)
        if (pair.second.verdict() == core::Verdict::HasErrors) selected.push_back(pair);
    return selected;
}

Result<core::Feedback> request_feedback(FeedbackContext& ctx, const std::string& source_text,
                                        const std::string& hypothesis,
                                        ParseIncidents* incidents) {
    auto prompt = prompts::render_prompt(ctx.tmpl, {{"srclang", ctx.source_lang},
                                                    {"tgtlang", ctx.target_lang},
                                                    {"srctext", source_text},
                                                    {"tgttext", hypothesis}});
    if (!prompt) return prompt.error();
    auto request = gateway::ChatRequest::create(ctx.backend.model, {{"user", *prompt}},
                                                ctx.temperature, ctx.max_tokens);
    if (!request) return request.error();
    auto response = ctx.gw->complete(ctx.backend, *request);
    if (!response) return response.error();
    return parse_feedback(response->content, hypothesis, source_text, incidents);
}

const char* iteration_status_name(IterationStatus s) {
    switch (s) {
        case IterationStatus::InProgress: return "in_progress";
        case IterationStatus::Kept: return "kept";
        case IterationStatus::Discarded: return "discarded";
    }
    return "unknown";
}

IterativeState iterate_feedback(FeedbackContext& ctx, const core::TranslationRecord& record,
                                int max_epochs) {
    IterativeState state{record, 0, record.hypothesis(), {}, IterationStatus::InProgress, {}};
    if (max_epochs < 1) max_epochs = 1;

    std::vector<text::SpanInterval> corrected_intervals;
    for (int epoch = 1; epoch <= max_epochs; ++epoch) {
        state.epoch = epoch;
        auto fb = request_feedback(ctx, record.source_text(), state.current_translation);
        if (!fb) {
            state.status = IterationStatus::Discarded;
            state.discard_reason = fb.code() == ErrorCode::ParseFailure
                                       ? "parse_failure"
                                       : error_code_name(fb.code());
            return state;
        }
        if (fb->verdict() == core::Verdict::NoError) {
            state.status = IterationStatus::Kept;
            return state;
        }
        for (const auto& span : fb->errors()) {
            auto interval = text::locate_normalized(record.source_text(), span.source_span());
            for (const auto& prior : corrected_intervals) {
                if (interval.overlaps(prior)) {
                    state.status = IterationStatus::Discarded;
                    state.discard_reason = "inconsistent_span";
                    return state;
                }
            }
        }
        for (const auto& span : fb->errors()) {
            corrected_intervals.push_back(
                text::locate_normalized(record.source_text(), span.source_span()));
            state.corrected_spans.push_back(span);
        }
        state.current_translation = fb->post_edit();
    }
    state.status = IterationStatus::Kept;
    return state;
}

}  // namespace mtpatcher::feedback
