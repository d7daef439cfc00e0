#include "mtpatcher/extension.hpp"

#include <optional>

#include "mtpatcher/text.hpp"

namespace mtpatcher::extension {

Status ExtensionConfig::validate() const {
    if (pairs_per_word < 1)
        return make_error(ErrorCode::ConfigError, "pairs_per_word must be >= 1");
    if (words_per_aspect < 1)
        return make_error(ErrorCode::ConfigError, "words_per_aspect must be >= 1");
    if (contexts_per_analog < 1)
        return make_error(ErrorCode::ConfigError, "contexts_per_analog must be >= 1");
    if (max_regen_attempts < 0)
        return make_error(ErrorCode::ConfigError, "max_regen_attempts must be >= 0");
    return ok_status();
}

// ---------------------------------------------------------------------------
// Parsers
// ---------------------------------------------------------------------------

Result<core::SentenceProfile> parse_profile(std::string_view raw) {
    std::string domain, topic, style;
    for (std::string_view line : text::split_lines(raw)) {
        if (auto v = text::match_label(line, "Domain")) {
            if (domain.empty()) domain = *v;
        } else if (auto v = text::match_label(line, "Topic")) {
            if (topic.empty()) topic = *v;
        } else if (auto v = text::match_label(line, "Style")) {
            if (style.empty()) style = *v;
        }
    }
    if (domain.empty() || topic.empty() || style.empty())
        return make_error(ErrorCode::ParseFailure,
                          "analysis lacks Domain/Topic/Style labeled lines");
    return core::SentenceProfile::create(std::move(domain), std::move(topic), std::move(style));
}

Result<std::pair<std::string, std::string>> parse_pair_lines(std::string_view raw) {
    std::string source, target;
    for (std::string_view line : text::split_lines(raw)) {
        if (auto v = text::match_label(line, "Source")) {
            if (source.empty()) source = *v;
        } else if (auto v = text::match_label(line, "Target")) {
            if (target.empty()) target = *v;
        }
    }
    if (source.empty() || target.empty())
        return make_error(ErrorCode::ParseFailure, "completion lacks Source/Target lines");
    return std::pair<std::string, std::string>{std::move(source), std::move(target)};
}

Result<std::string> parse_source_line(std::string_view raw) {
    for (std::string_view line : text::split_lines(raw)) {
        if (auto v = text::match_label(line, "Source")) {
            if (!v->empty()) return *v;
        }
    }
    return make_error(ErrorCode::ParseFailure, "completion lacks a Source line");
}

namespace {

// Splits "word -> translation" (ASCII arrow or U+2192), stripping list
// numbering and bullets.
std::optional<std::pair<std::string, std::string>> parse_word_line(std::string_view line) {
    std::string cleaned = text::trim(line);
    if (!cleaned.empty() && (cleaned[0] == '-' || cleaned[0] == '*'))
        cleaned = text::trim(cleaned.substr(1));
    std::size_t digits = 0;
    while (digits < cleaned.size() && cleaned[digits] >= '0' && cleaned[digits] <= '9') ++digits;
    if (digits > 0 && digits < cleaned.size() && (cleaned[digits] == '.' || cleaned[digits] == ')'))
        cleaned = text::trim(cleaned.substr(digits + 1));

    std::size_t sep = cleaned.find("->");
    std::size_t sep_len = 2;
    if (sep == std::string::npos) {
        sep = cleaned.find("→");
        sep_len = 3;
    }
    if (sep == std::string::npos) return std::nullopt;
    std::string word = text::trim(cleaned.substr(0, sep));
    std::string translation = text::trim(cleaned.substr(sep + sep_len));
    if (word.empty() || translation.empty()) return std::nullopt;
    return std::pair<std::string, std::string>{std::move(word), std::move(translation)};
}

}  // namespace

Result<core::Analogy> parse_analogy(std::string_view raw, const core::WordPair& seed,
                                    int words_per_aspect) {
    std::optional<core::Aspect> section;
    bool saw_header = false;
    std::vector<std::pair<std::string, std::string>> category, semantic;

    for (std::string_view line : text::split_lines(raw)) {
        std::optional<std::string> remainder;
        if ((remainder = text::match_label(line, "Category"))) {
            section = core::Aspect::Category;
            saw_header = true;
        } else if ((remainder = text::match_label(line, "Semantics")) ||
                   (remainder = text::match_label(line, "Semantic"))) {
            section = core::Aspect::Semantic;
            saw_header = true;
        }
        std::string_view payload = remainder ? std::string_view(*remainder) : line;
        if (!section) continue;
        if (auto word = parse_word_line(payload)) {
            (*section == core::Aspect::Category ? category : semantic).push_back(std::move(*word));
        }
    }

    if (!saw_header)
        return make_error(ErrorCode::ParseFailure,
                          "analogy completion lacks Category/Semantics sections");

    std::string seed_norm = core::normalize_text(seed.source_phrase());
    std::vector<core::BilingualWord> words;
    auto take = [&](const std::vector<std::pair<std::string, std::string>>& list,
                    core::Aspect aspect) {
        int kept = 0;
        for (const auto& [word, translation] : list) {
            if (kept >= words_per_aspect) break;
            if (core::normalize_text(word) == seed_norm) continue;
            auto made = core::BilingualWord::create(word, translation, aspect);
            if (!made) continue;
            words.push_back(std::move(*made));
            ++kept;
        }
    };
    take(category, core::Aspect::Category);
    take(semantic, core::Aspect::Semantic);

    if (words.empty())
        return make_error(ErrorCode::EmptyAnalogy, "both aspect lists are empty after filtering");
    return core::Analogy::create(seed, std::move(words));
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

namespace {

Result<std::string> complete_text(ExtensionContext& ctx, const std::string& prompt,
                                  double temperature) {
    auto request =
        gateway::ChatRequest::create(ctx.backend.model, {{"user", prompt}}, temperature,
                                     ctx.max_tokens);
    if (!request) return request.error();
    auto response = ctx.gw->complete(ctx.backend, *request);
    if (!response) return response.error();
    return response->content;
}

}  // namespace

std::string with_markers(const std::string& prompt, int candidate, int attempt) {
    std::string out = prompt;
    if (candidate > 0) out += "\n(variant " + std::to_string(candidate + 1) + ")";
    if (attempt > 0) out += "\n(retry " + std::to_string(attempt) + ")";
    return out;
}

Result<core::SentenceProfile> analyze_sentence(ExtensionContext& ctx,
                                               const std::string& source_text,
                                               const ExtensionConfig& cfg,
                                               ExtensionMetrics* metrics) {
    auto prompt = prompts::render_prompt(ctx.analysis_tmpl, {{"srclang", ctx.source_lang},
                                                             {"tgtlang", ctx.target_lang},
                                                             {"srctext", source_text}});
    if (!prompt) return prompt.error();

    Error last = make_error(ErrorCode::ParseFailure, "analysis never attempted");
    for (int attempt = 0; attempt <= cfg.max_regen_attempts; ++attempt) {
        if (metrics != nullptr) ++metrics->profile_requests;
        auto content = complete_text(ctx, with_markers(*prompt, 0, attempt),
                                     ctx.analysis_temperature);
        if (!content) {
            last = content.error();
            continue;
        }
        auto profile = parse_profile(*content);
        if (profile) return profile;
        last = profile.error();
    }
    return last;
}

Result<core::SentenceProfile> analyze_sentence(ExtensionContext& ctx,
                                               const core::SourceSentence& source,
                                               const ExtensionConfig& cfg,
                                               ExtensionMetrics* metrics) {
    return analyze_sentence(ctx, source.text(), cfg, metrics);
}

std::vector<core::SyntheticPair> synthesize_pairs(ExtensionContext& ctx,
                                                  const core::SentenceProfile& profile,
                                                  const core::WordPair& word_pair,
                                                  const ExtensionConfig& cfg,
                                                  const core::PairOrigin& base_origin,
                                                  ExtensionMetrics* metrics) {
    std::vector<core::SyntheticPair> pairs;
    auto prompt = prompts::render_prompt(
        ctx.synthesis_tmpl,
        {{"srclang", ctx.source_lang},
         {"tgtlang", ctx.target_lang},
         {"domain", profile.domain()},
         {"topic", profile.topic()},
         {"style", profile.style()},
         {"wordpair", word_pair.source_phrase() + " -> " + word_pair.target_phrase()}});
    if (!prompt) return pairs;

    for (int candidate = 0; candidate < cfg.pairs_per_word; ++candidate) {
        bool filled = false;
        for (int attempt = 0; attempt <= cfg.max_regen_attempts && !filled; ++attempt) {
            if (metrics != nullptr) ++metrics->generation_requests;
            auto content = complete_text(ctx, with_markers(*prompt, candidate, attempt),
                                         ctx.synthesis_temperature);
            if (!content) {
                if (metrics != nullptr) ++metrics->invalid_candidates;
                continue;
            }
            auto parsed = parse_pair_lines(*content);
            if (!parsed) {
                if (metrics != nullptr) ++metrics->invalid_candidates;
                continue;
            }
            core::PairOrigin origin = base_origin;
            origin.candidate_index = candidate;
            auto pair = core::SyntheticPair::create(parsed->first, parsed->second, word_pair,
                                                    profile, origin);
            if (!pair) {
                if (metrics != nullptr) ++metrics->invalid_candidates;
                continue;
            }
            pairs.push_back(std::move(*pair));
            filled = true;
        }
        if (!filled && metrics != nullptr) ++metrics->shortfall;
    }
    return pairs;
}

Result<core::Analogy> analogize(ExtensionContext& ctx, const std::string& source_text,
                                const core::WordPair& seed, const ExtensionConfig& cfg,
                                ExtensionMetrics* metrics) {
    auto prompt = prompts::render_prompt(ctx.analogy_tmpl, {{"srclang", ctx.source_lang},
                                                            {"tgtlang", ctx.target_lang},
                                                            {"srctext", source_text},
                                                            {"errorword", seed.source_phrase()}});
    if (!prompt) return prompt.error();

    Error last = make_error(ErrorCode::ParseFailure, "analogy never attempted");
    for (int attempt = 0; attempt <= cfg.max_regen_attempts; ++attempt) {
        if (metrics != nullptr) ++metrics->analogy_requests;
        auto content = complete_text(ctx, with_markers(*prompt, 0, attempt),
                                     ctx.analysis_temperature);
        if (!content) {
            last = content.error();
            continue;
        }
        auto analogy = parse_analogy(*content, seed, cfg.words_per_aspect);
        if (analogy) return analogy;
        if (analogy.code() == ErrorCode::EmptyAnalogy) return analogy.error();
        last = analogy.error();
    }
    return last;
}

std::vector<core::SyntheticPair> extend_errors(
    ExtensionContext& ctx,
    const std::vector<std::pair<core::TranslationRecord, core::Feedback>>& selected,
    const ExtensionConfig& cfg, bool enable_analogy, ExtensionMetrics* metrics) {
    std::vector<core::SyntheticPair> all_pairs;
    for (const auto& [record, fb] : selected) {
        if (fb.verdict() != core::Verdict::HasErrors) {
            if (metrics != nullptr) ++metrics->records_failed;
            continue;
        }
        auto profile = analyze_sentence(ctx, record.source_text(), cfg, metrics);
        if (!profile) {
            if (metrics != nullptr) ++metrics->records_failed;
            continue;
        }
        for (std::size_t span_index = 0; span_index < fb.errors().size(); ++span_index) {
            const core::ErrorSpan& span = fb.errors()[span_index];
            auto seed = core::WordPair::create(span.source_span(), span.correction());
            if (!seed) continue;

            core::PairOrigin origin{record.sentence_id(), static_cast<int>(span_index),
                                    std::nullopt, 0};
            auto seed_pairs = synthesize_pairs(ctx, *profile, *seed, cfg, origin, metrics);
            all_pairs.insert(all_pairs.end(), std::make_move_iterator(seed_pairs.begin()),
                             std::make_move_iterator(seed_pairs.end()));

            if (!enable_analogy) continue;
            auto analogy = analogize(ctx, record.source_text(), *seed, cfg, metrics);
            if (!analogy) continue;
            ExtensionConfig context_cfg = cfg;
            context_cfg.pairs_per_word = cfg.contexts_per_analog;
            for (const auto& word : analogy->words()) {
                auto analog_pair = core::WordPair::create(word.source_word(), word.translation());
                if (!analog_pair) continue;
                core::PairOrigin analog_origin{
                    record.sentence_id(), static_cast<int>(span_index),
                    core::AnalogRef{word.source_word(), word.aspect()}, 0};
                auto context_pairs = synthesize_pairs(ctx, *profile, *analog_pair, context_cfg,
                                                      analog_origin, metrics);
                all_pairs.insert(all_pairs.end(),
                                 std::make_move_iterator(context_pairs.begin()),
                                 std::make_move_iterator(context_pairs.end()));
            }
        }
    }
    return all_pairs;
}

}  // namespace mtpatcher::extension
