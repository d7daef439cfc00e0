#include "mtpatcher/evaluation.hpp"

#include <unicode/uchar.h>
#include <unicode/utf8.h>
#include <unistd.h>

#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "mtpatcher/extension.hpp"
#include "mtpatcher/text.hpp"

namespace mtpatcher::evaluation {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Term accuracy
// ---------------------------------------------------------------------------

TermAccuracyReport term_accuracy(
    const std::vector<std::pair<core::WordPair, std::string>>& items) {
    TermAccuracyReport report;
    report.total = static_cast<std::int64_t>(items.size());
    for (const auto& [pair, hypothesis] : items) {
        if (text::contains_folded(hypothesis, pair.target_phrase()))
            report.hits += 1;
        else
            report.misses.emplace_back(pair, hypothesis);
    }
    if (report.total > 0)
        report.accuracy = static_cast<double>(report.hits) / static_cast<double>(report.total);
    return report;
}

// ---------------------------------------------------------------------------
// BLEU
// ---------------------------------------------------------------------------

namespace {

bool is_numeric_cp(UChar32 c) {
    int8_t t = u_charType(c);
    return t == U_DECIMAL_DIGIT_NUMBER || t == U_LETTER_NUMBER || t == U_OTHER_NUMBER;
}

bool is_punct_cp(UChar32 c) {
    int8_t t = u_charType(c);
    return t == U_DASH_PUNCTUATION || t == U_START_PUNCTUATION || t == U_END_PUNCTUATION ||
           t == U_CONNECTOR_PUNCTUATION || t == U_OTHER_PUNCTUATION ||
           t == U_INITIAL_PUNCTUATION || t == U_FINAL_PUNCTUATION;
}

bool is_symbol_cp(UChar32 c) {
    int8_t t = u_charType(c);
    return t == U_MATH_SYMBOL || t == U_CURRENCY_SYMBOL || t == U_MODIFIER_SYMBOL ||
           t == U_OTHER_SYMBOL;
}

}  // namespace

std::vector<std::string> tokenize_intl(std::string_view t) {
    std::string norm = text::normalize(t);
    struct Cp {
        UChar32 c;
        std::size_t begin;
        std::size_t end;
    };
    std::vector<Cp> cps;
    {
        const auto* bytes = reinterpret_cast<const std::uint8_t*>(norm.data());
        std::int32_t i = 0;
        const auto len = static_cast<std::int32_t>(norm.size());
        while (i < len) {
            std::int32_t begin = i;
            UChar32 c;
            U8_NEXT(bytes, i, len, c);
            if (c < 0) c = 0xFFFD;  // normalize() emits valid UTF-8; belt and braces
            cps.push_back({c, static_cast<std::size_t>(begin), static_cast<std::size_t>(i)});
        }
    }
    std::string spaced;
    spaced.reserve(norm.size() + cps.size());
    for (std::size_t k = 0; k < cps.size(); ++k) {
        bool numeric_run = k > 0 && k + 1 < cps.size() && is_numeric_cp(cps[k - 1].c) &&
                           is_numeric_cp(cps[k + 1].c);
        bool pad = is_symbol_cp(cps[k].c) || (is_punct_cp(cps[k].c) && !numeric_run);
        if (pad) spaced += ' ';
        spaced.append(norm, cps[k].begin, cps[k].end - cps[k].begin);
        if (pad) spaced += ' ';
    }
    return text::split_whitespace(spaced);
}

namespace {

void count_ngrams(const std::vector<std::string>& tokens, int n,
                  std::unordered_map<std::string, std::int64_t>& out) {
    if (tokens.size() < static_cast<std::size_t>(n)) return;
    for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
        std::string key = tokens[i];
        for (int k = 1; k < n; ++k) {
            key += '\x1f';
            key += tokens[i + k];
        }
        out[key] += 1;
    }
}

}  // namespace

Result<double> corpus_bleu(const std::vector<std::string>& hypotheses,
                           const std::vector<std::string>& references) {
    if (hypotheses.size() != references.size())
        return make_error(ErrorCode::LengthMismatch,
                          std::to_string(hypotheses.size()) + " hypotheses vs " +
                              std::to_string(references.size()) + " references");
    if (hypotheses.empty()) return make_error(ErrorCode::EmptyCorpus, "no sentences to score");

    std::array<std::int64_t, 4> matches{};
    std::array<std::int64_t, 4> totals{};
    std::int64_t hyp_len = 0;
    std::int64_t ref_len = 0;
    for (std::size_t i = 0; i < hypotheses.size(); ++i) {
        auto hyp = tokenize_intl(hypotheses[i]);
        auto ref = tokenize_intl(references[i]);
        hyp_len += static_cast<std::int64_t>(hyp.size());
        ref_len += static_cast<std::int64_t>(ref.size());
        for (int n = 1; n <= 4; ++n) {
            std::unordered_map<std::string, std::int64_t> hyp_counts;
            std::unordered_map<std::string, std::int64_t> ref_counts;
            count_ngrams(hyp, n, hyp_counts);
            count_ngrams(ref, n, ref_counts);
            for (const auto& [gram, count] : hyp_counts) {
                auto it = ref_counts.find(gram);
                if (it != ref_counts.end()) matches[n - 1] += std::min(count, it->second);
                totals[n - 1] += count;
            }
        }
    }
    if (hyp_len == 0) return 0.0;

    double log_sum = 0.0;
    for (int n = 0; n < 4; ++n) {
        if (matches[n] == 0) return 0.0;
        log_sum += 0.25 * std::log(static_cast<double>(matches[n]) /
                                   static_cast<double>(totals[n]));
    }
    double bp = hyp_len >= ref_len
                    ? 1.0
                    : std::exp(1.0 - static_cast<double>(ref_len) /
                                         static_cast<double>(hyp_len));
    return 100.0 * bp * std::exp(log_sum);
}

// ---------------------------------------------------------------------------
// LLM judges
// ---------------------------------------------------------------------------

const char* choice_name(Choice c) {
    switch (c) {
        case Choice::A: return "A";
        case Choice::B: return "B";
        case Choice::C: return "C";
        case Choice::D: return "D";
    }
    return "?";
}

std::optional<Choice> choice_from_name(std::string_view name) {
    if (name == "A") return Choice::A;
    if (name == "B") return Choice::B;
    if (name == "C") return Choice::C;
    if (name == "D") return Choice::D;
    return std::nullopt;
}

namespace {

std::string strip_trailing_punct(std::string token) {
    while (!token.empty()) {
        char c = token.back();
        if (c == '.' || c == ',' || c == ';' || c == ':' || c == '!' || c == '?' || c == ')')
            token.pop_back();
        else
            break;
    }
    return token;
}

struct LabeledAnswer {
    std::optional<std::string> value;
    std::string reason;
};

// First occurrence of the value label and of Reason win; unlabeled lines
// directly after Reason continue it.
LabeledAnswer scan_answer(std::string_view raw, std::string_view label) {
    LabeledAnswer out;
    bool reason_open = false;
    for (auto line : text::split_lines(raw)) {
        if (auto v = text::match_label(line, label)) {
            if (!out.value) out.value = *v;
            reason_open = false;
        } else if (auto r = text::match_label(line, "Reason")) {
            if (out.reason.empty()) {
                out.reason = *r;
                reason_open = true;
            }
        } else if (reason_open) {
            std::string t = text::trim(line);
            if (t.empty()) {
                reason_open = false;
                continue;
            }
            out.reason += ' ';
            out.reason += t;
        }
    }
    return out;
}

// Rationale fallback when no Reason line exists: whatever trails the parsed
// token on the value line ("Score: 4 — fine" keeps "fine").
std::string trailing_rationale(const std::vector<std::string>& tokens) {
    std::size_t start = 1;
    if (tokens.size() > start &&
        (tokens[start] == "-" || tokens[start] == "—" || tokens[start] == "–"))
        ++start;
    std::string out;
    for (std::size_t i = start; i < tokens.size(); ++i) {
        if (!out.empty()) out += ' ';
        out += tokens[i];
    }
    return out;
}

}  // namespace

Result<JudgeVerdict> parse_score_verdict(std::string_view raw) {
    auto answer = scan_answer(raw, "Score");
    if (!answer.value)
        return make_error(ErrorCode::ParseFailure, "judge reply has no Score line");
    auto tokens = text::split_whitespace(*answer.value);
    if (tokens.empty())
        return make_error(ErrorCode::ParseFailure, "Score line carries no value");
    std::string token = strip_trailing_punct(tokens[0]);
    if (token.size() != 1 || token[0] < '0' || token[0] > '9')
        return make_error(ErrorCode::ParseFailure,
                          "score is not a single digit: \"" + tokens[0] + "\"");
    int score = token[0] - '0';
    if (score > 5)
        return make_error(ErrorCode::ParseFailure,
                          "score " + token + " outside the 0..5 rubric");
    JudgeVerdict verdict;
    verdict.kind = JudgeKind::Score;
    verdict.score = score;
    verdict.rationale = !answer.reason.empty() ? answer.reason : trailing_rationale(tokens);
    return verdict;
}

Result<JudgeVerdict> parse_comparison_verdict(std::string_view raw) {
    auto answer = scan_answer(raw, "Comparison");
    if (!answer.value)
        return make_error(ErrorCode::ParseFailure, "judge reply has no Comparison line");
    auto tokens = text::split_whitespace(*answer.value);
    if (tokens.empty())
        return make_error(ErrorCode::ParseFailure, "Comparison line carries no value");
    auto choice = choice_from_name(strip_trailing_punct(tokens[0]));
    if (!choice)
        return make_error(ErrorCode::ParseFailure,
                          "comparison is not one of A/B/C/D: \"" + tokens[0] + "\"");
    JudgeVerdict verdict;
    verdict.kind = JudgeKind::Comparison;
    verdict.choice = *choice;
    verdict.rationale = !answer.reason.empty() ? answer.reason : trailing_rationale(tokens);
    return verdict;
}

namespace {

Result<std::string> judge_completion(JudgeContext& ctx, const std::string& prompt) {
    auto request = gateway::ChatRequest::create(ctx.backend.model, {{"user", prompt}},
                                                ctx.temperature, ctx.max_tokens);
    if (!request) return request.error();
    auto response = ctx.gw->complete(ctx.backend, *request);
    if (!response) return response.error();
    return response->content;
}

template <typename Parse>
Result<JudgeVerdict> judged_with_retries(JudgeContext& ctx, const std::string& prompt,
                                         Parse parse) {
    Error last = Error{ErrorCode::ParseFailure, "no attempts made"};
    for (int attempt = 0; attempt <= ctx.max_regen_attempts; ++attempt) {
        auto content = judge_completion(ctx, extension::with_markers(prompt, 0, attempt));
        if (!content) {
            last = content.error();
            continue;
        }
        auto verdict = parse(*content);
        if (verdict) return verdict;
        last = verdict.error();
    }
    return last;
}

}  // namespace

Result<JudgeVerdict> judge_idiom(JudgeContext& ctx, const std::string& idiom,
                                 const std::string& definition, const std::string& source,
                                 const std::string& hypothesis) {
    if (idiom.empty() || definition.empty() || source.empty() || hypothesis.empty())
        return make_error(ErrorCode::InvalidArgument, "judge_idiom requires all four inputs");
    auto prompt = prompts::render_prompt(ctx.idiom_tmpl, {{"errorword", idiom},
                                                          {"definition", definition},
                                                          {"srctext", source},
                                                          {"tgttext", hypothesis}});
    if (!prompt) return prompt.error();
    return judged_with_retries(ctx, *prompt,
                               [](const std::string& c) { return parse_score_verdict(c); });
}

Choice reconcile_choices(Choice forward, Choice swapped) {
    Choice mapped = swapped == Choice::A   ? Choice::B
                    : swapped == Choice::B ? Choice::A
                                           : swapped;
    if (forward == mapped) return forward;
    if (forward == Choice::D || mapped == Choice::D) return Choice::D;
    return Choice::C;
}

namespace {

Result<JudgeVerdict> compare_once(JudgeContext& ctx, const std::string& source,
                                  const std::string& word, const std::string& first,
                                  const std::string& second) {
    auto prompt = prompts::render_prompt(ctx.comparison_tmpl, {{"srctext", source},
                                                               {"errorword", word},
                                                               {"translation_a", first},
                                                               {"translation_b", second}});
    if (!prompt) return prompt.error();
    return judged_with_retries(
        ctx, *prompt, [](const std::string& c) { return parse_comparison_verdict(c); });
}

}  // namespace

Result<JudgeVerdict> compare_translations(JudgeContext& ctx, const std::string& source,
                                          const std::string& word,
                                          const std::string& translation_a,
                                          const std::string& translation_b, bool debias) {
    if (source.empty() || word.empty() || translation_a.empty() || translation_b.empty())
        return make_error(ErrorCode::InvalidArgument,
                          "compare_translations requires all four inputs");
    auto forward = compare_once(ctx, source, word, translation_a, translation_b);
    if (!forward || !debias) return forward;
    auto swapped = compare_once(ctx, source, word, translation_b, translation_a);
    if (!swapped) return swapped;
    JudgeVerdict verdict = *forward;
    verdict.choice = reconcile_choices(*forward->choice, *swapped->choice);
    if (!swapped->rationale.empty()) {
        if (!verdict.rationale.empty()) verdict.rationale += " | ";
        verdict.rationale += "swapped: " + swapped->rationale;
    }
    return verdict;
}

std::optional<double> mean_score(const std::vector<JudgeVerdict>& verdicts) {
    double sum = 0.0;
    std::int64_t count = 0;
    for (const auto& v : verdicts) {
        if (v.kind != JudgeKind::Score || !v.score) continue;
        sum += *v.score;
        count += 1;
    }
    if (count == 0) return std::nullopt;
    return sum / static_cast<double>(count);
}

// ---------------------------------------------------------------------------
// Reports and plugins
// ---------------------------------------------------------------------------

namespace {

std::string tsv_column(std::string_view s) {
    std::string out(s);
    for (char& c : out)
        if (c == '\t' || c == '\n' || c == '\r') c = ' ';
    return out;
}

}  // namespace

Result<std::vector<double>> run_metric_plugin(
    const std::string& command, const std::vector<std::array<std::string, 3>>& rows) {
    if (command.empty())
        return make_error(ErrorCode::InvalidArgument, "metric command is empty");
    if (rows.empty()) return std::vector<double>{};

    static std::atomic<std::uint64_t> counter{0};
    auto tag = std::to_string(::getpid()) + "." + std::to_string(counter.fetch_add(1));
    fs::path in_path = fs::temp_directory_path() / ("mtpatcher_metric_in." + tag);
    fs::path out_path = fs::temp_directory_path() / ("mtpatcher_metric_out." + tag);
    {
        std::ofstream in(in_path, std::ios::binary);
        for (const auto& row : rows)
            in << tsv_column(row[0]) << '\t' << tsv_column(row[1]) << '\t'
               << tsv_column(row[2]) << '\n';
        if (!in) {
            std::error_code ec;
            fs::remove(in_path, ec);
            return make_error(ErrorCode::IoError, "cannot stage metric input");
        }
    }
    std::string shell = command + " < " + in_path.string() + " > " + out_path.string() +
                        " 2>/dev/null";
    int rc = std::system(shell.c_str());
    std::string body;
    {
        std::ifstream out_file(out_path, std::ios::binary);
        std::stringstream buffer;
        buffer << out_file.rdbuf();
        body = buffer.str();
    }
    std::error_code ec;
    fs::remove(in_path, ec);
    fs::remove(out_path, ec);
    if (rc != 0)
        return make_error(ErrorCode::StageFailure,
                          "metric command exited with status " + std::to_string(rc));

    std::vector<double> scores;
    for (auto line : text::split_lines(body)) {
        std::string t = text::trim(line);
        if (t.empty()) continue;
        char* end = nullptr;
        double value = std::strtod(t.c_str(), &end);
        if (end == nullptr || *end != '\0')
            return make_error(ErrorCode::ParseFailure,
                              "metric output is not a number: \"" + t + "\"");
        scores.push_back(value);
    }
    if (scores.size() != rows.size())
        return make_error(ErrorCode::ParseFailure,
                          "metric printed " + std::to_string(scores.size()) + " scores for " +
                              std::to_string(rows.size()) + " rows");
    return scores;
}

Status write_report(const std::string& path, const std::string& metric, const Json& config,
                    const Json& aggregate, const std::vector<Json>& items) {
    Json doc{{"metric", metric},
             {"config", config},
             {"aggregate", aggregate},
             {"items", items}};
    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    if (!file) return make_error(ErrorCode::IoError, "cannot open " + path + " for writing");
    file << doc.dump(2) << '\n';
    file.flush();
    if (!file) return make_error(ErrorCode::IoError, "short write to " + path);
    return ok_status();
}

}  // namespace mtpatcher::evaluation
