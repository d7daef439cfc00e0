#include "mtpatcher/types.hpp"

#include <nlohmann/json.hpp>

#include "mtpatcher/text.hpp"

namespace mtpatcher {

const char* error_code_name(ErrorCode code) {
    switch (code) {
        case ErrorCode::InvalidArgument: return "InvalidArgument";
        case ErrorCode::MissingBinding: return "MissingBinding";
        case ErrorCode::ParseFailure: return "ParseFailure";
        case ErrorCode::SpanMismatch: return "SpanMismatch";
        case ErrorCode::EmptyAnalogy: return "EmptyAnalogy";
        case ErrorCode::AuthError: return "AuthError";
        case ErrorCode::BackendBusy: return "BackendBusy";
        case ErrorCode::RateLimitExhausted: return "RateLimitExhausted";
        case ErrorCode::NetworkError: return "NetworkError";
        case ErrorCode::RequestRejected: return "RequestRejected";
        case ErrorCode::MalformedResponse: return "MalformedResponse";
        case ErrorCode::NoScriptMatch: return "NoScriptMatch";
        case ErrorCode::SampleTooLarge: return "SampleTooLarge";
        case ErrorCode::SplitTooLarge: return "SplitTooLarge";
        case ErrorCode::DuplicateWord: return "DuplicateWord";
        case ErrorCode::LengthMismatch: return "LengthMismatch";
        case ErrorCode::EmptyCorpus: return "EmptyCorpus";
        case ErrorCode::ConfigError: return "ConfigError";
        case ErrorCode::MissingInput: return "MissingInput";
        case ErrorCode::StageFailure: return "StageFailure";
        case ErrorCode::ResumeMismatch: return "ResumeMismatch";
        case ErrorCode::LockHeld: return "LockHeld";
        case ErrorCode::IoError: return "IoError";
    }
    return "UnknownError";
}

}  // namespace mtpatcher

namespace mtpatcher::core {

std::string normalize_text(std::string_view raw) { return text::normalize(raw); }

namespace {

Error invalid(std::string message) {
    return make_error(ErrorCode::InvalidArgument, std::move(message));
}

}  // namespace

// ---------------------------------------------------------------------------
// Factories
// ---------------------------------------------------------------------------

Result<SourceSentence> SourceSentence::create(RecordId id, std::string text, std::string lang) {
    if (text::trim(text).empty()) return invalid("SourceSentence.text empty after trimming");
    if (lang.empty()) return invalid("SourceSentence.lang empty");
    SourceSentence s;
    s.id_ = id;
    s.text_ = std::move(text);
    s.lang_ = std::move(lang);
    return s;
}

Result<TranslationRecord> TranslationRecord::create(RecordId sentence_id, std::string source_text,
                                                    std::string hypothesis, std::string producer) {
    if (hypothesis.empty()) return invalid("TranslationRecord.hypothesis empty");
    if (source_text.empty()) return invalid("TranslationRecord.source_text empty");
    TranslationRecord r;
    r.sentence_id_ = sentence_id;
    r.source_text_ = std::move(source_text);
    r.hypothesis_ = std::move(hypothesis);
    r.producer_ = std::move(producer);
    return r;
}

Result<ErrorSpan> ErrorSpan::create(std::string source_span, std::string explanation,
                                    std::string correction) {
    if (source_span.empty()) return invalid("ErrorSpan.source_span empty");
    if (correction.empty()) return invalid("ErrorSpan.correction empty");
    ErrorSpan e;
    e.source_span_ = std::move(source_span);
    e.explanation_ = std::move(explanation);
    e.correction_ = std::move(correction);
    return e;
}

const char* verdict_name(Verdict v) {
    return v == Verdict::NoError ? "no_error" : "has_errors";
}

std::optional<Verdict> verdict_from_name(std::string_view name) {
    if (name == "no_error") return Verdict::NoError;
    if (name == "has_errors") return Verdict::HasErrors;
    return std::nullopt;
}

Feedback Feedback::no_error(std::string hypothesis) {
    Feedback f;
    f.verdict_ = Verdict::NoError;
    f.post_edit_ = std::move(hypothesis);
    return f;
}

Result<Feedback> Feedback::with_errors(std::vector<ErrorSpan> errors, std::string post_edit) {
    if (errors.empty()) return invalid("Feedback.HasErrors requires at least one span");
    if (post_edit.empty()) return invalid("Feedback.post_edit empty");
    Feedback f;
    f.verdict_ = Verdict::HasErrors;
    f.errors_ = std::move(errors);
    f.post_edit_ = std::move(post_edit);
    return f;
}

Result<SentenceProfile> SentenceProfile::create(std::string domain, std::string topic,
                                                std::string style) {
    if (domain.empty() || topic.empty() || style.empty())
        return invalid("SentenceProfile requires domain, topic and style");
    SentenceProfile p;
    p.domain_ = std::move(domain);
    p.topic_ = std::move(topic);
    p.style_ = std::move(style);
    return p;
}

Result<WordPair> WordPair::create(std::string source_phrase, std::string target_phrase) {
    std::string src = text::trim(source_phrase);
    std::string tgt = text::trim(target_phrase);
    if (src.empty() || tgt.empty()) return invalid("WordPair requires both phrases");
    WordPair w;
    w.source_phrase_ = std::move(src);
    w.target_phrase_ = std::move(tgt);
    return w;
}

const char* aspect_name(Aspect a) {
    return a == Aspect::Category ? "category" : "semantic";
}

std::optional<Aspect> aspect_from_name(std::string_view name) {
    if (name == "category") return Aspect::Category;
    if (name == "semantic") return Aspect::Semantic;
    return std::nullopt;
}

Result<BilingualWord> BilingualWord::create(std::string source_word, std::string translation,
                                            Aspect aspect) {
    std::string src = text::trim(source_word);
    std::string tgt = text::trim(translation);
    if (src.empty() || tgt.empty()) return invalid("BilingualWord requires word and translation");
    BilingualWord w;
    w.source_word_ = std::move(src);
    w.translation_ = std::move(tgt);
    w.aspect_ = aspect;
    return w;
}

Result<Analogy> Analogy::create(WordPair seed, std::vector<BilingualWord> words) {
    std::string seed_norm = normalize_text(seed.source_phrase());
    for (const auto& w : words) {
        if (normalize_text(w.source_word()) == seed_norm)
            return invalid("Analogy word equals the seed phrase: " + w.source_word());
    }
    Analogy a(std::move(seed));
    a.words_ = std::move(words);
    return a;
}

std::vector<BilingualWord> Analogy::words_for(Aspect aspect) const {
    std::vector<BilingualWord> out;
    for (const auto& w : words_)
        if (w.aspect() == aspect) out.push_back(w);
    return out;
}

Result<SyntheticPair> SyntheticPair::create(std::string source, std::string target,
                                            WordPair word_pair, SentenceProfile profile,
                                            PairOrigin origin) {
    if (!text::contains_normalized(source, word_pair.source_phrase()))
        return invalid("SyntheticPair.source does not contain \"" + word_pair.source_phrase() +
                       "\"");
    if (!text::contains_folded(target, word_pair.target_phrase()))
        return invalid("SyntheticPair.target does not contain \"" + word_pair.target_phrase() +
                       "\"");
    SyntheticPair p(std::move(word_pair), std::move(profile));
    p.source_ = std::move(source);
    p.target_ = std::move(target);
    p.origin_ = std::move(origin);
    return p;
}

const char* origin_name(ExampleOrigin o) {
    switch (o) {
        case ExampleOrigin::PostEdit: return "post_edit";
        case ExampleOrigin::Synthesized: return "synthesized";
        case ExampleOrigin::AnalogyContext: return "analogy_context";
    }
    return "unknown";
}

std::optional<ExampleOrigin> origin_from_name(std::string_view name) {
    if (name == "post_edit") return ExampleOrigin::PostEdit;
    if (name == "synthesized") return ExampleOrigin::Synthesized;
    if (name == "analogy_context") return ExampleOrigin::AnalogyContext;
    return std::nullopt;
}

Result<FinetuneExample> FinetuneExample::create(std::string source, std::string target,
                                                ExampleOrigin origin,
                                                std::vector<std::string> lineage) {
    if (source.empty() || target.empty())
        return invalid("FinetuneExample requires source and target");
    if (lineage.empty()) return invalid("FinetuneExample.lineage empty");
    FinetuneExample e;
    e.source_ = std::move(source);
    e.target_ = std::move(target);
    e.origin_ = origin;
    e.lineage_ = std::move(lineage);
    return e;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

namespace {

Result<std::string> field_str(const Json& j, const char* key) {
    if (!j.contains(key) || !j.at(key).is_string())
        return make_error(ErrorCode::ParseFailure, std::string("missing string field: ") + key);
    return j.at(key).get<std::string>();
}

Result<RecordId> field_id(const Json& j, const char* key) {
    if (!j.contains(key) || !j.at(key).is_number_integer())
        return make_error(ErrorCode::ParseFailure, std::string("missing integer field: ") + key);
    return j.at(key).get<RecordId>();
}

Result<int> field_int(const Json& j, const char* key) {
    if (!j.contains(key) || !j.at(key).is_number_integer())
        return make_error(ErrorCode::ParseFailure, std::string("missing integer field: ") + key);
    return j.at(key).get<int>();
}

}  // namespace

Json encode(const SourceSentence& v) {
    return Json{{"id", v.id()}, {"text", v.text()}, {"lang", v.lang()}};
}

Result<SourceSentence> decode_source_sentence(const Json& j) {
    auto id = field_id(j, "id");
    if (!id) return id.error();
    auto text = field_str(j, "text");
    if (!text) return text.error();
    auto lang = field_str(j, "lang");
    if (!lang) return lang.error();
    return SourceSentence::create(*id, *text, *lang);
}

Json encode(const TranslationRecord& v) {
    return Json{{"sentence_id", v.sentence_id()},
                {"source_text", v.source_text()},
                {"hypothesis", v.hypothesis()},
                {"producer", v.producer()}};
}

Result<TranslationRecord> decode_translation_record(const Json& j) {
    auto id = field_id(j, "sentence_id");
    if (!id) return id.error();
    auto src = field_str(j, "source_text");
    if (!src) return src.error();
    auto hyp = field_str(j, "hypothesis");
    if (!hyp) return hyp.error();
    auto producer = field_str(j, "producer");
    if (!producer) return producer.error();
    return TranslationRecord::create(*id, *src, *hyp, *producer);
}

Json encode(const ErrorSpan& v) {
    return Json{{"source_span", v.source_span()},
                {"explanation", v.explanation()},
                {"correction", v.correction()}};
}

Result<ErrorSpan> decode_error_span(const Json& j) {
    auto span = field_str(j, "source_span");
    if (!span) return span.error();
    auto expl = field_str(j, "explanation");
    if (!expl) return expl.error();
    auto corr = field_str(j, "correction");
    if (!corr) return corr.error();
    return ErrorSpan::create(*span, *expl, *corr);
}

Json encode(const Feedback& v) {
    Json errors = Json::array();
    for (const auto& e : v.errors()) errors.push_back(encode(e));
    return Json{{"verdict", verdict_name(v.verdict())},
                {"errors", std::move(errors)},
                {"post_edit", v.post_edit()}};
}

Result<Feedback> decode_feedback(const Json& j) {
    auto verdict_str = field_str(j, "verdict");
    if (!verdict_str) return verdict_str.error();
    auto verdict = verdict_from_name(*verdict_str);
    if (!verdict) return make_error(ErrorCode::ParseFailure, "bad verdict: " + *verdict_str);
    auto post_edit = field_str(j, "post_edit");
    if (!post_edit) return post_edit.error();
    if (!j.contains("errors") || !j.at("errors").is_array())
        return make_error(ErrorCode::ParseFailure, "missing errors array");
    std::vector<ErrorSpan> errors;
    for (const auto& e : j.at("errors")) {
        auto span = decode_error_span(e);
        if (!span) return span.error();
        errors.push_back(*span);
    }
    if (*verdict == Verdict::NoError) {
        if (!errors.empty())
            return make_error(ErrorCode::ParseFailure, "no_error verdict with spans");
        return Feedback::no_error(*post_edit);
    }
    return Feedback::with_errors(std::move(errors), *post_edit);
}

Json encode(const SentenceProfile& v) {
    return Json{{"domain", v.domain()}, {"topic", v.topic()}, {"style", v.style()}};
}

Result<SentenceProfile> decode_sentence_profile(const Json& j) {
    auto domain = field_str(j, "domain");
    if (!domain) return domain.error();
    auto topic = field_str(j, "topic");
    if (!topic) return topic.error();
    auto style = field_str(j, "style");
    if (!style) return style.error();
    return SentenceProfile::create(*domain, *topic, *style);
}

Json encode(const WordPair& v) {
    return Json{{"src", v.source_phrase()}, {"tgt", v.target_phrase()}};
}

Result<WordPair> decode_word_pair(const Json& j) {
    auto src = field_str(j, "src");
    if (!src) return src.error();
    auto tgt = field_str(j, "tgt");
    if (!tgt) return tgt.error();
    return WordPair::create(*src, *tgt);
}

Json encode(const BilingualWord& v) {
    return Json{{"source_word", v.source_word()},
                {"translation", v.translation()},
                {"aspect", aspect_name(v.aspect())}};
}

Result<BilingualWord> decode_bilingual_word(const Json& j) {
    auto src = field_str(j, "source_word");
    if (!src) return src.error();
    auto tgt = field_str(j, "translation");
    if (!tgt) return tgt.error();
    auto aspect_str = field_str(j, "aspect");
    if (!aspect_str) return aspect_str.error();
    auto aspect = aspect_from_name(*aspect_str);
    if (!aspect) return make_error(ErrorCode::ParseFailure, "bad aspect: " + *aspect_str);
    return BilingualWord::create(*src, *tgt, *aspect);
}

Json encode(const Analogy& v) {
    Json words = Json::array();
    for (const auto& w : v.words()) words.push_back(encode(w));
    return Json{{"seed", encode(v.seed())}, {"words", std::move(words)}};
}

Result<Analogy> decode_analogy(const Json& j) {
    if (!j.contains("seed")) return make_error(ErrorCode::ParseFailure, "missing seed");
    auto seed = decode_word_pair(j.at("seed"));
    if (!seed) return seed.error();
    if (!j.contains("words") || !j.at("words").is_array())
        return make_error(ErrorCode::ParseFailure, "missing words array");
    std::vector<BilingualWord> words;
    for (const auto& w : j.at("words")) {
        auto word = decode_bilingual_word(w);
        if (!word) return word.error();
        words.push_back(*word);
    }
    return Analogy::create(*seed, std::move(words));
}

namespace {

Json encode_origin(const PairOrigin& o) {
    Json j{{"record_id", o.record_id},
           {"span_index", o.span_index},
           {"candidate", o.candidate_index}};
    if (o.analog)
        j["analog"] = Json{{"word", o.analog->word}, {"aspect", aspect_name(o.analog->aspect)}};
    return j;
}

Result<PairOrigin> decode_origin(const Json& j) {
    PairOrigin o;
    auto rid = field_id(j, "record_id");
    if (!rid) return rid.error();
    o.record_id = *rid;
    auto span = field_int(j, "span_index");
    if (!span) return span.error();
    o.span_index = *span;
    auto cand = field_int(j, "candidate");
    if (!cand) return cand.error();
    o.candidate_index = *cand;
    if (j.contains("analog")) {
        auto word = field_str(j.at("analog"), "word");
        if (!word) return word.error();
        auto aspect_str = field_str(j.at("analog"), "aspect");
        if (!aspect_str) return aspect_str.error();
        auto aspect = aspect_from_name(*aspect_str);
        if (!aspect) return make_error(ErrorCode::ParseFailure, "bad aspect: " + *aspect_str);
        o.analog = AnalogRef{*word, *aspect};
    }
    return o;
}

}  // namespace

Json encode(const SyntheticPair& v) {
    return Json{{"source", v.source()},
                {"target", v.target()},
                {"word_pair", encode(v.word_pair())},
                {"profile", encode(v.profile())},
                {"origin", encode_origin(v.origin())}};
}

Result<SyntheticPair> decode_synthetic_pair(const Json& j) {
    auto source = field_str(j, "source");
    if (!source) return source.error();
    auto target = field_str(j, "target");
    if (!target) return target.error();
    if (!j.contains("word_pair") || !j.contains("profile") || !j.contains("origin"))
        return make_error(ErrorCode::ParseFailure, "missing word_pair/profile/origin");
    auto wp = decode_word_pair(j.at("word_pair"));
    if (!wp) return wp.error();
    auto profile = decode_sentence_profile(j.at("profile"));
    if (!profile) return profile.error();
    auto origin = decode_origin(j.at("origin"));
    if (!origin) return origin.error();
    return SyntheticPair::create(*source, *target, *wp, *profile, *origin);
}

Json encode(const FinetuneExample& v) {
    return Json{{"source", v.source()},
                {"target", v.target()},
                {"origin", origin_name(v.origin())},
                {"lineage", v.lineage()}};
}

Result<FinetuneExample> decode_finetune_example(const Json& j) {
    auto source = field_str(j, "source");
    if (!source) return source.error();
    auto target = field_str(j, "target");
    if (!target) return target.error();
    auto origin_str = field_str(j, "origin");
    if (!origin_str) return origin_str.error();
    auto origin = origin_from_name(*origin_str);
    if (!origin) return make_error(ErrorCode::ParseFailure, "bad origin: " + *origin_str);
    if (!j.contains("lineage") || !j.at("lineage").is_array())
        return make_error(ErrorCode::ParseFailure, "missing lineage array");
    std::vector<std::string> lineage;
    for (const auto& item : j.at("lineage")) {
        if (!item.is_string()) return make_error(ErrorCode::ParseFailure, "lineage entry not a string");
        lineage.push_back(item.get<std::string>());
    }
    return FinetuneExample::create(*source, *target, *origin, std::move(lineage));
}

}  // namespace mtpatcher::core
