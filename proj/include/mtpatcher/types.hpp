#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "mtpatcher/result.hpp"

namespace mtpatcher::core {

using Json = nlohmann::json;
using RecordId = std::int64_t;

/// Text normalization applied before every substring check.
/// NFC composition, whitespace runs collapsed, ends trimmed.
std::string normalize_text(std::string_view raw);

// ---------------------------------------------------------------------------
// Corpus records
// ---------------------------------------------------------------------------

class SourceSentence {
public:
    static Result<SourceSentence> create(RecordId id, std::string text, std::string lang);

    RecordId id() const { return id_; }
    const std::string& text() const { return text_; }
    const std::string& lang() const { return lang_; }

    bool operator==(const SourceSentence&) const = default;

private:
    SourceSentence() = default;
    RecordId id_ = 0;
    std::string text_;
    std::string lang_;
};

class TranslationRecord {
public:
    static Result<TranslationRecord> create(RecordId sentence_id, std::string source_text,
                                            std::string hypothesis, std::string producer);

    RecordId sentence_id() const { return sentence_id_; }
    const std::string& source_text() const { return source_text_; }
    const std::string& hypothesis() const { return hypothesis_; }
    const std::string& producer() const { return producer_; }

    bool operator==(const TranslationRecord&) const = default;

private:
    TranslationRecord() = default;
    RecordId sentence_id_ = 0;
    std::string source_text_;
    std::string hypothesis_;
    std::string producer_;
};

// ---------------------------------------------------------------------------
// Feedback
// ---------------------------------------------------------------------------

/// One identified error: the verbatim source substring, why it is wrong,
/// and the corrected target phrase. Offsets are recomputed on demand from
/// the stored text rather than persisted.
class ErrorSpan {
public:
    static Result<ErrorSpan> create(std::string source_span, std::string explanation,
                                    std::string correction);

    const std::string& source_span() const { return source_span_; }
    const std::string& explanation() const { return explanation_; }
    const std::string& correction() const { return correction_; }

    bool operator==(const ErrorSpan&) const = default;

private:
    ErrorSpan() = default;
    std::string source_span_;
    std::string explanation_;
    std::string correction_;
};

enum class Verdict { NoError, HasErrors };

const char* verdict_name(Verdict v);
std::optional<Verdict> verdict_from_name(std::string_view name);

class Feedback {
public:
    /// NoError feedback; post_edit is the unchanged hypothesis, verbatim.
    static Feedback no_error(std::string hypothesis);

    /// HasErrors feedback; requires at least one span and a non-empty post-edit.
    static Result<Feedback> with_errors(std::vector<ErrorSpan> errors, std::string post_edit);

    Verdict verdict() const { return verdict_; }
    const std::vector<ErrorSpan>& errors() const { return errors_; }
    const std::string& post_edit() const { return post_edit_; }

    bool operator==(const Feedback&) const = default;

private:
    Feedback() = default;
    Verdict verdict_ = Verdict::NoError;
    std::vector<ErrorSpan> errors_;
    std::string post_edit_;
};

// ---------------------------------------------------------------------------
// Knowledge extension
// ---------------------------------------------------------------------------

class SentenceProfile {
public:
    static Result<SentenceProfile> create(std::string domain, std::string topic,
                                          std::string style);

    const std::string& domain() const { return domain_; }
    const std::string& topic() const { return topic_; }
    const std::string& style() const { return style_; }

    bool operator==(const SentenceProfile&) const = default;

private:
    SentenceProfile() = default;
    std::string domain_;
    std::string topic_;
    std::string style_;
};

/// An (error source phrase, corrected target phrase) pair. Both sides are
/// trimmed at construction; empty sides are rejected.
class WordPair {
public:
    static Result<WordPair> create(std::string source_phrase, std::string target_phrase);

    const std::string& source_phrase() const { return source_phrase_; }
    const std::string& target_phrase() const { return target_phrase_; }

    bool operator==(const WordPair&) const = default;

private:
    WordPair() = default;
    std::string source_phrase_;
    std::string target_phrase_;
};

enum class Aspect { Category, Semantic };

const char* aspect_name(Aspect a);
std::optional<Aspect> aspect_from_name(std::string_view name);

class BilingualWord {
public:
    static Result<BilingualWord> create(std::string source_word, std::string translation,
                                        Aspect aspect);

    const std::string& source_word() const { return source_word_; }
    const std::string& translation() const { return translation_; }
    Aspect aspect() const { return aspect_; }

    bool operator==(const BilingualWord&) const = default;

private:
    BilingualWord() = default;
    std::string source_word_;
    std::string translation_;
    Aspect aspect_ = Aspect::Category;
};

class Analogy {
public:
    /// Rejects any analog whose source word equals the seed phrase
    /// (normalized comparison).
    static Result<Analogy> create(WordPair seed, std::vector<BilingualWord> words);

    const WordPair& seed() const { return seed_; }
    const std::vector<BilingualWord>& words() const { return words_; }
    std::vector<BilingualWord> words_for(Aspect aspect) const;

    bool operator==(const Analogy&) const = default;

private:
    explicit Analogy(WordPair seed) : seed_(std::move(seed)) {}
    WordPair seed_;
    std::vector<BilingualWord> words_;
};

/// Provenance of one synthetic pair: the translation record and error span
/// it traces to, an optional analogous word, and the candidate index among
/// the generations requested for that slot.
struct AnalogRef {
    std::string word;
    Aspect aspect = Aspect::Category;

    bool operator==(const AnalogRef&) const = default;
};

struct PairOrigin {
    RecordId record_id = 0;
    int span_index = 0;
    std::optional<AnalogRef> analog;
    int candidate_index = 0;

    bool operator==(const PairOrigin&) const = default;
};

class SyntheticPair {
public:
    /// Validates both containment invariants: the source sentence must
    /// contain the source phrase (normalized, case-sensitive) and the target
    /// sentence must contain the target phrase (normalized, case-folded).
    static Result<SyntheticPair> create(std::string source, std::string target,
                                        WordPair word_pair, SentenceProfile profile,
                                        PairOrigin origin);

    const std::string& source() const { return source_; }
    const std::string& target() const { return target_; }
    const WordPair& word_pair() const { return word_pair_; }
    const SentenceProfile& profile() const { return profile_; }
    const PairOrigin& origin() const { return origin_; }

    bool operator==(const SyntheticPair&) const = default;

private:
    SyntheticPair(WordPair wp, SentenceProfile profile)
        : word_pair_(std::move(wp)), profile_(std::move(profile)) {}
    std::string source_;
    std::string target_;
    WordPair word_pair_;
    SentenceProfile profile_;
    PairOrigin origin_;
};

// ---------------------------------------------------------------------------
// Fine-tuning corpus
// ---------------------------------------------------------------------------

enum class ExampleOrigin { PostEdit, Synthesized, AnalogyContext };

const char* origin_name(ExampleOrigin o);
std::optional<ExampleOrigin> origin_from_name(std::string_view name);

class FinetuneExample {
public:
    static Result<FinetuneExample> create(std::string source, std::string target,
                                          ExampleOrigin origin,
                                          std::vector<std::string> lineage);

    const std::string& source() const { return source_; }
    const std::string& target() const { return target_; }
    ExampleOrigin origin() const { return origin_; }
    const std::vector<std::string>& lineage() const { return lineage_; }

    bool operator==(const FinetuneExample&) const = default;

private:
    FinetuneExample() = default;
    std::string source_;
    std::string target_;
    ExampleOrigin origin_ = ExampleOrigin::PostEdit;
    std::vector<std::string> lineage_;
};

// ---------------------------------------------------------------------------
// Flat key-value serialization (JSONL record schemas)
// ---------------------------------------------------------------------------

Json encode(const SourceSentence& v);
Json encode(const TranslationRecord& v);
Json encode(const ErrorSpan& v);
Json encode(const Feedback& v);
Json encode(const SentenceProfile& v);
Json encode(const WordPair& v);
Json encode(const BilingualWord& v);
Json encode(const Analogy& v);
Json encode(const SyntheticPair& v);
Json encode(const FinetuneExample& v);

Result<SourceSentence> decode_source_sentence(const Json& j);
Result<TranslationRecord> decode_translation_record(const Json& j);
Result<ErrorSpan> decode_error_span(const Json& j);
Result<Feedback> decode_feedback(const Json& j);
Result<SentenceProfile> decode_sentence_profile(const Json& j);
Result<WordPair> decode_word_pair(const Json& j);
Result<BilingualWord> decode_bilingual_word(const Json& j);
Result<Analogy> decode_analogy(const Json& j);
Result<SyntheticPair> decode_synthetic_pair(const Json& j);
Result<FinetuneExample> decode_finetune_example(const Json& j);

}  // namespace mtpatcher::core
