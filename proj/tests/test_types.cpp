#include <doctest.h>

#include <nlohmann/json.hpp>

#include "mtpatcher/types.hpp"

using namespace mtpatcher;
using core::Json;

namespace {

core::ErrorSpan make_span(const std::string& span, const std::string& corr) {
    auto made = core::ErrorSpan::create(span, "wrong sense", corr);
    REQUIRE(made.ok());
    return *made;
}

core::SyntheticPair make_pair() {
    auto wp = core::WordPair::create("纸老虎", "paper tiger");
    REQUIRE(wp.ok());
    auto profile = core::SentenceProfile::create("news", "politics", "formal");
    REQUIRE(profile.ok());
    core::PairOrigin origin{42, 1, core::AnalogRef{"铁老虎", core::Aspect::Semantic}, 3};
    auto pair = core::SyntheticPair::create("他是纸老虎吗", "Is he a Paper Tiger?", *wp,
                                            *profile, origin);
    REQUIRE(pair.ok());
    return *pair;
}

}  // namespace

TEST_SUITE("core_model") {

TEST_CASE("source sentences reject blank text and empty lang") {
    CHECK(core::SourceSentence::create(1, "他是纸老虎", "Chinese").ok());
    CHECK(core::SourceSentence::create(1, "   \t ", "Chinese").code() ==
          ErrorCode::InvalidArgument);
    CHECK(core::SourceSentence::create(1, "text", "").code() == ErrorCode::InvalidArgument);
}

TEST_CASE("translation records require source and hypothesis") {
    CHECK(core::TranslationRecord::create(1, "src", "hyp", "mt:base").ok());
    CHECK(core::TranslationRecord::create(1, "", "hyp", "p").code() ==
          ErrorCode::InvalidArgument);
    CHECK(core::TranslationRecord::create(1, "src", "", "p").code() ==
          ErrorCode::InvalidArgument);
}

TEST_CASE("error spans require span and correction but not explanation") {
    CHECK(core::ErrorSpan::create("纸老虎", "", "paper tiger").ok());
    CHECK(core::ErrorSpan::create("", "why", "corr").code() == ErrorCode::InvalidArgument);
    CHECK(core::ErrorSpan::create("span", "why", "").code() == ErrorCode::InvalidArgument);
}

TEST_CASE("no_error feedback carries the hypothesis as its post-edit verbatim") {
    auto fb = core::Feedback::no_error("He is a paper tiger.");
    CHECK(fb.verdict() == core::Verdict::NoError);
    CHECK(fb.errors().empty());
    CHECK(fb.post_edit() == "He is a paper tiger.");
}

TEST_CASE("with_errors requires at least one span and a post-edit") {
    std::vector<core::ErrorSpan> spans{make_span("纸老虎", "paper tiger")};
    auto good = core::Feedback::with_errors(spans, "He is a paper tiger.");
    REQUIRE(good.ok());
    CHECK(good->verdict() == core::Verdict::HasErrors);
    CHECK(good->errors().size() == 1);

    CHECK(core::Feedback::with_errors({}, "pe").code() == ErrorCode::InvalidArgument);
    CHECK(core::Feedback::with_errors(spans, "").code() == ErrorCode::InvalidArgument);
}

TEST_CASE("word pairs trim both phrases and reject blanks") {
    auto wp = core::WordPair::create("  纸老虎 ", " paper tiger\t");
    REQUIRE(wp.ok());
    CHECK(wp->source_phrase() == "纸老虎");
    CHECK(wp->target_phrase() == "paper tiger");
    CHECK(core::WordPair::create("  ", "x").code() == ErrorCode::InvalidArgument);
}

TEST_CASE("analogies refuse words equal to the seed after normalization") {
    auto seed = core::WordPair::create("纸老虎", "paper tiger");
    REQUIRE(seed.ok());
    auto same = core::BilingualWord::create("  纸老虎 ", "paper tiger", core::Aspect::Category);
    REQUIRE(same.ok());
    CHECK(core::Analogy::create(*seed, {*same}).code() == ErrorCode::InvalidArgument);

    auto other = core::BilingualWord::create("铁老虎", "iron tiger", core::Aspect::Semantic);
    REQUIRE(other.ok());
    auto analogy = core::Analogy::create(*seed, {*other});
    REQUIRE(analogy.ok());
    CHECK(analogy->words_for(core::Aspect::Semantic).size() == 1);
    CHECK(analogy->words_for(core::Aspect::Category).empty());
}

TEST_CASE("synthetic pairs enforce containment of the word pair") {
    auto wp = core::WordPair::create("纸老虎", "paper tiger");
    REQUIRE(wp.ok());
    auto profile = core::SentenceProfile::create("news", "politics", "formal");
    REQUIRE(profile.ok());
    core::PairOrigin origin{1, 0, std::nullopt, 0};

    // Target matching is case-insensitive, source matching is not.
    CHECK(core::SyntheticPair::create("他是纸老虎", "A Paper Tiger indeed", *wp, *profile, origin)
              .ok());
    CHECK(core::SyntheticPair::create("他是老虎", "a paper tiger", *wp, *profile, origin)
              .code() == ErrorCode::InvalidArgument);
    CHECK(core::SyntheticPair::create("他是纸老虎", "an iron tiger", *wp, *profile, origin)
              .code() == ErrorCode::InvalidArgument);
}

TEST_CASE("finetune examples require lineage") {
    CHECK(core::FinetuneExample::create("s", "t", core::ExampleOrigin::PostEdit, {"record:1"})
              .ok());
    CHECK(core::FinetuneExample::create("s", "t", core::ExampleOrigin::PostEdit, {}).code() ==
          ErrorCode::InvalidArgument);
}

TEST_CASE("name tables round-trip") {
    CHECK(core::verdict_name(core::Verdict::NoError) == std::string("no_error"));
    CHECK(core::verdict_from_name("has_errors") == core::Verdict::HasErrors);
    CHECK_FALSE(core::verdict_from_name("HasErrors").has_value());

    CHECK(core::aspect_name(core::Aspect::Semantic) == std::string("semantic"));
    CHECK(core::aspect_from_name("category") == core::Aspect::Category);

    CHECK(core::origin_name(core::ExampleOrigin::AnalogyContext) ==
          std::string("analogy_context"));
    CHECK(core::origin_from_name("synthesized") == core::ExampleOrigin::Synthesized);
    CHECK_FALSE(core::origin_from_name("") .has_value());
}

TEST_CASE("source sentence json round-trip") {
    auto s = core::SourceSentence::create(7, "他是纸老虎", "Chinese");
    REQUIRE(s.ok());
    auto back = core::decode_source_sentence(core::encode(*s));
    REQUIRE(back.ok());
    CHECK(*back == *s);
}

TEST_CASE("translation record json round-trip") {
    auto r = core::TranslationRecord::create(3, "src", "hyp", "student_mt:base");
    REQUIRE(r.ok());
    auto back = core::decode_translation_record(core::encode(*r));
    REQUIRE(back.ok());
    CHECK(*back == *r);
}

TEST_CASE("feedback json round-trip keeps both verdicts") {
    auto no_err = core::Feedback::no_error("fine output");
    auto back1 = core::decode_feedback(core::encode(no_err));
    REQUIRE(back1.ok());
    CHECK(back1->verdict() == core::Verdict::NoError);
    CHECK(back1->post_edit() == "fine output");

    auto with = core::Feedback::with_errors({make_span("纸老虎", "paper tiger")},
                                            "He is a paper tiger.");
    REQUIRE(with.ok());
    auto back2 = core::decode_feedback(core::encode(*with));
    REQUIRE(back2.ok());
    CHECK(back2->verdict() == core::Verdict::HasErrors);
    REQUIRE(back2->errors().size() == 1);
    CHECK(back2->errors()[0].source_span() == "纸老虎");
    CHECK(back2->errors()[0].correction() == "paper tiger");
}

TEST_CASE("profile, word pair and bilingual word round-trips") {
    auto p = core::SentenceProfile::create("news", "economy", "neutral");
    REQUIRE(p.ok());
    auto p2 = core::decode_sentence_profile(core::encode(*p));
    REQUIRE(p2.ok());
    CHECK(*p2 == *p);

    auto wp = core::WordPair::create("铁老虎", "iron tiger");
    REQUIRE(wp.ok());
    auto wp2 = core::decode_word_pair(core::encode(*wp));
    REQUIRE(wp2.ok());
    CHECK(*wp2 == *wp);

    auto bw = core::BilingualWord::create("老虎", "tiger", core::Aspect::Category);
    REQUIRE(bw.ok());
    auto bw2 = core::decode_bilingual_word(core::encode(*bw));
    REQUIRE(bw2.ok());
    CHECK(*bw2 == *bw);
}

TEST_CASE("analogy json round-trip") {
    auto seed = core::WordPair::create("纸老虎", "paper tiger");
    REQUIRE(seed.ok());
    auto w1 = core::BilingualWord::create("铁老虎", "iron tiger", core::Aspect::Category);
    auto w2 = core::BilingualWord::create("稻草人", "scarecrow", core::Aspect::Semantic);
    REQUIRE(w1.ok());
    REQUIRE(w2.ok());
    auto a = core::Analogy::create(*seed, {*w1, *w2});
    REQUIRE(a.ok());
    auto back = core::decode_analogy(core::encode(*a));
    REQUIRE(back.ok());
    CHECK(back->seed() == a->seed());
    REQUIRE(back->words().size() == 2);
    CHECK(back->words()[1].aspect() == core::Aspect::Semantic);
}

TEST_CASE("synthetic pair json round-trip keeps the analog origin") {
    auto pair = make_pair();
    auto back = core::decode_synthetic_pair(core::encode(pair));
    REQUIRE(back.ok());
    CHECK(back->source() == pair.source());
    CHECK(back->target() == pair.target());
    CHECK(back->origin().record_id == 42);
    CHECK(back->origin().span_index == 1);
    CHECK(back->origin().candidate_index == 3);
    REQUIRE(back->origin().analog.has_value());
    CHECK(back->origin().analog->word == "铁老虎");
    CHECK(back->origin().analog->aspect == core::Aspect::Semantic);
}

TEST_CASE("finetune example json round-trip") {
    auto e = core::FinetuneExample::create("src", "tgt", core::ExampleOrigin::Synthesized,
                                           {"record:42", "span:1", "candidate:0"});
    REQUIRE(e.ok());
    auto back = core::decode_finetune_example(core::encode(*e));
    REQUIRE(back.ok());
    CHECK(back->source() == "src");
    CHECK(back->origin() == core::ExampleOrigin::Synthesized);
    REQUIRE(back->lineage().size() == 3);
    CHECK(back->lineage()[0] == "record:42");
}

TEST_CASE("decoders reject missing and mistyped fields") {
    CHECK(core::decode_source_sentence(Json{{"id", "one"}, {"text", "t"}, {"lang", "l"}})
              .code() == ErrorCode::ParseFailure);
    CHECK(core::decode_translation_record(Json{{"sentence_id", 1}}).code() ==
          ErrorCode::ParseFailure);
    CHECK(core::decode_feedback(Json{{"verdict", "maybe"}, {"post_edit", "x"}}).code() ==
          ErrorCode::ParseFailure);
    CHECK(core::decode_word_pair(Json::array()).code() == ErrorCode::ParseFailure);
    CHECK(core::decode_finetune_example(Json{{"source", "s"},
                                             {"target", "t"},
                                             {"origin", "mystery"},
                                             {"lineage", Json::array({"record:1"})}})
              .code() == ErrorCode::ParseFailure);
}

}  // TEST_SUITE
