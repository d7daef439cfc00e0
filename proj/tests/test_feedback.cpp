#include <doctest.h>

#include <random>
#include <string>
#include <vector>

#include "mtpatcher/feedback.hpp"
#include "support.hpp"

using namespace mtpatcher;
using testsupport::ScriptBuilder;
using testsupport::TempDir;

namespace {

const std::string kSource = "他是一个纸老虎，但他读了那本书。";
const std::string kHypothesis = "He is a paper lion, but he read that book.";

Result<core::Feedback> parse(const std::string& completion,
                             feedback::ParseIncidents* incidents = nullptr) {
    return feedback::parse_feedback(completion, kHypothesis, kSource, incidents);
}

core::TranslationRecord make_record(core::RecordId id, const std::string& source,
                                    const std::string& hypothesis) {
    auto r = core::TranslationRecord::create(id, source, hypothesis, "student_mt:base");
    REQUIRE(r.ok());
    return *r;
}

feedback::FeedbackContext make_context(gateway::Gateway& gw, const std::string& script) {
    auto tmpl = prompts::builtin_template("feedback");
    REQUIRE(tmpl.ok());
    return feedback::FeedbackContext{&gw, testsupport::mock_spec(script), *tmpl, "Chinese",
                                     "English"};
}

}  // namespace

TEST_SUITE("feedback_engine") {

TEST_CASE("a complete error block parses into a span and a post-edit") {
    auto fb = parse(
        "Overall, the translation is mostly fluent.\n"
        "Error 1: mistranslation\n"
        "Source segment: 纸老虎\n"
        "Translation segment: paper lion\n"
        "Reason: the idiom means a hollow threat\n"
        "Correction: paper tiger\n"
        "Good translation: He is a paper tiger, but he read that book.");
    REQUIRE(fb.ok());
    CHECK(fb->verdict() == core::Verdict::HasErrors);
    REQUIRE(fb->errors().size() == 1);
    CHECK(fb->errors()[0].source_span() == "纸老虎");
    CHECK(fb->errors()[0].correction() == "paper tiger");
    CHECK(fb->errors()[0].explanation() == "mistranslation the idiom means a hollow threat");
    CHECK(fb->post_edit() == "He is a paper tiger, but he read that book.");
}

TEST_CASE("well-formed completions across header and label variants") {
    struct Fixture {
        const char* name;
        std::string completion;
        std::size_t spans;
    };
    const std::string good = "Good translation: fixed output\n";
    std::vector<Fixture> fixtures{
        {"two blocks",
         "Error 1: sense\nSource segment: 纸老虎\nCorrection: paper tiger\n"
         "Error 2: omission\nSource segment: 那本书\nCorrection: that book\n" + good,
         2},
        {"bulleted header",
         "- Error 2: omission\nSource segment: 那本书\nCorrection: that book\n" + good, 1},
        {"lowercase header no number",
         "error: bad sense\nSource segment: 纸老虎\nCorrection: paper tiger\n" + good, 1},
        {"multi-digit header",
         "Error 12: sense\nSource segment: 纸老虎\nCorrection: paper tiger\n" + good, 1},
        {"glued number header",
         "Error1: sense\nSource segment: 纸老虎\nCorrection: paper tiger\n" + good, 1},
        {"missing header tolerated",
         "Source segment: 纸老虎\nReason: idiom\nCorrection: paper tiger\n" + good, 1},
        {"bulleted labels",
         "Error 1: x\n- Source segment: 纸老虎\n- Correction: paper tiger\n" + good, 1},
        {"label casing",
         "Error 1: x\nSOURCE SEGMENT: 纸老虎\ncorrection: paper tiger\n" + good, 1},
        {"correction continues on the next line",
         "Error 1: x\nSource segment: 纸老虎\nCorrection: paper\ntiger\n" + good, 1},
        {"reason missing entirely",
         "Error 1:\nSource segment: 纸老虎\nCorrection: paper tiger\n" + good, 1},
        {"crlf endings",
         "Error 1: x\r\nSource segment: 纸老虎\r\nCorrection: paper tiger\r\n" + good, 1},
        {"blank lines between fields",
         "Error 1: x\n\nSource segment: 纸老虎\n\nCorrection: paper tiger\n\n" + good, 1},
        {"prose between blocks ignored",
         "Error 1: x\nSource segment: 纸老虎\nCorrection: paper tiger\n"
         "Now on to the next problem.\n"
         "Error 2: y\nSource segment: 那本书\nCorrection: that book\n" + good,
         2},
        {"translation segment is accepted but optional",
         "Error 1: x\nSource segment: 纸老虎\nTranslation segment: paper lion\n"
         "Correction: paper tiger\n" + good,
         1},
        {"whole-sentence span",
         "Error 1: x\nSource segment: 他是一个纸老虎，但他读了那本书。\nCorrection: rewrite\n" +
             good,
         1},
    };
    for (const auto& fixture : fixtures) {
        CAPTURE(fixture.name);
        auto fb = parse(fixture.completion);
        REQUIRE(fb.ok());
        CHECK(fb->verdict() == core::Verdict::HasErrors);
        CHECK(fb->errors().size() == fixture.spans);
        CHECK_FALSE(fb->post_edit().empty());
    }
}

TEST_CASE("the no-error sentinel returns the hypothesis verbatim") {
    std::string spaced_hyp = "He  is a   paper tiger.";
    auto fb = feedback::parse_feedback("No error.", spaced_hyp, kSource);
    REQUIRE(fb.ok());
    CHECK(fb->verdict() == core::Verdict::NoError);
    CHECK(fb->errors().empty());
    CHECK(fb->post_edit() == spaced_hyp);

    for (const char* variant : {"  No error.  ", "The translation is accurate.\nNo error.",
                                "No error.\n\nNothing else to add."}) {
        CAPTURE(variant);
        auto v = parse(variant);
        REQUIRE(v.ok());
        CHECK(v->verdict() == core::Verdict::NoError);
        CHECK(v->post_edit() == kHypothesis);
    }
}

TEST_CASE("good translation may span several lines") {
    auto fb = parse(
        "Error 1: x\nSource segment: 纸老虎\nCorrection: paper tiger\n"
        "Good translation: He is a paper tiger,\nbut he read that book.");
    REQUIRE(fb.ok());
    CHECK(fb->post_edit() == "He is a paper tiger, but he read that book.");
}

TEST_CASE("spans absent from the source are dropped and recorded") {
    feedback::ParseIncidents incidents;
    auto fb = parse(
        "Error 1: invented\nSource segment: 海市蜃楼\nCorrection: mirage\n"
        "Error 2: real\nSource segment: 纸老虎\nCorrection: paper tiger\n"
        "Good translation: fixed",
        &incidents);
    REQUIRE(fb.ok());
    REQUIRE(fb->errors().size() == 1);
    CHECK(fb->errors()[0].source_span() == "纸老虎");
    REQUIRE(incidents.dropped_spans.size() == 1);
    CHECK(incidents.dropped_spans[0].find("海市蜃楼") != std::string::npos);
}

TEST_CASE("malformed completions fail with a typed parse error") {
    const std::string good = "Good translation: fixed output\n";
    std::vector<std::pair<const char*, std::string>> fixtures{
        {"empty", ""},
        {"prose only", "The translation reads smoothly and conveys the point."},
        {"sentinel plus block",
         "No error.\nError 1: x\nSource segment: 纸老虎\nCorrection: paper tiger\n" + good},
        {"block missing source segment", "Error 1: x\nCorrection: paper tiger\n" + good},
        {"block missing correction", "Error 1: x\nSource segment: 纸老虎\n" + good},
        {"empty source segment value", "Error 1: x\nSource segment:\nCorrection: c\n" + good},
        {"empty correction value", "Error 1: x\nSource segment: 纸老虎\nCorrection:\n" + good},
        {"no good translation", "Error 1: x\nSource segment: 纸老虎\nCorrection: paper tiger\n"},
        {"every span dropped",
         "Error 1: x\nSource segment: 海市蜃楼\nCorrection: mirage\n" + good},
        {"headerless prose with labels elsewhere", "Good translation: looks fine"},
        {"plural headers are not headers",
         "Errors: several\nSource segment without colon\n"},
        {"header missing colon", "Error 1\nSource segment: 纸老虎\nCorrection: c\n"},
        {"sentinel with plural", "No errors."},
        {"sentinel lowercase", "no error."},
        {"sentinel missing period", "No error"},
        {"json garbage", R"({"verdict": "ok", "score": 5})"},
        {"numbers only", "1 2 3 4 5"},
        {"unicode soup", "☃☃☃ ¯\\_(ツ)_/¯ 老虎"},
        {"markdown table", "| col | col |\n|-----|-----|\n| a | b |"},
        {"very long prose line", std::string(5000, 'x')},
    };
    for (const auto& [name, completion] : fixtures) {
        CAPTURE(name);
        auto fb = parse(completion);
        REQUIRE_FALSE(fb.ok());
        CHECK(fb.code() == ErrorCode::ParseFailure);
    }
}

TEST_CASE("random byte noise never crashes and always fails typed") {
    std::mt19937_64 rng(20240817);
    for (int trial = 0; trial < 2000; ++trial) {
        std::string noise;
        std::size_t len = rng() % 200;
        for (std::size_t i = 0; i < len; ++i) noise += static_cast<char>(rng() & 0xff);
        auto fb = parse(noise);
        if (!fb.ok()) CHECK(fb.code() == ErrorCode::ParseFailure);
    }
}

TEST_CASE("selection keeps exactly the erroneous records in order") {
    std::mt19937_64 rng(99);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<std::pair<core::TranslationRecord, core::Feedback>> input;
        std::vector<core::RecordId> expected_ids;
        std::size_t len = rng() % 30;
        for (std::size_t i = 0; i < len; ++i) {
            auto record = make_record(static_cast<core::RecordId>(i), "源", "hyp");
            if (rng() % 2 == 0) {
                auto span = core::ErrorSpan::create("源", "", "corr");
                REQUIRE(span.ok());
                auto fb = core::Feedback::with_errors({*span}, "edited");
                REQUIRE(fb.ok());
                input.emplace_back(record, *fb);
                expected_ids.push_back(record.sentence_id());
            } else {
                input.emplace_back(record, core::Feedback::no_error("hyp"));
            }
        }
        auto selected = feedback::select_erroneous(input);
        REQUIRE(selected.size() == expected_ids.size());
        for (std::size_t i = 0; i < selected.size(); ++i) {
            CHECK(selected[i].first.sentence_id() == expected_ids[i]);
            CHECK(selected[i].second.verdict() == core::Verdict::HasErrors);
        }
    }
}

TEST_CASE("request_feedback renders, completes and parses in one call") {
    TempDir dir;
    ScriptBuilder()
        .respond("He is a paper lion",
                 "Error 1: idiom\nSource segment: 纸老虎\nCorrection: paper tiger\n"
                 "Good translation: He is a paper tiger, but he read that book.")
        .save(dir.file("script.jsonl"));
    auto gw = testsupport::fast_gateway();
    auto ctx = make_context(gw, dir.file("script.jsonl"));

    auto fb = feedback::request_feedback(ctx, kSource, kHypothesis);
    REQUIRE(fb.ok());
    CHECK(fb->verdict() == core::Verdict::HasErrors);
    CHECK(fb->post_edit() == "He is a paper tiger, but he read that book.");

    auto missing = feedback::request_feedback(ctx, "未知句子", "unknown hypothesis");
    REQUIRE_FALSE(missing.ok());
    CHECK(missing.code() == ErrorCode::NoScriptMatch);
}

TEST_CASE("iteration keeps a record as soon as a round reports no error") {
    TempDir dir;
    ScriptBuilder().respond("He is a paper lion", "No error.").save(dir.file("script.jsonl"));
    auto gw = testsupport::fast_gateway();
    auto ctx = make_context(gw, dir.file("script.jsonl"));

    auto state = feedback::iterate_feedback(ctx, make_record(1, kSource, kHypothesis), 4);
    CHECK(state.status == feedback::IterationStatus::Kept);
    CHECK(state.epoch == 1);
    CHECK(state.corrected_spans.empty());
    CHECK(state.current_translation == kHypothesis);
}

TEST_CASE("iteration chains post-edits until the feedbacker is satisfied") {
    TempDir dir;
    ScriptBuilder()
        .respond("He is a paper lion",
                 "Error 1: idiom\nSource segment: 纸老虎\nCorrection: paper tiger\n"
                 "Good translation: He is a paper tiger, but he read that book.")
        .respond("He is a paper tiger", "No error.")
        .save(dir.file("script.jsonl"));
    auto gw = testsupport::fast_gateway();
    auto ctx = make_context(gw, dir.file("script.jsonl"));

    auto state = feedback::iterate_feedback(ctx, make_record(1, kSource, kHypothesis), 4);
    CHECK(state.status == feedback::IterationStatus::Kept);
    CHECK(state.epoch == 2);
    REQUIRE(state.corrected_spans.size() == 1);
    CHECK(state.corrected_spans[0].source_span() == "纸老虎");
    CHECK(state.current_translation == "He is a paper tiger, but he read that book.");
}

TEST_CASE("re-flagging an already corrected span discards the record") {
    TempDir dir;
    ScriptBuilder()
        .respond("He is a paper lion",
                 "Error 1: idiom\nSource segment: 纸老虎\nCorrection: paper tiger\n"
                 "Good translation: He is a paper tiger, but he read that book.")
        .respond("He is a paper tiger",
                 "Error 1: still wrong\nSource segment: 老虎\nCorrection: tiger\n"
                 "Good translation: He is a tiger, but he read that book.")
        .save(dir.file("script.jsonl"));
    auto gw = testsupport::fast_gateway();
    auto ctx = make_context(gw, dir.file("script.jsonl"));

    // 老虎 sits inside the already corrected 纸老虎 interval.
    auto state = feedback::iterate_feedback(ctx, make_record(1, kSource, kHypothesis), 4);
    CHECK(state.status == feedback::IterationStatus::Discarded);
    CHECK(state.discard_reason == "inconsistent_span");
    CHECK(state.epoch == 2);
}

TEST_CASE("unparseable and failed rounds discard with distinct reasons") {
    TempDir dir;
    ScriptBuilder()
        .respond("He is a paper lion", "I simply cannot decide today.")
        .save(dir.file("script.jsonl"));
    auto gw = testsupport::fast_gateway();
    auto ctx = make_context(gw, dir.file("script.jsonl"));

    auto garbled = feedback::iterate_feedback(ctx, make_record(1, kSource, kHypothesis), 4);
    CHECK(garbled.status == feedback::IterationStatus::Discarded);
    CHECK(garbled.discard_reason == "parse_failure");

    auto unmatched = feedback::iterate_feedback(
        ctx, make_record(2, "别的句子", "some other hypothesis"), 4);
    CHECK(unmatched.status == feedback::IterationStatus::Discarded);
    CHECK(unmatched.discard_reason == "NoScriptMatch");
}

TEST_CASE("exhausting the epoch budget without inconsistency keeps the record") {
    TempDir dir;
    ScriptBuilder()
        .respond("He is a paper lion",
                 "Error 1: idiom\nSource segment: 纸老虎\nCorrection: paper tiger\n"
                 "Good translation: He is a paper tiger, but he got that book.")
        .respond("he got that book",
                 "Error 1: verb\nSource segment: 那本书\nCorrection: that book\n"
                 "Good translation: He is a paper tiger, but he read that book.")
        .save(dir.file("script.jsonl"));
    auto gw = testsupport::fast_gateway();
    auto ctx = make_context(gw, dir.file("script.jsonl"));

    auto state = feedback::iterate_feedback(ctx, make_record(1, kSource, kHypothesis), 2);
    CHECK(state.status == feedback::IterationStatus::Kept);
    CHECK(state.epoch == 2);
    CHECK(state.corrected_spans.size() == 2);
    CHECK(state.current_translation == "He is a paper tiger, but he read that book.");
}

TEST_CASE("iteration status names are stable") {
    CHECK(feedback::iteration_status_name(feedback::IterationStatus::Kept) ==
          std::string("kept"));
    CHECK(feedback::iteration_status_name(feedback::IterationStatus::Discarded) ==
          std::string("discarded"));
    CHECK(feedback::iteration_status_name(feedback::IterationStatus::InProgress) ==
          std::string("in_progress"));
}

}  // TEST_SUITE
