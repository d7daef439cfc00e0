#include <doctest.h>

#include <string>
#include <vector>

#include "mtpatcher/extension.hpp"
#include "support.hpp"

using namespace mtpatcher;
using testsupport::ScriptBuilder;
using testsupport::TempDir;

namespace {

core::WordPair make_pair(const std::string& src, const std::string& tgt) {
    auto wp = core::WordPair::create(src, tgt);
    REQUIRE(wp.ok());
    return *wp;
}

core::SentenceProfile make_profile() {
    auto p = core::SentenceProfile::create("news", "politics", "formal");
    REQUIRE(p.ok());
    return *p;
}

extension::ExtensionContext make_context(gateway::Gateway& gw, const std::string& script) {
    auto analysis = prompts::builtin_template("sentence_analysis");
    auto synthesis = prompts::builtin_template("parallel_synthesis");
    auto analogy = prompts::builtin_template("word_analogy");
    REQUIRE(analysis.ok());
    REQUIRE(synthesis.ok());
    REQUIRE(analogy.ok());
    return extension::ExtensionContext{&gw,       testsupport::mock_spec(script),
                                       "Chinese", "English",
                                       *analysis, *synthesis,
                                       *analogy};
}

const char* kValidAnalysis = "Domain: news\nTopic: politics\nStyle: formal";

}  // namespace

TEST_SUITE("knowledge_extension") {

TEST_CASE("profile parsing takes the first value per label") {
    auto p = extension::parse_profile(
        "Domain: news\nTopic: politics\nStyle: formal\nDomain: ignored second");
    REQUIRE(p.ok());
    CHECK(p->domain() == "news");
    CHECK(p->topic() == "politics");
    CHECK(p->style() == "formal");

    CHECK(extension::parse_profile("Domain: news\nTopic: politics").code() ==
          ErrorCode::ParseFailure);
    CHECK(extension::parse_profile("totally free-form reply").code() == ErrorCode::ParseFailure);
    CHECK(extension::parse_profile("").code() == ErrorCode::ParseFailure);
}

TEST_CASE("pair parsing needs both Source and Target lines") {
    auto pair = extension::parse_pair_lines(
        "Here you go.\nSource: 他是纸老虎\nTarget: He is a paper tiger.");
    REQUIRE(pair.ok());
    CHECK(pair->first == "他是纸老虎");
    CHECK(pair->second == "He is a paper tiger.");

    CHECK(extension::parse_pair_lines("Source: only half").code() == ErrorCode::ParseFailure);
    CHECK(extension::parse_pair_lines("Target: only half").code() == ErrorCode::ParseFailure);
    CHECK(extension::parse_pair_lines("nothing labeled").code() == ErrorCode::ParseFailure);
}

TEST_CASE("source-line parsing skips empty values") {
    auto s = extension::parse_source_line("Source:\nSource: 第二行有内容");
    REQUIRE(s.ok());
    CHECK(*s == "第二行有内容");
    CHECK(extension::parse_source_line("no labels at all").code() == ErrorCode::ParseFailure);
}

TEST_CASE("analogy parsing reads both aspect sections with list decoration") {
    auto seed = make_pair("纸老虎", "paper tiger");
    auto analogy = extension::parse_analogy(
        "Category: 稻草人 -> scarecrow\n"
        "2) 空架子 → empty shell\n"
        "Semantics:\n"
        "- 外强中干 -> outwardly strong but inwardly weak\n"
        "1. 虚张声势 -> bluffing\n",
        seed, 2);
    REQUIRE(analogy.ok());
    auto category = analogy->words_for(core::Aspect::Category);
    auto semantic = analogy->words_for(core::Aspect::Semantic);
    REQUIRE(category.size() == 2);
    CHECK(category[0].source_word() == "稻草人");
    CHECK(category[0].translation() == "scarecrow");
    CHECK(category[1].source_word() == "空架子");
    REQUIRE(semantic.size() == 2);
    CHECK(semantic[0].source_word() == "外强中干");
    CHECK(semantic[1].source_word() == "虚张声势");
}

TEST_CASE("analogy parsing truncates to the per-aspect budget") {
    auto seed = make_pair("纸老虎", "paper tiger");
    auto analogy = extension::parse_analogy(
        "Category:\n1. 一 -> one\n2. 二 -> two\n3. 三 -> three", seed, 2);
    REQUIRE(analogy.ok());
    auto words = analogy->words_for(core::Aspect::Category);
    REQUIRE(words.size() == 2);
    CHECK(words[0].source_word() == "一");
    CHECK(words[1].source_word() == "二");
}

TEST_CASE("analogy parsing filters the seed and ignores pre-header lines") {
    auto seed = make_pair("纸老虎", "paper tiger");
    auto analogy = extension::parse_analogy(
        "纸老虎 -> stray line before any header\n"
        "Category:\n1. 纸老虎 -> paper tiger\n2. 稻草人 -> scarecrow",
        seed, 1);
    REQUIRE(analogy.ok());
    auto words = analogy->words_for(core::Aspect::Category);
    REQUIRE(words.size() == 1);
    CHECK(words[0].source_word() == "稻草人");
}

TEST_CASE("analogy parsing distinguishes missing headers from empty lists") {
    auto seed = make_pair("纸老虎", "paper tiger");
    CHECK(extension::parse_analogy("1. 稻草人 -> scarecrow", seed, 2).code() ==
          ErrorCode::ParseFailure);
    CHECK(extension::parse_analogy("Category:\nno arrows here\nSemantics:\nnor here", seed, 2)
              .code() == ErrorCode::EmptyAnalogy);
    CHECK(extension::parse_analogy("Category:\n1. 纸老虎 -> paper tiger", seed, 2).code() ==
          ErrorCode::EmptyAnalogy);
}

TEST_CASE("variant and retry markers are appended deterministically") {
    CHECK(extension::with_markers("base", 0, 0) == "base");
    CHECK(extension::with_markers("base", 1, 0) == "base\n(variant 2)");
    CHECK(extension::with_markers("base", 0, 2) == "base\n(retry 2)");
    CHECK(extension::with_markers("base", 3, 1) == "base\n(variant 4)\n(retry 1)");
}

TEST_CASE("analysis retries garbage replies up to the regeneration budget") {
    TempDir dir;
    ScriptBuilder()
        .respond_all({"point out its topic", "(retry 2)"}, kValidAnalysis)
        .respond("point out its topic", "no labels whatsoever")
        .save(dir.file("script.jsonl"));
    auto gw = testsupport::fast_gateway();
    auto ctx = make_context(gw, dir.file("script.jsonl"));
    extension::ExtensionConfig cfg;
    cfg.max_regen_attempts = 2;

    extension::ExtensionMetrics metrics;
    auto profile = extension::analyze_sentence(ctx, std::string("他是纸老虎"), cfg, &metrics);
    REQUIRE(profile.ok());
    CHECK(profile->topic() == "politics");
    CHECK(metrics.profile_requests == 3);

    extension::ExtensionMetrics exhausted;
    cfg.max_regen_attempts = 1;  // retry 2 never reached, every reply is garbage
    auto failed = extension::analyze_sentence(ctx, std::string("他是纸老虎"), cfg, &exhausted);
    REQUIRE_FALSE(failed.ok());
    CHECK(failed.code() == ErrorCode::ParseFailure);
    CHECK(exhausted.profile_requests == 2);
}

TEST_CASE("synthesis keeps only pairs that contain the word pair") {
    TempDir dir;
    ScriptBuilder()
        .respond_all({"纸老虎 -> paper tiger", "(variant 2)"},
                     "Source: 纸老虎不可怕\nTarget: A paper tiger is not scary.")
        .respond("纸老虎 -> paper tiger",
                 "Source: 他是纸老虎\nTarget: He is a paper tiger.")
        .save(dir.file("script.jsonl"));
    auto gw = testsupport::fast_gateway();
    auto ctx = make_context(gw, dir.file("script.jsonl"));
    extension::ExtensionConfig cfg;
    cfg.pairs_per_word = 2;

    extension::ExtensionMetrics metrics;
    core::PairOrigin origin{7, 0, std::nullopt, 0};
    auto pairs = extension::synthesize_pairs(ctx, make_profile(),
                                             make_pair("纸老虎", "paper tiger"), cfg, origin,
                                             &metrics);
    REQUIRE(pairs.size() == 2);
    CHECK(pairs[0].source() == "他是纸老虎");
    CHECK(pairs[1].source() == "纸老虎不可怕");
    CHECK(pairs[0].origin().candidate_index == 0);
    CHECK(pairs[1].origin().candidate_index == 1);
    CHECK(pairs[0].origin().record_id == 7);
    CHECK(metrics.generation_requests == 2);
    CHECK(metrics.invalid_candidates == 0);
    CHECK(metrics.shortfall == 0);
}

TEST_CASE("invalid synthesis candidates are retried and counted") {
    TempDir dir;
    // Attempt 0 omits the source word; the first retry is valid.
    ScriptBuilder()
        .respond_all({"纸老虎 -> paper tiger", "(retry 1)"},
                     "Source: 他是纸老虎\nTarget: He is a paper tiger.")
        .respond("纸老虎 -> paper tiger", "Source: 他是老虎\nTarget: He is a paper tiger.")
        .save(dir.file("script.jsonl"));
    auto gw = testsupport::fast_gateway();
    auto ctx = make_context(gw, dir.file("script.jsonl"));
    extension::ExtensionConfig cfg;
    cfg.pairs_per_word = 1;
    cfg.max_regen_attempts = 2;

    extension::ExtensionMetrics metrics;
    core::PairOrigin origin{1, 0, std::nullopt, 0};
    auto pairs = extension::synthesize_pairs(ctx, make_profile(),
                                             make_pair("纸老虎", "paper tiger"), cfg, origin,
                                             &metrics);
    REQUIRE(pairs.size() == 1);
    CHECK(pairs[0].source() == "他是纸老虎");
    CHECK(metrics.generation_requests == 2);
    CHECK(metrics.invalid_candidates == 1);
    CHECK(metrics.shortfall == 0);
}

TEST_CASE("candidates that stay invalid become shortfall, never output") {
    TempDir dir;
    ScriptBuilder()
        .respond("纸老虎 -> paper tiger", "Source: 他是老虎\nTarget: missing the phrase")
        .save(dir.file("script.jsonl"));
    auto gw = testsupport::fast_gateway();
    auto ctx = make_context(gw, dir.file("script.jsonl"));
    extension::ExtensionConfig cfg;
    cfg.pairs_per_word = 2;
    cfg.max_regen_attempts = 1;

    extension::ExtensionMetrics metrics;
    core::PairOrigin origin{1, 0, std::nullopt, 0};
    auto pairs = extension::synthesize_pairs(ctx, make_profile(),
                                             make_pair("纸老虎", "paper tiger"), cfg, origin,
                                             &metrics);
    CHECK(pairs.empty());
    CHECK(metrics.shortfall == 2);
    CHECK(metrics.invalid_candidates == 4);  // 2 candidates x 2 attempts
    CHECK(metrics.generation_requests == 4);
}

TEST_CASE("analogize retries parse failures but not empty analogies") {
    TempDir dir;
    ScriptBuilder()
        .respond_all({"associative ability", "P: 纸老虎", "(retry 1)"},
                     "Category:\n1. 稻草人 -> scarecrow\nSemantics:\n1. 空架子 -> empty shell")
        .respond_all({"associative ability", "P: 纸老虎"}, "no sections at all")
        .respond_all({"associative ability", "P: 铁饭碗"},
                     "Category:\n1. 铁饭碗 -> iron rice bowl\nSemantics:\nnothing usable")
        .save(dir.file("script.jsonl"));
    auto gw = testsupport::fast_gateway();
    auto ctx = make_context(gw, dir.file("script.jsonl"));
    extension::ExtensionConfig cfg;
    cfg.max_regen_attempts = 2;
    cfg.words_per_aspect = 1;

    extension::ExtensionMetrics retried;
    auto analogy = extension::analogize(ctx, "他是纸老虎", make_pair("纸老虎", "paper tiger"),
                                        cfg, &retried);
    REQUIRE(analogy.ok());
    CHECK(analogy->words().size() == 2);
    CHECK(retried.analogy_requests == 2);

    // The seed-only list empties after filtering; that is terminal, not retried.
    extension::ExtensionMetrics empty;
    auto hollow = extension::analogize(ctx, "铁饭碗很稳",
                                       make_pair("铁饭碗", "iron rice bowl"), cfg, &empty);
    REQUIRE_FALSE(hollow.ok());
    CHECK(hollow.code() == ErrorCode::EmptyAnalogy);
    CHECK(empty.analogy_requests == 1);
}

TEST_CASE("extension over selected records multiplies seeds and analog words") {
    TempDir dir;
    ScriptBuilder()
        .respond("point out its topic", kValidAnalysis)
        .respond_all({"associative ability", "P: 纸老虎"},
                     "Category:\n1. 稻草人 -> scarecrow\nSemantics:\n1. 空架子 -> empty shell")
        .respond_all({"associative ability", "P: 铁饭碗"},
                     "Category:\n1. 金饭碗 -> golden rice bowl\nSemantics:\n1. 保障 -> security")
        .respond_all({"纸老虎 -> paper tiger", "(variant 2)"},
                     "Source: 纸老虎不可怕\nTarget: A paper tiger is not scary.")
        .respond("纸老虎 -> paper tiger", "Source: 他是纸老虎\nTarget: He is a paper tiger.")
        .respond_all({"铁饭碗 -> iron rice bowl", "(variant 2)"},
                     "Source: 铁饭碗难求\nTarget: An iron rice bowl is hard to find.")
        .respond("铁饭碗 -> iron rice bowl",
                 "Source: 那是铁饭碗\nTarget: That is an iron rice bowl.")
        .respond("稻草人 -> scarecrow", "Source: 田里有稻草人\nTarget: A scarecrow in the field.")
        .respond("空架子 -> empty shell", "Source: 这是空架子\nTarget: It is an empty shell.")
        .respond("金饭碗 -> golden rice bowl",
                 "Source: 人人想要金饭碗\nTarget: Everyone wants a golden rice bowl.")
        .respond("保障 -> security", "Source: 这是一种保障\nTarget: It is a form of security.")
        .save(dir.file("script.jsonl"));
    auto gw = testsupport::fast_gateway();
    auto ctx = make_context(gw, dir.file("script.jsonl"));

    extension::ExtensionConfig cfg;
    cfg.pairs_per_word = 2;
    cfg.words_per_aspect = 1;
    cfg.contexts_per_analog = 1;

    auto span1 = core::ErrorSpan::create("纸老虎", "idiom", "paper tiger");
    auto span2 = core::ErrorSpan::create("铁饭碗", "idiom", "iron rice bowl");
    REQUIRE(span1.ok());
    REQUIRE(span2.ok());
    auto fb1 = core::Feedback::with_errors({*span1}, "pe one");
    auto fb2 = core::Feedback::with_errors({*span2}, "pe two");
    REQUIRE(fb1.ok());
    REQUIRE(fb2.ok());
    auto rec1 = core::TranslationRecord::create(1, "他是纸老虎", "hyp one", "mt");
    auto rec2 = core::TranslationRecord::create(2, "他有铁饭碗", "hyp two", "mt");
    REQUIRE(rec1.ok());
    REQUIRE(rec2.ok());
    std::vector<std::pair<core::TranslationRecord, core::Feedback>> selected{{*rec1, *fb1},
                                                                             {*rec2, *fb2}};

    extension::ExtensionMetrics with_analogy;
    auto pairs = extension::extend_errors(ctx, selected, cfg, true, &with_analogy);
    // Per record: 2 seed candidates + 2 analog words x 1 context.
    CHECK(pairs.size() == 8);
    CHECK(with_analogy.profile_requests == 2);
    CHECK(with_analogy.analogy_requests == 2);
    CHECK(with_analogy.generation_requests == 8);
    CHECK(with_analogy.shortfall == 0);

    std::size_t analog_pairs = 0;
    for (const auto& p : pairs) {
        CHECK((p.origin().record_id == 1 || p.origin().record_id == 2));
        if (p.origin().analog) ++analog_pairs;
    }
    CHECK(analog_pairs == 4);

    extension::ExtensionMetrics without_analogy;
    auto seeds_only = extension::extend_errors(ctx, selected, cfg, false, &without_analogy);
    CHECK(seeds_only.size() == 4);
    CHECK(without_analogy.analogy_requests == 0);
    for (const auto& p : seeds_only) CHECK_FALSE(p.origin().analog.has_value());
}

TEST_CASE("records whose analysis fails are skipped and counted") {
    TempDir dir;
    ScriptBuilder()
        .respond_all({"point out its topic", "纸老虎"}, kValidAnalysis)
        .respond("point out its topic", "never parseable")
        .respond("纸老虎 -> paper tiger", "Source: 他是纸老虎\nTarget: He is a paper tiger.")
        .save(dir.file("script.jsonl"));
    auto gw = testsupport::fast_gateway();
    auto ctx = make_context(gw, dir.file("script.jsonl"));
    extension::ExtensionConfig cfg;
    cfg.pairs_per_word = 1;
    cfg.max_regen_attempts = 0;

    auto span = core::ErrorSpan::create("纸老虎", "", "paper tiger");
    REQUIRE(span.ok());
    auto fb = core::Feedback::with_errors({*span}, "pe");
    REQUIRE(fb.ok());
    auto good = core::TranslationRecord::create(1, "他是纸老虎", "hyp", "mt");
    auto bad = core::TranslationRecord::create(2, "分析失败的句子", "hyp", "mt");
    REQUIRE(good.ok());
    REQUIRE(bad.ok());

    extension::ExtensionMetrics metrics;
    auto pairs = extension::extend_errors(ctx, {{*good, *fb}, {*bad, *fb}}, cfg, false, &metrics);
    CHECK(pairs.size() == 1);
    CHECK(metrics.records_failed == 1);
}

TEST_CASE("extension config validates its knobs") {
    extension::ExtensionConfig cfg;
    CHECK(cfg.validate().ok());
    CHECK(cfg.pairs_per_word == 4);
    CHECK(cfg.words_per_aspect == 2);
    CHECK(cfg.contexts_per_analog == 1);
    CHECK(cfg.max_regen_attempts == 2);

    extension::ExtensionConfig bad = cfg;
    bad.pairs_per_word = 0;
    CHECK(bad.validate().code() == ErrorCode::ConfigError);
    bad = cfg;
    bad.words_per_aspect = 0;
    CHECK(bad.validate().code() == ErrorCode::ConfigError);
    bad = cfg;
    bad.contexts_per_analog = 0;
    CHECK(bad.validate().code() == ErrorCode::ConfigError);
    bad = cfg;
    bad.max_regen_attempts = -1;
    CHECK(bad.validate().code() == ErrorCode::ConfigError);
}

}  // TEST_SUITE
