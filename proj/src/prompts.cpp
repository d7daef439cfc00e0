#include "mtpatcher/prompts.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace mtpatcher::prompts {

const std::vector<std::string>& known_placeholders() {
    static const std::vector<std::string> names{
        "srclang", "tgtlang",  "srctext",   "tgttext",    "domain",        "topic",
        "style",   "wordpair", "errorword", "definition", "translation_a", "translation_b"};
    return names;
}

namespace {

// Returns the known placeholder name starting at body[pos] (pos points at
// '<'), or empty when none matches.
std::string_view placeholder_at(std::string_view body, std::size_t pos) {
    for (const auto& name : known_placeholders()) {
        if (body.size() - pos < name.size() + 2) continue;
        if (body.compare(pos + 1, name.size(), name) == 0 && body[pos + 1 + name.size()] == '>')
            return name;
    }
    return {};
}

std::vector<std::string> placeholders_in(std::string_view body) {
    std::vector<std::string> found;
    for (std::size_t i = 0; i < body.size(); ++i) {
        if (body[i] != '<') continue;
        auto name = placeholder_at(body, i);
        if (name.empty()) continue;
        if (std::find(found.begin(), found.end(), name) == found.end())
            found.emplace_back(name);
        i += name.size() + 1;
    }
    return found;
}

}  // namespace

Result<PromptTemplate> PromptTemplate::create(std::string name, std::string body,
                                              std::vector<std::string> required_placeholders) {
    if (name.empty())
        return make_error(ErrorCode::InvalidArgument, "PromptTemplate.name empty");
    if (body.empty())
        return make_error(ErrorCode::InvalidArgument, "PromptTemplate.body empty");
    const auto& known = known_placeholders();
    auto present = placeholders_in(body);
    for (const auto& req : required_placeholders) {
        if (std::find(known.begin(), known.end(), req) == known.end())
            return make_error(ErrorCode::InvalidArgument,
                              "unknown placeholder in required set: " + req);
        if (std::find(present.begin(), present.end(), req) == present.end())
            return make_error(ErrorCode::InvalidArgument,
                              "required placeholder <" + req + "> missing from body of " + name);
    }
    PromptTemplate t;
    t.name_ = std::move(name);
    t.body_ = std::move(body);
    t.required_ = std::move(required_placeholders);
    return t;
}

Result<std::string> render_prompt(const PromptTemplate& tmpl,
                                  const std::map<std::string, std::string>& bindings) {
    const std::string& body = tmpl.body();
    std::string out;
    out.reserve(body.size());
    for (std::size_t i = 0; i < body.size();) {
        if (body[i] != '<') {
            out.push_back(body[i]);
            ++i;
            continue;
        }
        auto name = placeholder_at(body, i);
        if (name.empty()) {
            out.push_back(body[i]);
            ++i;
            continue;
        }
        auto it = bindings.find(std::string(name));
        if (it == bindings.end())
            return make_error(ErrorCode::MissingBinding, std::string(name));
        out += it->second;
        i += name.size() + 2;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Built-in templates
// ---------------------------------------------------------------------------

namespace {

struct BuiltinDef {
    const char* name;
    const char* body;
    std::vector<std::string> required;
};

const char* kFeedbackBody =
    R"(Assuming you are a highly proficient translator skilled at providing detailed and comprehensive assessments of machine translations. I will give you a <srclang> sentence X and its <tgtlang> translation Y, and I would like you to help assess the translation.
1. You should first provide an overall assessment.
2. Following that,
    - If there are no errors, just say "No error." and do not provide an explanation.
    - If there are errors, please specify
        - the error type,
        - the corresponding segment in the <srclang> sentence X,
        - the corresponding segment in the translation Y,
        - the reason for the error,
        - and the correct translation for the segment
    - If there are errors, you should also provide a good translation at the end of the assessment.
4. For multiple errors, you should address them separately.
5. Try to pinpoint the smallest segments containing errors and explain them, avoiding cases where the error encompasses the entire sentence.
6. Carefully read the original text and the translation to identify all translation errors.
7. Your response should be in English.
8. Be concise.

When there are errors, report them after your overall assessment in exactly this layout, one block per error, numbered from 1:
Error 1:
Source segment: ...
Translation segment: ...
Reason: ...
Correction: ...
After the last error block, give the full corrected translation on one line:
Good translation: ...
When there are no errors, write the single line:
No error.

Now, please assess the following translation:

<srclang>: <srctext>
<tgtlang>: <tgttext>

Assessment:
)";

const char* kSentenceAnalysisBody =
    R"(Suppose you are a language expert of <srclang> and <tgtlang>. Given a sentence X, please point out its topic, domain and style.
Answer with exactly three labeled lines:
Domain: ...
Topic: ...
Style: ...
Input:
X: <srctext>
Output:
)";

const char* kParallelSynthesisBody =
    R"(Suppose you are a language expert of <srclang> and <tgtlang>. Given a topic, a domain and a style, as well as a bilingual word pair, please generate a pair of parallel sentences that adhere to the given topic, domain and style. They should also contain the given word pair.
Answer with exactly two labeled lines, where Source is the <srclang> sentence and Target is the <tgtlang> sentence:
Source: ...
Target: ...
Input:
Domain: <domain>
Topic: <topic>
Style: <style>
Word Pair: <wordpair>

Output:
)";

const char* kWordAnalogyBody =
    R"(Assume you are a <srclang> and <tgtlang> language expert with a wealth of knowledge and associative ability in both languages. I will give you a word/phrase P from an <srclang> sentence X. Please associate from the following aspects and generate three words similar to X for each aspect, and provide the <tgtlang> translation of these words.

Aspects of association:
- Category. What kind of category does this word belong to?
- Semantics. What words often appear in the same context as the given word?

NOTE, the associated words should be rare words, so that it is unlike for a machine translation system to translate it correctly.

Answer with two labeled sections, one word per line in the form "word -> translation":
Category:
word -> translation
Semantics:
word -> translation

Input:
X: <srctext>
P: <errorword>

Output:
)";

const char* kIdiomJudgeBody =
    R"(Assume you are a language expert in English and Chinese. I will give you a Chinese idiom S, a sentence X that contains S, and a machine-generated English translation Y of the source sentence X. I will also give you the explanation/definition E of the idiom S. Your task is to first identify the translation of S in Y, and judge whether the translation of the idiom is correct.

Note:
1. The score range is 0/1/2/3/4/5, where
    - 0: Completely incorrect translation or no translation
    - 1: Literal translation of the original, without conveying any implied meaning, leaving non-Chinese background readers baffled
    - 2: Literal translation of the original, partially conveying the implied meaning, easy for non-Chinese background readers to understand
    - 3: Interpretative translation of the idiom, but only partially conveying the implied meaning
    - 4: Interpretative translation of the idiom, fully conveying the implied meaning
    - 5: The translation perfectly conveys the implied meaning of the idiom, is very easy for all readers to understand, and also maintains the aesthetic sense of the original

2. You should generate the explanation of your decision concisely.
Answer with two labeled lines:
Score: a single integer from 0 to 5
Reason: your concise explanation
Now, please process the following inputs:
S: <errorword>
X: <srctext>
Y: <tgttext>
E: <definition>
)";

const char* kComparisonBody =
    R"(Assume you are a language expert in Chinese and English. I will give you a sentence X, the word P in that sentence, and two translations of the sentence X: A and B. Your task is to assess which translation contains the correct translation of the word P.

Requirements:
(1) Ignore other differences between the two translations. Only compare the translation of the word P.
(2) Your answer should first state the reason for your comparison, and then give your comparison.
(3) Your comparison should be A, B, C and D.
    - A: the first translation of the word P is better.
    - B: the second translation of the word P is better.
    - C: Both are fine.
    - D: Both are bad.

Answer with two labeled lines:
Reason: your concise reasoning
Comparison: one of A, B, C or D

Now, please process the following inputs:
X: <srctext>
P: <errorword>
A: <translation_a>
B: <translation_b>
)";

const char* kTranslateBody =
    R"(You are a professional translator. Translate the following <srclang> sentence into <tgtlang>. Reply with the translation only, no quotes, no commentary.

<srctext>
)";

const char* kForgeMonoBody =
    R"(Suppose you are a language expert of <srclang>. Please write one natural <srclang> sentence that contains the word/phrase P exactly as given.
Answer with one labeled line:
Source: ...
Input:
P: <errorword>
Output:
)";

const char* kForgePairBody =
    R"(Suppose you are a language expert of <srclang> and <tgtlang>. Given a bilingual word pair, please generate a pair of parallel sentences that contain the given word pair, where the <srclang> sentence contains the first word and the <tgtlang> sentence contains the second.
Answer with exactly two labeled lines:
Source: ...
Target: ...
Input:
Word Pair: <wordpair>
Output:
)";

const std::vector<BuiltinDef>& builtin_defs() {
    static const std::vector<BuiltinDef> defs{
        {"feedback", kFeedbackBody, {"srclang", "tgtlang", "srctext", "tgttext"}},
        {"sentence_analysis", kSentenceAnalysisBody, {"srclang", "tgtlang", "srctext"}},
        {"parallel_synthesis",
         kParallelSynthesisBody,
         {"srclang", "tgtlang", "domain", "topic", "style", "wordpair"}},
        {"word_analogy", kWordAnalogyBody, {"srclang", "tgtlang", "srctext", "errorword"}},
        {"idiom_judge", kIdiomJudgeBody, {"errorword", "srctext", "tgttext", "definition"}},
        {"comparison",
         kComparisonBody,
         {"srctext", "errorword", "translation_a", "translation_b"}},
        {"translate", kTranslateBody, {"srclang", "tgtlang", "srctext"}},
        {"forge_mono", kForgeMonoBody, {"srclang", "errorword"}},
        {"forge_pair", kForgePairBody, {"srclang", "tgtlang", "wordpair"}},
    };
    return defs;
}

}  // namespace

Result<PromptTemplate> builtin_template(std::string_view name) {
    for (const auto& def : builtin_defs()) {
        if (name == def.name) return PromptTemplate::create(def.name, def.body, def.required);
    }
    return make_error(ErrorCode::InvalidArgument, "no built-in template named " + std::string(name));
}

std::vector<std::string> builtin_template_names() {
    std::vector<std::string> names;
    for (const auto& def : builtin_defs()) names.emplace_back(def.name);
    return names;
}

Result<PromptTemplate> load_template_file(const std::string& name, const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return make_error(ErrorCode::IoError, "cannot open template file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    std::string body = buf.str();
    auto required = placeholders_in(body);
    return PromptTemplate::create(name, std::move(body), std::move(required));
}

}  // namespace mtpatcher::prompts
