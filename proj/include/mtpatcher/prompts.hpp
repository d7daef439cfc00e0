#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "mtpatcher/result.hpp"

namespace mtpatcher::prompts {

/// A prompt body with <name> placeholders. Every required placeholder is
/// guaranteed (at construction) to occur in the body at least once.
class PromptTemplate {
public:
    static Result<PromptTemplate> create(std::string name, std::string body,
                                         std::vector<std::string> required_placeholders);

    const std::string& name() const { return name_; }
    const std::string& body() const { return body_; }
    const std::vector<std::string>& required_placeholders() const { return required_; }

private:
    PromptTemplate() = default;
    std::string name_;
    std::string body_;
    std::vector<std::string> required_;
};

/// Placeholder names render_prompt recognizes inside <angle brackets>.
const std::vector<std::string>& known_placeholders();

/// Substitutes every placeholder occurrence in a single pass (text injected
/// through bindings is never re-scanned). Unknown extra bindings are
/// ignored. Fails with MissingBinding when any placeholder in the body has
/// no binding, so no placeholder token survives into the output.
Result<std::string> render_prompt(const PromptTemplate& tmpl,
                                  const std::map<std::string, std::string>& bindings);

/// Built-in templates shipped with the tool: feedback, sentence_analysis,
/// parallel_synthesis, word_analogy, idiom_judge, comparison, translate,
/// forge_mono, forge_pair.
Result<PromptTemplate> builtin_template(std::string_view name);
std::vector<std::string> builtin_template_names();

/// Loads a template body from a plain-text file; the required placeholder
/// set is derived from the placeholder tokens present in the body.
Result<PromptTemplate> load_template_file(const std::string& name, const std::string& path);

}  // namespace mtpatcher::prompts
