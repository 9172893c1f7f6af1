#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace vqa {

enum class TemplateFamily { Standard, Cot, CaptionWrapper, Captioning };

std::string_view to_string(TemplateFamily family);
TemplateFamily template_family_from_string(std::string_view name);

/// A named prompt pattern. Placeholders are the literal tokens `{q}`
/// (question), `{o}` (options), `{s}` (statement or caption) and
/// `{task instruction}`. There is no escaping.
struct TemplateSpec {
    std::string name;
    TemplateFamily family = TemplateFamily::Standard;
    std::string pattern;

    bool operator==(const TemplateSpec&) const = default;
};

struct PromptContext {
    std::string question;
    std::optional<std::vector<std::string>> options;
    std::optional<std::string> caption;
    std::optional<std::string> task_instruction;
    bool is_binary_question = false;
    /// Options listed here keep their casing in format_options.
    std::vector<std::string> proper_nouns;
};

struct RenderedPrompt {
    std::string text;
    bool attach_image = true;
    TemplateFamily family = TemplateFamily::Standard;
    bool caption_wrapped = false;

    bool operator==(const RenderedPrompt&) const = default;
};

/// Immutable-after-construction name -> TemplateSpec map. Every insertion is
/// checked against the family/placeholder invariants.
class TemplateRegistry {
public:
    void add(TemplateSpec spec);

    bool contains(std::string_view name) const;
    const TemplateSpec& at(std::string_view name) const;
    std::vector<std::string> names() const;
    std::size_t size() const { return specs_.size(); }

    nlohmann::json to_json() const;
    static TemplateRegistry from_json(const nlohmann::json& doc);

private:
    std::map<std::string, TemplateSpec, std::less<>> specs_;
};

/// Throws InvalidTemplate when the pattern's placeholders do not fit its family.
void validate_template(const TemplateSpec& spec);

/// Null, qa, short-qa, follow-qa, instruct-qa, reason-qa, think-qa,
/// caption-wrapper, a-photo-of and q-guided-cap.
const TemplateRegistry& builtin_registry();

/// "Red velvet, cherry amaretto, strawberry daiquiri or bailey's chocolate?"
std::string format_options(std::span<const std::string> options,
                           std::span<const std::string> proper_nouns = {});

/// Renders a standard or CoT template. Absent and empty option lists render
/// identically, runs of spaces collapse and the text never ends in a space.
/// A pattern ending in "Short Answer:" gains " yes or no?" for binary questions.
RenderedPrompt render(const TemplateSpec& spec, const PromptContext& ctx);

/// Captioning templates ("a-photo-of", "q-guided-cap").
RenderedPrompt render_captioning(const TemplateSpec& spec,
                                 std::optional<std::string_view> question = std::nullopt);

/// "Context: <caption> <inner>". Rejects an already wrapped prompt.
RenderedPrompt wrap_with_caption(const RenderedPrompt& inner, std::string_view caption);

struct Exemplar;

enum class FewShotSetting { Standard, Caption, Cot };

std::string_view to_string(FewShotSetting setting);

/// Text-only few-shot prompt: preamble, exemplars between "---" delimiters,
/// then the test question with an empty answer slot. With no exemplars the
/// zero-shot prompt is returned as-is.
std::string render_exemplar_block(std::span<const Exemplar> exemplars, FewShotSetting setting,
                                  const PromptContext& ctx, std::string_view zero_shot_prompt);

inline constexpr std::size_t kMaxExemplars = 5;

}  // namespace vqa
