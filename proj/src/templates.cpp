#include "vqa/templates.hpp"

#include <cctype>

#include "vqa/error.hpp"
#include "vqa/exemplar.hpp"
#include "vqa/text.hpp"

namespace vqa {

namespace {

constexpr std::string_view kQuestion = "{q}";
constexpr std::string_view kOptions = "{o}";
constexpr std::string_view kStatement = "{s}";
constexpr std::string_view kInstruction = "{task instruction}";
constexpr std::string_view kShortAnswer = "Short Answer:";

constexpr std::string_view kFewShotPreamble =
    "In this task, your goal is to write an answer to a given question about the image.\n"
    "To write the answer, here are some sample QA suggestions (not relevant to the image):";
constexpr std::string_view kFewShotLead = "Now answer the following question about the image.";

bool has(std::string_view pattern, std::string_view token) {
    return pattern.find(token) != std::string_view::npos;
}

// Single left-to-right pass over the pattern so substituted text is never
// rescanned for placeholders.
std::string substitute(std::string_view pattern, std::string_view question, std::string_view options,
                       std::string_view caption, std::string_view instruction) {
    std::string out;
    out.reserve(pattern.size() + question.size() + options.size() + caption.size());
    std::size_t i = 0;
    while (i < pattern.size()) {
        auto rest = pattern.substr(i);
        if (rest.starts_with(kQuestion)) {
            out += question;
            i += kQuestion.size();
        } else if (rest.starts_with(kOptions)) {
            out += options;
            i += kOptions.size();
        } else if (rest.starts_with(kStatement)) {
            out += caption;
            i += kStatement.size();
        } else if (rest.starts_with(kInstruction)) {
            out += instruction;
            i += kInstruction.size();
        } else {
            out += pattern[i++];
        }
    }
    return out;
}

std::string collapse_space_runs(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        if (c == ' ' && !out.empty() && out.back() == ' ') continue;
        out += c;
    }
    return text::trim(out);
}

bool has_options(const PromptContext& ctx) {
    return ctx.options.has_value() && !ctx.options->empty();
}

std::string question_line(const PromptContext& ctx) {
    std::string line = "Question: " + text::trim(ctx.question);
    if (has_options(ctx)) line += " " + format_options(*ctx.options, ctx.proper_nouns);
    return line;
}

}  // namespace

std::string_view to_string(TemplateFamily family) {
    switch (family) {
        case TemplateFamily::Standard: return "standard";
        case TemplateFamily::Cot: return "cot";
        case TemplateFamily::CaptionWrapper: return "caption-wrapper";
        case TemplateFamily::Captioning: return "captioning";
    }
    return "standard";
}

TemplateFamily template_family_from_string(std::string_view name) {
    if (name == "standard") return TemplateFamily::Standard;
    if (name == "cot") return TemplateFamily::Cot;
    if (name == "caption-wrapper") return TemplateFamily::CaptionWrapper;
    if (name == "captioning") return TemplateFamily::Captioning;
    throw Error(ErrorKind::InvalidTemplate, "unknown template family '" + std::string(name) + "'");
}

std::string_view to_string(FewShotSetting setting) {
    switch (setting) {
        case FewShotSetting::Standard: return "standard";
        case FewShotSetting::Caption: return "caption";
        case FewShotSetting::Cot: return "cot";
    }
    return "standard";
}

void validate_template(const TemplateSpec& spec) {
    auto fail = [&](const std::string& why) {
        throw Error(ErrorKind::InvalidTemplate, "template '" + spec.name + "': " + why);
    };
    if (spec.name.empty()) fail("empty name");
    const bool q = has(spec.pattern, kQuestion);
    const bool s = has(spec.pattern, kStatement);
    switch (spec.family) {
        case TemplateFamily::Standard:
        case TemplateFamily::Cot:
            if (!q) fail("answering templates need {q}");
            if (s) fail("{s} is reserved for the caption wrapper");
            break;
        case TemplateFamily::CaptionWrapper:
            if (!s) fail("caption wrapper needs {s}");
            if (q) fail("caption wrapper must not contain {q}");
            break;
        case TemplateFamily::Captioning:
            if (s) fail("captioning templates must not contain {s}");
            if (has(spec.pattern, kOptions)) fail("captioning templates must not contain {o}");
            break;
    }
}

void TemplateRegistry::add(TemplateSpec spec) {
    validate_template(spec);
    if (specs_.contains(spec.name))
        throw Error(ErrorKind::InvalidTemplate, "duplicate template name '" + spec.name + "'");
    auto name = spec.name;
    specs_.emplace(std::move(name), std::move(spec));
}

bool TemplateRegistry::contains(std::string_view name) const {
    return specs_.find(name) != specs_.end();
}

const TemplateSpec& TemplateRegistry::at(std::string_view name) const {
    auto it = specs_.find(name);
    if (it == specs_.end())
        throw Error(ErrorKind::UnknownTemplate, "no template named '" + std::string(name) + "'");
    return it->second;
}

std::vector<std::string> TemplateRegistry::names() const {
    std::vector<std::string> out;
    out.reserve(specs_.size());
    for (const auto& [name, _] : specs_) out.push_back(name);
    return out;
}

nlohmann::json TemplateRegistry::to_json() const {
    nlohmann::json doc = nlohmann::json::object();
    for (const auto& [name, spec] : specs_)
        doc[name] = {{"family", to_string(spec.family)}, {"pattern", spec.pattern}};
    return doc;
}

TemplateRegistry TemplateRegistry::from_json(const nlohmann::json& doc) {
    if (!doc.is_object()) throw Error(ErrorKind::InvalidTemplate, "registry document must be an object");
    TemplateRegistry reg;
    for (const auto& [name, entry] : doc.items()) {
        if (!entry.is_object() || !entry.contains("family") || !entry.contains("pattern") ||
            !entry["family"].is_string() || !entry["pattern"].is_string())
            throw Error(ErrorKind::InvalidTemplate, "entry '" + name + "' needs string family and pattern");
        reg.add({name, template_family_from_string(entry["family"].get<std::string>()),
                 entry["pattern"].get<std::string>()});
    }
    return reg;
}

const TemplateRegistry& builtin_registry() {
    static const TemplateRegistry registry = [] {
        TemplateRegistry r;
        using F = TemplateFamily;
        r.add({"Null", F::Standard, "{q}"});
        r.add({"qa", F::Standard, "Question: {q} {o} Answer:"});
        r.add({"short-qa", F::Standard, "Question: {q} {o} Short Answer:"});
        r.add({"follow-qa", F::Standard, "Answer the following question. {q} {o}"});
        r.add({"instruct-qa", F::Standard, "{task instruction} Question: {q} {o} Answer:"});
        r.add({"reason-qa", F::Cot, "Answer the following question by reasoning step-by-step. Q: {q} A:"});
        r.add({"think-qa", F::Cot, "Q: {q} A: Let's think step-by-step"});
        r.add({"caption-wrapper", F::CaptionWrapper, "Context: {s}"});
        r.add({"a-photo-of", F::Captioning, "A photo of"});
        r.add({"q-guided-cap", F::Captioning, "Describe the image according to the following question {q}"});
        return r;
    }();
    return registry;
}

std::string format_options(std::span<const std::string> options, std::span<const std::string> proper_nouns) {
    if (options.size() < 2)
        throw Error(ErrorKind::OptionsTooFew, "need at least 2 options, got " + std::to_string(options.size()));
    auto is_proper = [&](const std::string& o) {
        for (const auto& p : proper_nouns)
            if (p == o) return true;
        return false;
    };
    std::vector<std::string> shaped;
    shaped.reserve(options.size());
    for (const auto& raw : options) {
        auto o = text::trim(raw);
        shaped.push_back(is_proper(o) ? o : text::to_lower(o));
    }
    if (!shaped.front().empty() && !is_proper(text::trim(options.front())))
        shaped.front()[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(shaped.front()[0])));

    std::string out;
    for (std::size_t i = 0; i + 1 < shaped.size(); ++i) {
        if (i) out += ", ";
        out += shaped[i];
    }
    out += " or ";
    out += shaped.back();
    out += "?";
    return out;
}

RenderedPrompt render(const TemplateSpec& spec, const PromptContext& ctx) {
    if (spec.family != TemplateFamily::Standard && spec.family != TemplateFamily::Cot)
        throw Error(ErrorKind::Precondition,
                    "render needs a standard or cot template, got '" + spec.name + "'");
    auto question = text::trim(ctx.question);
    if (question.empty()) throw Error(ErrorKind::Precondition, "question is empty");

    std::string instruction;
    if (has(spec.pattern, kInstruction)) {
        if (!ctx.task_instruction || text::trim(*ctx.task_instruction).empty())
            throw Error(ErrorKind::MissingInstruction, "template '" + spec.name + "' needs a task instruction");
        instruction = text::trim(*ctx.task_instruction);
    }
    std::string options = has_options(ctx) ? format_options(*ctx.options, ctx.proper_nouns) : std::string();

    auto body = collapse_space_runs(substitute(spec.pattern, question, options, {}, instruction));
    if (ctx.is_binary_question && body.ends_with(kShortAnswer)) body += " yes or no?";
    return {std::move(body), true, spec.family, false};
}

RenderedPrompt render_captioning(const TemplateSpec& spec, std::optional<std::string_view> question) {
    if (spec.family != TemplateFamily::Captioning)
        throw Error(ErrorKind::Precondition, "'" + spec.name + "' is not a captioning template");
    std::string q;
    if (has(spec.pattern, kQuestion)) {
        if (!question || text::trim(*question).empty())
            throw Error(ErrorKind::Precondition, "template '" + spec.name + "' needs a question");
        q = text::trim(*question);
    }
    return {collapse_space_runs(substitute(spec.pattern, q, {}, {}, {})), true, spec.family, false};
}

RenderedPrompt wrap_with_caption(const RenderedPrompt& inner, std::string_view caption) {
    auto cap = text::single_line(caption);
    if (cap.empty()) throw Error(ErrorKind::EmptyCaption, "caption is empty");
    if (inner.caption_wrapped || inner.text.starts_with("Context: "))
        throw Error(ErrorKind::AlreadyWrapped, "prompt already carries a caption context");
    const auto& wrapper = builtin_registry().at("caption-wrapper");
    auto head = substitute(wrapper.pattern, {}, {}, cap, {});
    return {head + " " + inner.text, inner.attach_image, inner.family, true};
}

std::string render_exemplar_block(std::span<const Exemplar> exemplars, FewShotSetting setting,
                                  const PromptContext& ctx, std::string_view zero_shot_prompt) {
    if (exemplars.size() > kMaxExemplars)
        throw Error(ErrorKind::Precondition, "at most 5 exemplars, got " + std::to_string(exemplars.size()));
    if (exemplars.empty()) return std::string(zero_shot_prompt);
    if (text::trim(ctx.question).empty()) throw Error(ErrorKind::Precondition, "question is empty");

    std::string out(kFewShotPreamble);
    out += "\n\n---\n";
    for (std::size_t i = 0; i < exemplars.size(); ++i) {
        const auto& ex = exemplars[i];
        if (i) out += "\n";
        if (setting == FewShotSetting::Caption) {
            if (!ex.caption || text::trim(*ex.caption).empty())
                throw Error(ErrorKind::ExemplarFieldMissing, "exemplar " + std::to_string(i) + " has no caption");
            out += "Context: " + text::single_line(*ex.caption) + "\n";
        }
        out += "Question: " + text::trim(ex.question) + "\n";
        if (setting == FewShotSetting::Cot) {
            if (!ex.rationale || text::trim(*ex.rationale).empty())
                throw Error(ErrorKind::ExemplarFieldMissing, "exemplar " + std::to_string(i) + " has no rationale");
            out += "Rationale: " + text::single_line(*ex.rationale) + "\n";
        }
        out += "Answer: " + text::trim(ex.answer) + "\n";
    }
    out += "---\n\n";
    out += kFewShotLead;
    if (ctx.task_instruction && !text::trim(*ctx.task_instruction).empty())
        out += " " + text::trim(*ctx.task_instruction);
    out += "\n\n";
    if (setting == FewShotSetting::Caption) {
        if (!ctx.caption || text::trim(*ctx.caption).empty())
            throw Error(ErrorKind::Precondition, "caption setting needs a caption on the test question");
        out += "Context: " + text::single_line(*ctx.caption) + "\n";
    }
    out += question_line(ctx) + "\n";
    out += setting == FewShotSetting::Cot ? "Rationale:" : "Answer:";
    return out;
}

}  // namespace vqa
