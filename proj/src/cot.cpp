#include "vqa/cot.hpp"

#include <algorithm>
#include <array>
#include <cctype>

#include "vqa/text.hpp"

namespace vqa {

namespace {

constexpr std::array<std::string_view, 4> kAnswerMarkers = {"the final answer is", "the final answer:", "answer is",
                                                            "answer:"};

std::size_t rfind_icase(std::string_view hay, std::string_view needle) {
    auto lower = text::to_lower(hay);
    return lower.rfind(needle);
}

std::string strip_terminal_punct(std::string s) {
    while (!s.empty() && (s.back() == '.' || s.back() == '!' || s.back() == '?')) s.pop_back();
    return text::trim(s);
}

std::string strip_leading_article(std::string s) {
    for (std::string_view article : {"a ", "an ", "the "}) {
        if (text::starts_with_icase(s, article)) return text::trim(s.substr(article.size()));
    }
    return s;
}

// Clause after the marker, cut at the end of its sentence or line.
std::string clause_after(std::string_view raw, std::size_t from) {
    auto rest = raw.substr(from);
    std::size_t end = rest.size();
    for (std::size_t i = 0; i < rest.size(); ++i) {
        char c = rest[i];
        if (c == '\n') {
            end = i;
            break;
        }
        if ((c == '.' || c == '!' || c == '?') &&
            (i + 1 == rest.size() || std::isspace(static_cast<unsigned char>(rest[i + 1])))) {
            end = i;
            break;
        }
    }
    return text::trim(rest.substr(0, end));
}

std::string extract_once(std::string_view raw) {
    auto t = text::trim(raw);
    if (t.empty()) return {};
    for (auto marker : kAnswerMarkers) {
        auto pos = rfind_icase(t, marker);
        if (pos == std::string::npos) continue;
        auto clause = strip_leading_article(strip_terminal_punct(clause_after(t, pos + marker.size())));
        if (!clause.empty()) return clause;
    }
    auto sentences = text::split_sentences(t);
    if (sentences.empty()) return {};
    return strip_terminal_punct(sentences.back());
}

bool has_marker(std::string_view sentence) {
    auto lower = text::to_lower(sentence);
    return std::any_of(kAnswerMarkers.begin(), kAnswerMarkers.end(),
                       [&](std::string_view m) { return lower.find(m) != std::string::npos; });
}

BackendRequest make_request(std::string prompt, const std::optional<std::string>& image_ref,
                            const GenerationConfig& gen, Purpose purpose) {
    BackendRequest req;
    req.prompt = std::move(prompt);
    req.image_ref = image_ref;
    req.gen = gen;
    req.purpose = purpose;
    return req;
}

std::string first_text(const BackendResponse& resp) {
    return resp.texts.empty() ? std::string() : resp.texts.front();
}

}  // namespace

std::string extract_final_answer(std::string_view raw) {
    // Iterate to a fixed point so the function is idempotent even when the
    // extracted clause itself contains a marker. Each round strictly shrinks
    // the text, so this terminates.
    std::string cur = extract_once(raw);
    for (int guard = 0; guard < 16; ++guard) {
        auto next = extract_once(cur);
        if (next == cur) break;
        cur = std::move(next);
    }
    return cur;
}

RationaleSplit split_rationale(std::string_view raw) {
    RationaleSplit out;
    out.answer = extract_final_answer(raw);
    auto sentences = text::split_sentences(raw);
    if (sentences.empty()) return out;
    std::size_t drop = sentences.size() - 1;
    for (std::size_t i = sentences.size(); i-- > 0;) {
        if (has_marker(sentences[i])) {
            drop = i;
            break;
        }
    }
    sentences.erase(sentences.begin() + static_cast<std::ptrdiff_t>(drop));
    out.rationale = text::join(sentences, " ");
    return out;
}

std::string trim_rationale(std::string_view rationale) {
    auto sentences = text::split_sentences(rationale);
    return sentences.empty() ? std::string() : sentences.front();
}

RationaleAnswer cot_answer(const RenderedPrompt& prompt, const std::optional<std::string>& image_ref,
                           Backend& backend, const GenerationConfig& gen) {
    if (prompt.family != TemplateFamily::Cot)
        throw Error(ErrorKind::Precondition, "cot_answer needs a prompt rendered from a CoT template");
    auto resp = backend.complete(make_request(prompt.text, prompt.attach_image ? image_ref : std::nullopt, gen,
                                              Purpose::Rationale));
    RationaleAnswer out;
    out.raw = text::trim(first_text(resp));
    out.prompts = {prompt.text};
    out.raws = {out.raw};
    auto split = split_rationale(out.raw);
    out.rationale = std::move(split.rationale);
    out.answer = std::move(split.answer);
    if (out.answer.empty()) out.warnings.emplace_back("ExtractionEmpty: no answer in backend output");
    return out;
}

namespace {

RationaleAnswer two_stage(const PromptContext& ctx, const RenderedPrompt& rationale_prompt,
                          const std::optional<std::string>& image_ref, Backend& backend, const TwoStageConfig& cfg,
                          bool as_context) {
    if (!cfg.answer_template || cfg.answer_template->family != TemplateFamily::Standard)
        throw Error(ErrorKind::Precondition, "two-stage CoT needs a standard answer template");
    auto first = cot_answer(rationale_prompt, image_ref, backend, cfg.rationale_gen);
    const auto rationale = text::trim(first.rationale);

    RenderedPrompt second;
    if (rationale.empty()) {
        second = render(*cfg.answer_template, ctx);
    } else if (as_context) {
        second = wrap_with_caption(render(*cfg.answer_template, ctx), rationale);
    } else {
        auto extended = ctx;
        extended.question = text::trim(ctx.question) + " " + trim_rationale(rationale);
        second = render(*cfg.answer_template, extended);
    }
    auto resp = backend.complete(make_request(second.text, second.attach_image ? image_ref : std::nullopt,
                                              cfg.answer_gen, Purpose::Answer));
    RationaleAnswer out;
    out.rationale = as_context ? rationale : trim_rationale(rationale);
    out.raw = text::trim(first_text(resp));
    out.answer = extract_final_answer(out.raw);
    out.prompts = {first.prompts.front(), second.text};
    out.raws = {first.raw, out.raw};
    out.warnings = std::move(first.warnings);
    if (out.answer.empty()) out.warnings.emplace_back("ExtractionEmpty: no answer in second-stage output");
    return out;
}

}  // namespace

RationaleAnswer cot_iterative(const PromptContext& ctx, const RenderedPrompt& rationale_prompt,
                              const std::optional<std::string>& image_ref, Backend& backend,
                              const TwoStageConfig& cfg) {
    return two_stage(ctx, rationale_prompt, image_ref, backend, cfg, false);
}

RationaleAnswer cot_context(const PromptContext& ctx, const RenderedPrompt& rationale_prompt,
                            const std::optional<std::string>& image_ref, Backend& backend,
                            const TwoStageConfig& cfg) {
    return two_stage(ctx, rationale_prompt, image_ref, backend, cfg, true);
}

VoteOutcome vote(std::span<const std::string> answers, const Normalizer& normalizer) {
    if (answers.empty()) throw Error(ErrorKind::EmptyVote, "no answers to vote over");
    VoteOutcome out;
    for (const auto& a : answers) {
        auto key = normalizer ? normalizer(a) : a;
        auto it = std::find_if(out.tally.begin(), out.tally.end(), [&](const VoteGroup& g) { return g.key == key; });
        if (it == out.tally.end())
            out.tally.push_back({a, std::move(key), 1});
        else
            ++it->count;
    }
    // max_element returns the first maximum, i.e. the earliest group.
    auto best = std::max_element(out.tally.begin(), out.tally.end(),
                                 [](const VoteGroup& x, const VoteGroup& y) { return x.count < y.count; });
    out.winner = best->representative;
    return out;
}

std::string majority_vote(std::span<const std::string> answers, const Normalizer& normalizer) {
    return vote(answers, normalizer).winner;
}

ConsistencyResult self_consistency(const RenderedPrompt& prompt, const std::optional<std::string>& image_ref,
                                   Backend& backend, const ConsistencyConfig& cfg, const Normalizer& normalizer,
                                   std::int64_t base_seed, std::size_t max_in_flight) {
    if (cfg.n_paths < 1) throw Error(ErrorKind::Precondition, "n_paths must be >= 1");
    if (!(cfg.temperature > 0.0)) throw Error(ErrorKind::Precondition, "temperature must be > 0");
    if (prompt.family != TemplateFamily::Cot)
        throw Error(ErrorKind::Precondition, "self-consistency needs a prompt rendered from a CoT template");

    auto gen = preset("consistency-path");
    gen.temperature = cfg.temperature;
    gen.omit_image = cfg.omit_image;
    std::vector<BackendRequest> reqs;
    reqs.reserve(static_cast<std::size_t>(cfg.n_paths));
    for (int i = 0; i < cfg.n_paths; ++i) {
        gen.seed = base_seed + i;
        reqs.push_back(make_request(prompt.text, prompt.attach_image ? image_ref : std::nullopt, gen,
                                    Purpose::Rationale));
    }
    // Slots come back indexed by path, so voting order never depends on
    // completion order.
    auto slots = complete_batch(backend, reqs, max_in_flight);

    ConsistencyResult out;
    out.prompt = prompt.text;
    std::vector<std::string> answers;
    std::optional<Error> first_error;
    for (auto& slot : slots) {
        if (!slot.ok()) {
            if (!first_error) first_error = slot.error;
            out.paths.emplace_back(std::nullopt);
            continue;
        }
        RationaleAnswer path;
        path.raw = text::trim(first_text(*slot.response));
        auto split = split_rationale(path.raw);
        path.rationale = std::move(split.rationale);
        path.answer = std::move(split.answer);
        answers.push_back(path.answer);
        out.paths.emplace_back(std::move(path));
        ++out.successes;
    }
    if (out.successes == 0)
        throw Error(first_error ? first_error->kind() : ErrorKind::BackendTransport,
                    std::string("all consistency paths failed: ") + (first_error ? first_error->what() : ""));
    if (out.successes * 2 < cfg.n_paths)
        out.warnings.push_back("only " + std::to_string(out.successes) + " of " + std::to_string(cfg.n_paths) +
                               " consistency paths succeeded");
    out.vote = vote(answers, normalizer);
    out.answer = out.vote.winner;
    return out;
}

}  // namespace vqa
