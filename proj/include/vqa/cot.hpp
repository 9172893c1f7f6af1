#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vqa/backend.hpp"
#include "vqa/templates.hpp"

namespace vqa {

struct RationaleAnswer {
    std::string rationale;
    std::string answer;
    /// Backend output of the final stage.
    std::string raw;
    /// Every prompt sent, in order.
    std::vector<std::string> prompts;
    /// Raw outputs of every stage, in order.
    std::vector<std::string> raws;
    std::vector<std::string> warnings;
};

struct ConsistencyConfig {
    int n_paths = 30;
    double temperature = 0.7;
    bool omit_image = false;
};

/// Last match of, in priority order, "the final answer is", "the final
/// answer:", "answer is", "answer:" (case-insensitive); the clause after it up
/// to the end of its sentence with leading articles removed. Falls back to the
/// last sentence. Total and idempotent.
std::string extract_final_answer(std::string_view raw);

struct RationaleSplit {
    std::string rationale;
    std::string answer;
};

/// Separates the sentence carrying the answer from the reasoning before it.
RationaleSplit split_rationale(std::string_view raw);

/// First sentence of a rationale.
std::string trim_rationale(std::string_view rationale);

/// Q -> RA. One call with a CoT-family prompt.
RationaleAnswer cot_answer(const RenderedPrompt& prompt, const std::optional<std::string>& image_ref,
                           Backend& backend, const GenerationConfig& gen);

struct TwoStageConfig {
    /// Standard template for the answer stage.
    const TemplateSpec* answer_template = nullptr;
    GenerationConfig rationale_gen;
    GenerationConfig answer_gen;
};

/// QR -> A: rationale first, then "question + first rationale sentence"
/// answered with a standard template.
RationaleAnswer cot_iterative(const PromptContext& ctx, const RenderedPrompt& rationale_prompt,
                              const std::optional<std::string>& image_ref, Backend& backend,
                              const TwoStageConfig& cfg);

/// RQ -> A: rationale first, then the full rationale as a "Context:" prefix
/// before the standard-template question.
RationaleAnswer cot_context(const PromptContext& ctx, const RenderedPrompt& rationale_prompt,
                            const std::optional<std::string>& image_ref, Backend& backend,
                            const TwoStageConfig& cfg);

using Normalizer = std::function<std::string(std::string_view)>;

struct VoteGroup {
    std::string representative;
    std::string key;
    int count = 0;
};

struct VoteOutcome {
    std::string winner;
    /// Groups in order of first occurrence.
    std::vector<VoteGroup> tally;
};

/// Groups by normalized form; the largest group wins, ties go to the group
/// seen first; the winner is that group's first raw answer.
VoteOutcome vote(std::span<const std::string> answers, const Normalizer& normalizer);

std::string majority_vote(std::span<const std::string> answers, const Normalizer& normalizer);

struct ConsistencyResult {
    std::string answer;
    VoteOutcome vote;
    /// One entry per path index; std::nullopt for failed paths.
    std::vector<std::optional<RationaleAnswer>> paths;
    int successes = 0;
    std::string prompt;
    std::vector<std::string> warnings;
};

/// VOTE(QR_i -> A_i): n_paths independent sampled generations with seeds
/// base_seed + i, extracted answers, majority vote. Throws when every path
/// fails; warns when fewer than half succeed.
ConsistencyResult self_consistency(const RenderedPrompt& prompt, const std::optional<std::string>& image_ref,
                                   Backend& backend, const ConsistencyConfig& cfg, const Normalizer& normalizer,
                                   std::int64_t base_seed = 0, std::size_t max_in_flight = 1);

}  // namespace vqa
