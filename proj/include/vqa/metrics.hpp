#pragma once

#include <array>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vqa/backend.hpp"

namespace vqa {

/// Lowercase, strip punctuation, lemmatize, drop articles and a fixed
/// preposition list, map number words zero..ten to digits, collapse spaces.
/// Idempotent.
std::string normalize(std::string_view text);

/// The rule-based lemmatizer used by normalize(), exposed for tests.
std::string lemmatize(std::string_view lowercase_word);

/// Prepositions dropped by normalize(): of, in, on, at, to, for, with, by, from.
std::span<const std::string_view> dropped_prepositions();

/// Parsing demonstrations followed by "Input: <q> <answer> Short answer:".
std::string build_parse_prompt(std::string_view question, std::string_view verbose_answer);

enum class ParseOutcome {
    Bypassed,  // answer already three words or fewer, no backend call
    Parsed,
    Fallback,  // backend failed or returned nothing; extraction rules used instead
};

std::string_view to_string(ParseOutcome outcome);

struct ParsedAnswer {
    std::string text;
    ParseOutcome outcome = ParseOutcome::Bypassed;
    std::string warning;
};

/// Verbose -> short answer through a text-only backend. Never throws on
/// backend failure; falls back to extract_final_answer and flags it.
ParsedAnswer llm_parse(std::string_view question, std::string_view verbose_answer, Backend& backend);

inline constexpr std::size_t kParseBypassWords = 3;

/// min(m / 3, 1) where m counts references equal to the candidate after
/// normalizing both sides.
double vqa_accuracy(std::string_view candidate, std::span<const std::string> refs);

int binary_accuracy(std::string_view candidate, std::string_view ref);

enum class YesNo { Yes, No, Unknown };

std::string_view to_string(YesNo v);
YesNo yes_no_of(std::string_view text);

struct WinogroundItem {
    std::string image_ref;
    std::string question;
    bool expected_yes = false;

    bool operator==(const WinogroundItem&) const = default;
};

/// (img0,q0,yes), (img0,q1,no), (img1,q0,no), (img1,q1,yes).
struct WinogroundQuad {
    std::string sample_id;
    std::array<WinogroundItem, 4> items;
};

/// Throws Precondition unless exactly two items expect "yes".
void validate(const WinogroundQuad& quad);

struct WinogroundScore {
    int score = 0;
    std::array<bool, 4> correct{};
    /// Answers that did not reduce to yes/no; each counts as wrong.
    int non_binary = 0;
};

WinogroundScore winoground_group_score(const WinogroundQuad& quad, std::span<const std::string> answers);

struct RougeScore {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

/// n-gram overlap over lowercased whitespace tokens, n in {1, 2}.
RougeScore rouge_n_score(std::string_view candidate, std::string_view reference, int n);
/// Longest-common-subsequence precision/recall/F1 over the same tokens.
RougeScore rouge_l_score(std::string_view candidate, std::string_view reference);

inline double rouge_n(std::string_view candidate, std::string_view reference, int n) {
    return rouge_n_score(candidate, reference, n).f1;
}
inline double rouge_l(std::string_view candidate, std::string_view reference) {
    return rouge_l_score(candidate, reference).f1;
}

}  // namespace vqa
