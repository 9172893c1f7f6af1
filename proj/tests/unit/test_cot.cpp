#include <doctest.h>

#include <algorithm>
#include <random>

#include "fixture_data.hpp"
#include "test_support.hpp"
#include "vqa/cot.hpp"
#include "vqa/metrics.hpp"
#include "vqa/replay.hpp"
#include "vqa/templates.hpp"

using namespace vqa;

namespace {

const Normalizer kNorm = [](std::string_view s) { return normalize(s); };

RenderedPrompt think(std::string_view question) {
    PromptContext ctx;
    ctx.question = question;
    return render(builtin_registry().at("think-qa"), ctx);
}

}  // namespace

TEST_CASE("final answer extraction") {
    CHECK(extract_final_answer("Racing is a sport. The final answer: racing.") == "racing");
    CHECK(extract_final_answer("Blah. So the final answer is a kitchen.") == "kitchen");
    CHECK(extract_final_answer("I think the answer is The Beatles! Really.") == "Beatles");
    CHECK(extract_final_answer("Answer: 3.5 meters.") == "3.5 meters");
    CHECK(extract_final_answer("answer: red. Later the answer: blue.") == "blue");
    CHECK(extract_final_answer("The final answer is yes\nbecause reasons") == "yes");
    CHECK(extract_final_answer("No marker here. It is a dog.") == "It is a dog");
    CHECK(extract_final_answer("") == "");
    CHECK(extract_final_answer("   ") == "");
    CHECK(extract_final_answer("answer:") == "answer:");
}

TEST_CASE("extraction is total and idempotent") {
    std::mt19937_64 rng(11);
    const std::vector<std::string> pieces = {"The final answer is", "answer:", "Answer is", "the", "a", "dog",
                                             ".", "!", "?", "\n", " ", "racing", "the final answer:", "3.5"};
    std::uniform_int_distribution<std::size_t> pick(0, pieces.size() - 1);
    std::uniform_int_distribution<int> len(0, 14);
    for (int i = 0; i < 3000; ++i) {
        std::string s;
        for (int k = len(rng); k > 0; --k) s += pieces[pick(rng)] + (pick(rng) % 2 ? " " : "");
        auto once = extract_final_answer(s);
        CAPTURE(s);
        CHECK(extract_final_answer(once) == once);
    }
}

TEST_CASE("rationale split and trim") {
    auto split = split_rationale(fixtures::kRacingRationale);
    CHECK(split.rationale == "A motorcycle can be used for racing. Racing is a sport.");
    CHECK(split.answer == "racing");
    CHECK(trim_rationale("First. Second.") == "First.");
    CHECK(trim_rationale("") == "");
}

TEST_CASE("vote semantics") {
    std::vector<std::string> answers = {"Dogs", "cat", "the dog", "cat", "dog."};
    auto out = vote(answers, kNorm);
    CHECK(out.winner == "Dogs");
    REQUIRE(out.tally.size() == 2);
    CHECK(out.tally[0].count == 3);
    CHECK(out.tally[0].key == "dog");
    CHECK(out.tally[1].count == 2);

    std::vector<std::string> tie = {"cat", "dog", "dog", "cat"};
    CHECK(majority_vote(tie, kNorm) == "cat");
    std::vector<std::string> mothers = {"a mother", "mother", "cake"};
    CHECK(majority_vote(mothers, kNorm) == "a mother");
    std::vector<std::string> single = {"only"};
    CHECK(majority_vote(single, kNorm) == "only");
    CHECK_THROWS_AS(vote(std::span<const std::string>{}, kNorm), Error);
}

TEST_CASE("vote properties under random ballots") {
    std::mt19937_64 rng(3);
    const std::vector<std::string> names = {"red", "Red.", "blue", "the blue", "green", "GREEN!"};
    std::uniform_int_distribution<std::size_t> pick(0, names.size() - 1);
    for (int t = 0; t < 500; ++t) {
        std::vector<std::string> ballots(1 + t % 9);
        for (auto& b : ballots) b = names[pick(rng)];
        auto out = vote(ballots, kNorm);
        int total = 0, best = 0;
        for (const auto& g : out.tally) {
            total += g.count;
            best = std::max(best, g.count);
        }
        CHECK(total == static_cast<int>(ballots.size()));
        // The winner is a raw ballot from a largest group, and the earliest
        // such group.
        CHECK(std::find(ballots.begin(), ballots.end(), out.winner) != ballots.end());
        auto first_max = std::find_if(out.tally.begin(), out.tally.end(), [&](auto& g) { return g.count == best; });
        CHECK(kNorm(out.winner) == first_max->key);
        CHECK(out.winner == first_max->representative);
    }
}

TEST_CASE("30-path consistency fixture votes racing") {
    ReplayBackend backend(testing::fixture("replay/consistency_racing.jsonl"));
    auto result = self_consistency(think(fixtures::kConsistencyQuestion), std::string(fixtures::kConsistencyImage),
                                   backend, ConsistencyConfig{}, kNorm);
    CHECK(result.answer == "racing");
    CHECK(result.successes == fixtures::kConsistencyPaths);
    REQUIRE(result.vote.tally.size() == 3);
    CHECK(result.vote.tally[0].key == normalize("racing"));
    CHECK(result.vote.tally[0].count == fixtures::kRacingVotes);
    CHECK(result.warnings.empty());
}

TEST_CASE("self consistency requests and failures") {
    std::vector<BackendRequest> seen;
    std::mutex mu;
    CallbackBackend flaky("flaky", [&](const BackendRequest& r) {
        {
            std::lock_guard lock(mu);
            seen.push_back(r);
        }
        if (*r.gen.seed % 3 != 0) throw Error(ErrorKind::BackendTransport, "drop");
        return testing::texts({"Because. The answer is cat."});
    });
    ConsistencyConfig cfg{6, 0.9, true};
    auto result = self_consistency(think("What animal?"), std::string("cat.jpg"), flaky, cfg, kNorm, 100, 3);
    CHECK(result.successes == 2);
    CHECK(result.answer == "cat");
    CHECK(result.warnings.size() == 1);
    CHECK_FALSE(result.paths[1].has_value());
    REQUIRE(seen.size() == 6);
    std::vector<std::int64_t> seeds;
    for (const auto& r : seen) {
        CHECK(r.gen.mode == DecodeMode::Sample);
        CHECK(r.gen.temperature == 0.9);
        CHECK(r.gen.omit_image);
        CHECK(r.purpose == Purpose::Rationale);
        seeds.push_back(*r.gen.seed);
    }
    std::sort(seeds.begin(), seeds.end());
    CHECK(seeds == std::vector<std::int64_t>{100, 101, 102, 103, 104, 105});

    CallbackBackend dead("dead", [](const BackendRequest&) -> BackendResponse {
        throw Error(ErrorKind::BackendTransport, "down");
    });
    CHECK_THROWS_AS(self_consistency(think("Q?"), std::nullopt, dead, ConsistencyConfig{}, kNorm), Error);

    PromptContext ctx;
    ctx.question = "Q?";
    auto standard = render(builtin_registry().at("qa"), ctx);
    CHECK_THROWS_AS(self_consistency(standard, std::nullopt, dead, ConsistencyConfig{}, kNorm), Error);
    CHECK_THROWS_AS(self_consistency(think("Q?"), std::nullopt, dead, ConsistencyConfig{0, 0.7}, kNorm), Error);
}

TEST_CASE("single-pass and two-stage CoT against the recorded fixture") {
    ReplayBackend backend(testing::fixture("replay/cot_racing.jsonl"));
    PromptContext ctx;
    ctx.question = fixtures::kRacingQuestion;
    const std::string image(fixtures::kRacingImage);
    auto prompt = think(fixtures::kRacingQuestion);

    auto single = cot_answer(prompt, image, backend, preset("rationale"));
    CHECK(single.answer == "racing");
    CHECK(single.rationale == "A motorcycle can be used for racing. Racing is a sport.");
    CHECK(single.prompts.size() == 1);

    TwoStageConfig cfg{&builtin_registry().at("qa"), preset("rationale"), preset("answer")};
    auto iter = cot_iterative(ctx, prompt, image, backend, cfg);
    CHECK(iter.answer == "racing");
    CHECK(iter.rationale == "A motorcycle can be used for racing.");
    REQUIRE(iter.prompts.size() == 2);
    CHECK(iter.prompts[1] ==
          "Question: What sport can you use this for? A motorcycle can be used for racing. Answer:");

    auto context = cot_context(ctx, prompt, image, backend, cfg);
    CHECK(context.answer == "motorcycle racing");
    REQUIRE(context.prompts.size() == 2);
    CHECK(context.prompts[1] == "Context: A motorcycle can be used for racing. Racing is a sport. Question: What "
                                "sport can you use this for? Answer:");
    CHECK(context.raws.size() == 2);
}

TEST_CASE("two-stage CoT rejects a non-standard answer template") {
    CallbackBackend never("never", [](const BackendRequest&) { return testing::texts({"x"}); });
    PromptContext ctx;
    ctx.question = "Q?";
    TwoStageConfig cfg{&builtin_registry().at("think-qa"), preset("rationale"), preset("answer")};
    CHECK_THROWS_AS(cot_iterative(ctx, think("Q?"), std::nullopt, never, cfg), Error);
    cfg.answer_template = nullptr;
    CHECK_THROWS_AS(cot_context(ctx, think("Q?"), std::nullopt, never, cfg), Error);
}

TEST_CASE("empty extraction is flagged") {
    CallbackBackend blank("blank", [](const BackendRequest&) { return testing::texts({""}); });
    auto out = cot_answer(think("Q?"), std::nullopt, blank, preset("rationale"));
    CHECK(out.answer.empty());
    REQUIRE(out.warnings.size() == 1);
    CHECK(out.warnings[0].starts_with("ExtractionEmpty"));
}
