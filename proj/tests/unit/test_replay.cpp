#include <doctest.h>

#include <thread>

#include "test_support.hpp"
#include "vqa/replay.hpp"

using namespace vqa;

namespace {

BackendRequest request(std::string prompt) {
    return {std::move(prompt), std::string("img.jpg"), preset("answer"), Purpose::Answer};
}

}  // namespace

TEST_CASE("record then replay") {
    testing::TempDir dir;
    const auto store = dir / "store.jsonl";
    int calls = 0;
    auto live = std::make_shared<CallbackBackend>("live", [&](const BackendRequest& r) {
        ++calls;
        return testing::texts({"answer to " + r.prompt});
    });
    std::vector<BackendResponse> recorded;
    {
        auto rec = record_replay(ReplayMode::Record, store, live);
        for (int i = 0; i < 5; ++i) recorded.push_back(rec->complete(request("q" + std::to_string(i))));
    }
    CHECK(calls == 5);

    auto replay = record_replay(ReplayMode::Replay, store, nullptr);
    for (int i = 0; i < 5; ++i) CHECK(replay->complete(request("q" + std::to_string(i))) == recorded[i]);
    CHECK(calls == 5);

    try {
        replay->complete(request("q0 modified"));
        FAIL("expected ReplayMiss");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::ReplayMiss);
        CHECK(std::string(e.what()).find(request_digest(request("q0 modified"))) != std::string::npos);
    }

    auto pass = record_replay(ReplayMode::Passthrough, store, live);
    pass->complete(request("fresh"));
    CHECK(calls == 6);
}

TEST_CASE("store lines carry digest, request and response") {
    testing::TempDir dir;
    const auto store = dir / "store.jsonl";
    auto live = std::make_shared<CallbackBackend>("live", [](const BackendRequest&) { return testing::texts({"x"}); });
    record_replay(ReplayMode::Record, store, live)->complete(request("q"));
    auto line = nlohmann::json::parse(testing::read_file(store));
    CHECK(line.at("digest") == request_digest(request("q")));
    CHECK(line.at("request").at("prompt") == "q");
    CHECK(line.at("response").at("texts") == nlohmann::json::array({"x"}));
}

TEST_CASE("concurrent recording appends whole lines") {
    testing::TempDir dir;
    const auto store = dir / "store.jsonl";
    auto live = std::make_shared<CallbackBackend>(
        "live", [](const BackendRequest& r) { return testing::texts({std::string(2000, 'z') + r.prompt}); });
    {
        auto rec = record_replay(ReplayMode::Record, store, live);
        std::vector<std::jthread> threads;
        for (int t = 0; t < 8; ++t)
            threads.emplace_back([&, t] {
                for (int i = 0; i < 25; ++i) rec->complete(request(std::to_string(t) + "-" + std::to_string(i)));
            });
    }
    ReplayBackend replay(store);
    CHECK(replay.size() == 200);
    CHECK(replay.complete(request("3-17")).texts.front().ends_with("3-17"));
}

TEST_CASE("replay needs a readable store and mode names parse") {
    CHECK_THROWS_AS(ReplayBackend("/nonexistent/store.jsonl"), Error);
    CHECK(replay_mode_from_string("record") == ReplayMode::Record);
    CHECK(replay_mode_from_string("replay") == ReplayMode::Replay);
    CHECK(replay_mode_from_string("passthrough") == ReplayMode::Passthrough);
    CHECK_THROWS_AS(replay_mode_from_string("maybe"), Error);
}
