#include <doctest.h>

#include <atomic>
#include <chrono>
#include <thread>

#include "test_support.hpp"
#include "vqa/backend.hpp"

using namespace vqa;

TEST_CASE("presets carry the published inference settings") {
    auto answer = preset("answer");
    CHECK(answer.mode == DecodeMode::Beam);
    CHECK(answer.beam_size == 3);
    CHECK(answer.max_new_tokens == 10);
    CHECK(answer.length_penalty == -1.0);
    auto verbose = preset("verbose-answer");
    CHECK(verbose.max_new_tokens == 50);
    CHECK(verbose.length_penalty == -1.0);
    for (auto name : {"caption", "rationale"}) {
        auto g = preset(name);
        CHECK(g.mode == DecodeMode::Beam);
        CHECK(g.beam_size == 3);
        CHECK(g.max_new_tokens == 128);
        CHECK(g.length_penalty == 1.0);
    }
    auto path = preset("consistency-path");
    CHECK(path.mode == DecodeMode::Sample);
    CHECK(path.temperature == 0.7);
    CHECK(path.max_new_tokens == 128);
    try {
        preset("telepathy");
        FAIL("expected UnknownPreset");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::UnknownPreset);
    }
}

TEST_CASE("generation config validation") {
    GenerationConfig g;
    CHECK_NOTHROW(validate(g));
    g.mode = DecodeMode::Sample;
    g.temperature = 0;
    CHECK_THROWS_AS(validate(g), Error);
    g = {};
    g.n = 0;
    CHECK_THROWS_AS(validate(g), Error);
    g = {};
    g.max_new_tokens = 0;
    CHECK_THROWS_AS(validate(g), Error);
    g = {};
    g.mode = DecodeMode::Beam;
    g.beam_size = 0;
    CHECK_THROWS_AS(validate(g), Error);
}

TEST_CASE("requests: validation, wire image, json") {
    BackendRequest req{"Convert this", std::string("img.jpg"), preset("convert"), Purpose::Convert};
    CHECK_THROWS_AS(validate(req), Error);
    req.image_ref.reset();
    CHECK_NOTHROW(validate(req));

    BackendRequest ans{"Question: Q? Answer:", std::string("img.jpg"), preset("answer"), Purpose::Answer};
    CHECK(wire_image(ans) == "img.jpg");
    ans.gen.omit_image = true;
    CHECK_FALSE(wire_image(ans).has_value());

    ans.gen.seed = 42;
    auto back = backend_request_from_json(to_json(ans));
    CHECK(back.prompt == ans.prompt);
    CHECK(back.image_ref == ans.image_ref);
    CHECK(back.gen == ans.gen);
    CHECK(back.purpose == Purpose::Answer);

    BackendResponse resp{{"a", "b"}, {0.5, 0.25}, 12.5, "x"};
    CHECK(backend_response_from_json(to_json(resp)) == resp);
}

TEST_CASE("request digest") {
    BackendRequest a{"Question: Q? Answer:", std::string("img.jpg"), preset("answer"), Purpose::Answer};
    auto d = request_digest(a);
    CHECK(d.size() == 64);
    CHECK(d == request_digest(a));

    SUBCASE("independent of key order in serialized configs") {
        auto shuffled = nlohmann::json::parse(
            R"({"omit_image":false,"seed":null,"n":1,"length_penalty":-1.0,"max_new_tokens":10,)"
            R"("temperature":1.0,"beam_size":3,"mode":"beam"})");
        BackendRequest b = a;
        b.gen = generation_config_from_json(shuffled);
        CHECK(request_digest(b) == d);
    }
    SUBCASE("purpose and latency do not matter, content does") {
        BackendRequest b = a;
        b.purpose = Purpose::Caption;
        CHECK(request_digest(b) == d);
        b.prompt += " ";
        CHECK(request_digest(b) != d);
        b = a;
        b.image_ref = "other.jpg";
        CHECK(request_digest(b) != d);
        b = a;
        b.gen.seed = 1;
        CHECK(request_digest(b) != d);
        b = a;
        b.gen.omit_image = true;
        CHECK(request_digest(b) != d);
    }
}

TEST_CASE("complete_batch keeps order, bounds concurrency and isolates failures") {
    std::atomic<int> in_flight{0}, peak{0};
    CallbackBackend slow("slow", [&](const BackendRequest& r) {
        int now = ++in_flight;
        int p = peak.load();
        while (now > p && !peak.compare_exchange_weak(p, now)) {
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(5 + (std::hash<std::string>{}(r.prompt) % 7)));
        --in_flight;
        if (r.prompt == "p7") throw Error(ErrorKind::BackendTransport, "boom");
        return testing::texts({"echo " + r.prompt});
    });
    std::vector<BackendRequest> reqs;
    for (int i = 0; i < 10; ++i) reqs.push_back({"p" + std::to_string(i), std::nullopt, {}, Purpose::Answer});

    auto slots = complete_batch(slow, reqs, 2);
    REQUIRE(slots.size() == 10);
    int ok = 0;
    for (int i = 0; i < 10; ++i) {
        if (i == 7) {
            CHECK_FALSE(slots[i].ok());
            CHECK(slots[i].error->kind() == ErrorKind::BackendTransport);
        } else {
            REQUIRE(slots[i].ok());
            CHECK(slots[i].response->texts.front() == "echo p" + std::to_string(i));
            ++ok;
        }
    }
    CHECK(ok == 9);
    CHECK(peak.load() <= 2);

    peak = 0;
    auto sequential = complete_batch(slow, reqs, 1);
    CHECK(peak.load() == 1);
    for (int i = 0; i < 10; ++i) {
        CHECK(sequential[i].ok() == slots[i].ok());
        if (sequential[i].ok()) CHECK(*sequential[i].response == *slots[i].response);
    }
    CHECK_THROWS_AS(complete_batch(slow, reqs, 0), Error);
}
