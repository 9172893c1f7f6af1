#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "test_support.hpp"
#include "vqa/exemplar.hpp"

using namespace vqa;

namespace {

Exemplar with_embedding(Embedding e, std::string q = "q") {
    Exemplar x;
    x.question = std::move(q);
    x.answer = "a";
    x.embedding = std::move(e);
    return x;
}

// Unit query [1,0]; pool item with similarity s is [s, sqrt(1-s^2)].
Embedding at_similarity(double s) { return {s, std::sqrt(std::max(0.0, 1.0 - s * s))}; }

}  // namespace

TEST_CASE("cosine similarity") {
    CHECK(cosine_similarity(std::vector<double>{3, 4}, std::vector<double>{3, 4}) == doctest::Approx(1.0));
    CHECK(cosine_similarity(std::vector<double>{1, 0}, std::vector<double>{0, 1}) == 0.0);
    CHECK(cosine_similarity(std::vector<double>{1, 0}, std::vector<double>{1, 1}) ==
          doctest::Approx(0.70710678).epsilon(1e-9));
    try {
        cosine_similarity(std::vector<double>{1, 0}, std::vector<double>{1, 0, 0});
        FAIL("expected DimMismatch");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::DimMismatch);
    }
    try {
        cosine_similarity(std::vector<double>{0, 0}, std::vector<double>{1, 0});
        FAIL("expected ZeroVector");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::ZeroVector);
    }
}

TEST_CASE("selection respects the cap and k") {
    const Embedding query = {1, 0};
    std::vector<Exemplar> pool = {with_embedding(at_similarity(0.9), "a"), with_embedding(at_similarity(0.55), "b"),
                                  with_embedding(at_similarity(0.5), "c"), with_embedding(at_similarity(0.4), "d")};
    auto picked = select_exemplars(query, pool, {2, 0.6});
    REQUIRE(picked.size() == 2);
    CHECK(picked[0].question == "b");
    CHECK(picked[1].question == "c");
    CHECK(select_exemplars(query, pool, {0, 0.6}).empty());
    CHECK(select_exemplars(query, pool, {10, 0.6}).size() == 3);

    SUBCASE("self duplicate excluded") {
        pool.push_back(with_embedding(query, "self"));
        for (const auto& e : select_exemplars(query, pool, {5, 0.6})) CHECK(e.question != "self");
    }
    SUBCASE("boundary is strict") {
        std::vector<Exemplar> edge = {with_embedding({0.6, 0.8}, "edge"), with_embedding(at_similarity(0.3), "ok")};
        auto out = select_exemplars(query, edge, {5, 0.6});
        REQUIRE(out.size() == 1);
        CHECK(out[0].question == "ok");
    }
    SUBCASE("ties keep pool order") {
        std::vector<Exemplar> tied = {with_embedding({1, 1}, "first"), with_embedding({1, 1}, "second"),
                                      with_embedding({1, 1}, "third")};
        auto idx = select_exemplar_indices(std::vector<double>{1, 0}, tied, {2, 0.9});
        CHECK(idx == std::vector<std::size_t>{0, 1});
    }
}

TEST_CASE("selection is permutation invariant with distinct similarities") {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> g;
    std::vector<Exemplar> pool;
    for (int i = 0; i < 200; ++i) pool.push_back(with_embedding({g(rng), g(rng), g(rng), g(rng)}, std::to_string(i)));
    const Embedding q = {g(rng), g(rng), g(rng), g(rng)};
    auto base = select_exemplars(q, pool, {5, 0.6});
    for (int trial = 0; trial < 10; ++trial) {
        std::shuffle(pool.begin(), pool.end(), rng);
        CHECK(select_exemplars(q, pool, {5, 0.6}) == base);
    }
}

TEST_CASE("hash embedder") {
    HashEmbedder h;
    auto a = h.embed("What color is the floor?");
    CHECK(a.size() == 256);
    CHECK(a == h.embed("What color is the floor?"));
    double norm = std::sqrt(std::inner_product(a.begin(), a.end(), a.begin(), 0.0));
    CHECK(norm == doctest::Approx(1.0));
    auto b = h.embed("What sport is this?");
    CHECK(cosine_similarity(a, b) < 1.0);
    CHECK(cosine_similarity(a, h.embed("What colour is the floor?")) >
          cosine_similarity(a, h.embed("Who is riding the horse?")));
    try {
        h.embed("   ");
        FAIL("expected EmbeddingUnavailable");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::EmbeddingUnavailable);
    }
}

TEST_CASE("pool files") {
    testing::TempDir dir;
    auto path = dir / "pool.jsonl";
    testing::write_file(path,
                        "{\"question\":\"What sport is this?\",\"answer\":\"surfing\"}\n"
                        "\n"
                        "{\"question\":\"What color is the floor?\",\"answer\":\"brown\",\"caption\":\"A wooden "
                        "floor.\",\"rationale\":\"It is wood.\",\"embedding\":[1,0]}\n");
    auto raw = load_pool(path);
    REQUIRE(raw.size() == 2);
    CHECK(raw[0].embedding.empty());
    CHECK(raw[1].caption == "A wooden floor.");

    SUBCASE("mixed dimensions after embedding are rejected") {
        HashEmbedder h;
        CHECK_THROWS_AS(load_pool_embedded(path, h), Error);
    }
    SUBCASE("embed and rewrite") {
        testing::write_file(path,
                            "{\"question\":\"What sport is this?\",\"answer\":\"surfing\"}\n"
                            "{\"question\":\"What color is the floor?\",\"answer\":\"brown\"}\n");
        HashEmbedder h(32);
        auto pool = load_pool_embedded(path, h);
        CHECK(pool[0].embedding.size() == 32);
        auto again = load_pool(path);
        CHECK(again == pool);
    }
    SUBCASE("bad line names the line") {
        testing::write_file(path, "{\"question\":\"q\",\"answer\":\"a\"}\n{\"answer\":\"a\"}\n");
        try {
            load_pool(path);
            FAIL("expected LoadError");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::LoadError);
            CHECK(std::string(e.what()).find("line 2") != std::string::npos);
        }
    }
}
