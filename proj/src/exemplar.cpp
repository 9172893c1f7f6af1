#include "vqa/exemplar.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "vqa/error.hpp"
#include "vqa/text.hpp"

namespace vqa {

using nlohmann::json;

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size())
        throw Error(ErrorKind::DimMismatch,
                    "vectors of size " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
    double dot = 0.0;
    double na = 0.0;
    double nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) throw Error(ErrorKind::ZeroVector, "cosine similarity of a zero vector");
    return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

std::vector<std::size_t> select_exemplar_indices(std::span<const double> query, std::span<const Exemplar> pool,
                                                 const SelectionConfig& cfg) {
    if (!(cfg.similarity_cap > 0.0 && cfg.similarity_cap <= 1.0))
        throw Error(ErrorKind::Precondition, "similarity cap must lie in (0, 1]");
    if (cfg.k == 0 || pool.empty()) return {};

    struct Candidate {
        double sim;
        std::size_t index;
    };
    std::vector<Candidate> kept;
    kept.reserve(pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i) {
        double sim = cosine_similarity(query, pool[i].embedding);
        if (sim < cfg.similarity_cap) kept.push_back({sim, i});
    }
    const auto take = std::min(cfg.k, kept.size());
    std::partial_sort(kept.begin(), kept.begin() + static_cast<std::ptrdiff_t>(take), kept.end(),
                      [](const Candidate& x, const Candidate& y) {
                          return x.sim != y.sim ? x.sim > y.sim : x.index < y.index;
                      });
    std::vector<std::size_t> out;
    out.reserve(take);
    for (std::size_t i = 0; i < take; ++i) out.push_back(kept[i].index);
    return out;
}

std::vector<Exemplar> select_exemplars(std::span<const double> query, std::span<const Exemplar> pool,
                                       const SelectionConfig& cfg) {
    std::vector<Exemplar> out;
    for (auto i : select_exemplar_indices(query, pool, cfg)) out.push_back(pool[i]);
    return out;
}

namespace {

std::uint64_t fnv1a(std::string_view kind, std::string_view feature) {
    std::uint64_t h = 14695981039346656037ull;
    auto mix = [&](std::string_view s) {
        for (unsigned char c : s) {
            h ^= c;
            h *= 1099511628211ull;
        }
    };
    mix(kind);
    mix("\x1f");
    mix(feature);
    return h;
}

std::vector<std::string> word_tokens(std::string_view s) {
    std::vector<std::string> out;
    std::string cur;
    for (unsigned char c : s) {
        if (std::isalnum(c)) {
            cur += static_cast<char>(std::tolower(c));
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

}  // namespace

Embedding HashEmbedder::embed(std::string_view input) {
    auto t = text::collapse_spaces(text::to_lower(input));
    if (t.empty()) throw Error(ErrorKind::EmbeddingUnavailable, "cannot embed empty text");
    if (dimension_ == 0) throw Error(ErrorKind::EmbeddingUnavailable, "embedder dimension is zero");

    Embedding v(dimension_, 0.0);
    auto add = [&](std::string_view kind, std::string_view feature, double weight) {
        auto h = fnv1a(kind, feature);
        double sign = (h >> 63) ? -1.0 : 1.0;
        v[h % dimension_] += sign * weight;
    };
    auto words = word_tokens(t);
    for (std::size_t i = 0; i < words.size(); ++i) {
        add("w", words[i], 1.0);
        if (i + 1 < words.size()) add("b", words[i] + " " + words[i + 1], 0.5);
    }
    auto padded = " " + t + " ";
    for (std::size_t i = 0; i + 3 <= padded.size(); ++i) add("c", std::string_view(padded).substr(i, 3), 0.25);

    double norm = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
    if (norm > 0.0)
        for (auto& x : v) x /= norm;
    return v;
}

namespace {

Exemplar exemplar_from_json(const json& j, std::size_t line_no) {
    auto fail = [&](const std::string& what) {
        throw Error(ErrorKind::LoadError, "pool line " + std::to_string(line_no) + ": " + what);
    };
    if (!j.is_object()) fail("expected an object");
    Exemplar ex;
    for (const char* field : {"question", "answer"}) {
        if (!j.contains(field) || !j[field].is_string()) fail(std::string("missing string field '") + field + "'");
    }
    ex.question = j["question"].get<std::string>();
    ex.answer = j["answer"].get<std::string>();
    if (text::trim(ex.question).empty()) fail("empty question");
    if (text::trim(ex.answer).empty()) fail("empty answer");
    if (j.contains("caption") && !j["caption"].is_null()) ex.caption = j["caption"].get<std::string>();
    if (j.contains("rationale") && !j["rationale"].is_null()) ex.rationale = j["rationale"].get<std::string>();
    if (j.contains("embedding") && !j["embedding"].is_null()) {
        if (!j["embedding"].is_array()) fail("embedding must be an array of numbers");
        for (const auto& x : j["embedding"]) {
            if (!x.is_number()) fail("embedding must be an array of numbers");
            ex.embedding.push_back(x.get<double>());
        }
    }
    return ex;
}

json exemplar_to_json(const Exemplar& ex) {
    json j = {{"question", ex.question}, {"answer", ex.answer}};
    if (ex.caption) j["caption"] = *ex.caption;
    if (ex.rationale) j["rationale"] = *ex.rationale;
    if (!ex.embedding.empty()) j["embedding"] = ex.embedding;
    return j;
}

}  // namespace

std::vector<Exemplar> load_pool(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::LoadError, "cannot open pool file " + path.string());
    std::vector<Exemplar> pool;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (text::trim(line).empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw Error(ErrorKind::LoadError, "pool line " + std::to_string(line_no) + ": " + e.what());
        }
        pool.push_back(exemplar_from_json(j, line_no));
    }
    return pool;
}

void save_pool(const std::filesystem::path& path, std::span<const Exemplar> pool) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) throw Error(ErrorKind::LoadError, "cannot write pool file " + tmp.string());
        for (const auto& ex : pool) out << exemplar_to_json(ex).dump() << '\n';
    }
    std::filesystem::rename(tmp, path);
}

std::size_t embed_missing(std::vector<Exemplar>& pool, EmbeddingProvider& provider) {
    std::size_t added = 0;
    for (auto& ex : pool) {
        if (!ex.embedding.empty()) continue;
        ex.embedding = provider.embed(ex.question);
        ++added;
    }
    if (!pool.empty()) {
        const auto dim = pool.front().embedding.size();
        for (const auto& ex : pool)
            if (ex.embedding.size() != dim)
                throw Error(ErrorKind::DimMismatch, "pool mixes embedding dimensions " + std::to_string(dim) +
                                                        " and " + std::to_string(ex.embedding.size()));
    }
    return added;
}

std::vector<Exemplar> load_pool_embedded(const std::filesystem::path& path, EmbeddingProvider& provider) {
    auto pool = load_pool(path);
    if (embed_missing(pool, provider) > 0) save_pool(path, pool);
    return pool;
}

}  // namespace vqa
