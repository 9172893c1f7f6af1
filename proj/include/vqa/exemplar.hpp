#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace vqa {

using Embedding = std::vector<double>;

struct Exemplar {
    std::string question;
    std::string answer;
    std::optional<std::string> caption;
    std::optional<std::string> rationale;
    Embedding embedding;

    bool operator==(const Exemplar&) const = default;
};

struct SelectionConfig {
    std::size_t k = 5;
    /// Candidates at or above this similarity are treated as near-duplicates.
    double similarity_cap = 0.6;
};

double cosine_similarity(std::span<const double> a, std::span<const double> b);

/// Top-k pool items by cosine similarity among those strictly below the cap,
/// most similar first, ties in pool order.
std::vector<Exemplar> select_exemplars(std::span<const double> query, std::span<const Exemplar> pool,
                                       const SelectionConfig& cfg);

/// Same selection, returned as pool indices.
std::vector<std::size_t> select_exemplar_indices(std::span<const double> query,
                                                 std::span<const Exemplar> pool,
                                                 const SelectionConfig& cfg);

class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;
    /// Throws EmbeddingUnavailable on empty text or transport failure.
    virtual Embedding embed(std::string_view text) = 0;
    virtual std::size_t dimension() const = 0;
};

/// Deterministic feature-hashing embedder: word unigrams, word bigrams and
/// character trigrams hashed (FNV-1a) into signed buckets. Texts sharing words
/// land close together, so it doubles as a crude stand-in for a sentence
/// encoder in offline runs.
class HashEmbedder final : public EmbeddingProvider {
public:
    explicit HashEmbedder(std::size_t dimension = 256) : dimension_(dimension) {}

    Embedding embed(std::string_view text) override;
    std::size_t dimension() const override { return dimension_; }

private:
    std::size_t dimension_;
};

/// Pool file: JSONL of {question, answer, caption?, rationale?, embedding?}.
std::vector<Exemplar> load_pool(const std::filesystem::path& path);
void save_pool(const std::filesystem::path& path, std::span<const Exemplar> pool);

/// Embeds every exemplar whose embedding is missing. Returns how many were
/// embedded. Throws DimMismatch when the pool ends up with mixed dimensions.
std::size_t embed_missing(std::vector<Exemplar>& pool, EmbeddingProvider& provider);

/// Loads a pool, fills in missing embeddings and rewrites the file when any
/// were added.
std::vector<Exemplar> load_pool_embedded(const std::filesystem::path& path,
                                         EmbeddingProvider& provider);

}  // namespace vqa
