#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "vqa/backend.hpp"
#include "vqa/templates.hpp"

namespace vqa {

enum class CaptionStrategy { Dense, Grounded, QuestionGuided };

std::string_view to_string(CaptionStrategy s);
CaptionStrategy caption_strategy_from_string(std::string_view name);

struct CaptionRequest {
    std::string image_ref;
    CaptionStrategy strategy = CaptionStrategy::QuestionGuided;
    std::optional<std::string> question;
    int n_samples = 5;
};

void validate(const CaptionRequest& req);

struct Caption {
    /// Single paragraph, trimmed, no newlines.
    std::string text;
    CaptionStrategy strategy = CaptionStrategy::QuestionGuided;
    std::vector<std::string> provenance;

    bool operator==(const Caption&) const = default;
};

/// n captions from the captioning backend prompted with "A photo of", in
/// backend order. Any failure discards the partial batch.
std::vector<std::string> sample_raw_captions(const std::string& image_ref, int n, Backend& backend,
                                             GenerationConfig gen = preset("dense-caption"));

/// The fusion request text: the fusion asset, the raw captions, "Description:".
std::string build_fusion_prompt(std::span<const std::string> raws);

/// Text-only fusion of several raw captions into one description.
Caption fuse_captions(std::span<const std::string> raws, Backend& backend,
                      const GenerationConfig& gen = preset("caption"));

Caption question_guided_caption(const std::string& image_ref, std::string_view question, Backend& backend,
                                const GenerationConfig& gen = preset("caption"));

/// Grounded captions pass through untouched apart from whitespace cleanup;
/// entity spans are not parsed.
Caption grounded_caption(const std::string& image_ref, Backend& backend,
                         const GenerationConfig& gen = preset("caption"));

PromptContext attach_caption(const PromptContext& ctx, const Caption& caption);

/// (image_ref, strategy, question digest) -> Caption, optionally persisted as
/// JSONL of {key, strategy, text, provenance}. Later entries for the same key
/// replace earlier ones.
class CaptionCache {
public:
    CaptionCache() = default;
    explicit CaptionCache(const std::filesystem::path& path);

    static std::string key(const std::string& image_ref, CaptionStrategy strategy,
                           const std::optional<std::string>& question);

    std::optional<Caption> get(const std::string& key) const;
    void put(const std::string& key, const Caption& caption);
    std::size_t size() const;

private:
    mutable std::shared_mutex mu_;
    std::unordered_map<std::string, Caption> entries_;
    std::ofstream out_;
};

struct CaptionBackends {
    std::shared_ptr<Backend> captioner;           // dense sampling
    std::shared_ptr<Backend> grounder;            // grounding-capable server
    std::shared_ptr<Backend> question_captioner;  // question-guided server
    std::shared_ptr<Backend> fuser;               // text-only LLM
};

/// Produces captions for any strategy through the configured backends,
/// consulting the cache first.
class CaptionPipeline {
public:
    CaptionPipeline(CaptionBackends backends, std::shared_ptr<CaptionCache> cache);

    Caption caption(const CaptionRequest& req);

private:
    CaptionBackends backends_;
    std::shared_ptr<CaptionCache> cache_;
};

}  // namespace vqa
