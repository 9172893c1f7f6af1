#pragma once

#include <atomic>
#include <chrono>
#include <memory>
#include <semaphore>
#include <string>

#include <nlohmann/json.hpp>

#include "vqa/backend.hpp"
#include "vqa/exemplar.hpp"

namespace vqa {

struct HttpBackendConfig {
    /// Base URL, e.g. "http://127.0.0.1:8000". A path component is kept as a
    /// prefix for the request paths below.
    std::string endpoint;
    std::string model;
    /// Name of the environment variable holding the bearer token, if any.
    std::string api_key_env;
    std::string chat_path = "/v1/chat/completions";
    std::string embeddings_path = "/v1/embeddings";
    std::chrono::milliseconds timeout{std::chrono::seconds(120)};
    int max_retries = 3;
    std::chrono::milliseconds backoff_initial{200};
    std::chrono::milliseconds backoff_cap{5000};
    std::size_t max_in_flight = 4;
};

/// Chat/completions-style JSON payload for a request. Beam settings travel as
/// extension fields (use_beam_search, best_of, length_penalty) unless
/// `with_extensions` is false. The image is attached as an image_url part
/// (remote URL, data URL, or a local file inlined as base64) unless the
/// request omits it.
nlohmann::json build_chat_payload(const BackendRequest& req, const std::string& model, bool with_extensions = true);

/// Client for an OpenAI-compatible inference server.
///
/// Transport failures, 429 and 5xx responses are retried with exponential
/// backoff up to max_retries. Other 4xx responses fail immediately, except
/// that a rejected beam request is retried once as greedy. Malformed bodies
/// raise BackendError(protocol). Safe to share across threads; concurrent
/// calls beyond max_in_flight block.
class HttpBackend final : public Backend {
public:
    explicit HttpBackend(HttpBackendConfig cfg);

    BackendResponse complete(const BackendRequest& req) override;
    std::string id() const override { return "http:" + cfg_.model; }

    const HttpBackendConfig& config() const { return cfg_; }

    /// POST a JSON body to `path` with the retry policy above.
    nlohmann::json post_json(const std::string& path, const nlohmann::json& body);

private:
    HttpBackendConfig cfg_;
    std::unique_ptr<std::counting_semaphore<1024>> in_flight_;
};

/// Embeddings-style endpoint: {"model", "input"} -> data[0].embedding.
/// Any failure surfaces as EmbeddingUnavailable.
class HttpEmbeddingProvider final : public EmbeddingProvider {
public:
    explicit HttpEmbeddingProvider(HttpBackendConfig cfg) : backend_(std::move(cfg)) {}

    Embedding embed(std::string_view text) override;
    std::size_t dimension() const override { return dimension_; }

private:
    HttpBackend backend_;
    std::atomic<std::size_t> dimension_{0};
};

}  // namespace vqa
