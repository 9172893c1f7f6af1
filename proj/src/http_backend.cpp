#include "vqa/http_backend.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <thread>

#include <httplib.h>
#include <openssl/evp.h>
#include <spdlog/spdlog.h>

#include "vqa/text.hpp"

namespace vqa {

using nlohmann::json;

namespace {

struct SplitUrl {
    std::string origin;  // scheme://host[:port]
    std::string prefix;  // path prefix without trailing slash
};

SplitUrl split_url(const std::string& url) {
    auto scheme = url.find("://");
    auto host_start = scheme == std::string::npos ? 0 : scheme + 3;
    auto slash = url.find('/', host_start);
    if (slash == std::string::npos) return {url, ""};
    auto prefix = url.substr(slash);
    while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
    return {url.substr(0, slash), prefix};
}

std::string base64(std::string_view bytes) {
    std::string out(4 * ((bytes.size() + 2) / 3) + 1, '\0');
    int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                            reinterpret_cast<const unsigned char*>(bytes.data()), static_cast<int>(bytes.size()));
    out.resize(static_cast<std::size_t>(n));
    return out;
}

std::string mime_for(const std::string& path) {
    auto lower = text::to_lower(path);
    if (lower.ends_with(".png")) return "image/png";
    if (lower.ends_with(".gif")) return "image/gif";
    if (lower.ends_with(".webp")) return "image/webp";
    return "image/jpeg";
}

std::string image_url_for(const std::string& ref) {
    if (ref.starts_with("http://") || ref.starts_with("https://") || ref.starts_with("data:")) return ref;
    std::ifstream in(ref, std::ios::binary);
    if (!in) throw Error(ErrorKind::BackendRequest, "cannot read image file " + ref);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return "data:" + mime_for(ref) + ";base64," + base64(bytes);
}

bool retryable_status(int status) {
    return status == 408 || status == 429 || status >= 500;
}

class HttpStatusError : public Error {
public:
    HttpStatusError(int status, const std::string& body)
        : Error(retryable_status(status) ? ErrorKind::BackendTransport : ErrorKind::BackendRequest,
                "HTTP " + std::to_string(status) + ": " + body.substr(0, 512)),
          status_(status) {}
    int status() const { return status_; }

private:
    int status_;
};

}  // namespace

json build_chat_payload(const BackendRequest& req, const std::string& model, bool with_extensions) {
    json content;
    if (auto image = wire_image(req)) {
        content = json::array({{{"type", "text"}, {"text", req.prompt}},
                               {{"type", "image_url"}, {"image_url", {{"url", image_url_for(*image)}}}}});
    } else {
        content = req.prompt;
    }
    const auto& g = req.gen;
    json body = {{"model", model},
                 {"messages", json::array({{{"role", "user"}, {"content", content}}})},
                 {"n", g.n},
                 {"max_tokens", g.max_new_tokens},
                 {"temperature", g.mode == DecodeMode::Sample ? g.temperature : 0.0}};
    if (g.seed) body["seed"] = *g.seed;
    if (with_extensions && g.mode == DecodeMode::Beam) {
        body["use_beam_search"] = true;
        body["best_of"] = std::max(g.beam_size, g.n);
        body["length_penalty"] = g.length_penalty;
    }
    return body;
}

HttpBackend::HttpBackend(HttpBackendConfig cfg)
    : cfg_(std::move(cfg)),
      in_flight_(std::make_unique<std::counting_semaphore<1024>>(
          static_cast<std::ptrdiff_t>(std::clamp<std::size_t>(cfg_.max_in_flight, 1, 1024)))) {
    if (cfg_.endpoint.empty()) throw Error(ErrorKind::ConfigError, "backend endpoint is not configured");
}

json HttpBackend::post_json(const std::string& path, const json& body) {
    auto url = split_url(cfg_.endpoint);
    httplib::Headers headers;
    if (!cfg_.api_key_env.empty()) {
        if (const char* key = std::getenv(cfg_.api_key_env.c_str()); key && *key)
            headers.emplace("Authorization", std::string("Bearer ") + key);
    }
    const auto payload = body.dump();
    auto delay = cfg_.backoff_initial;

    in_flight_->acquire();
    struct Release {
        std::counting_semaphore<1024>& s;
        ~Release() { s.release(); }
    } release{*in_flight_};

    for (int attempt = 0;; ++attempt) {
        std::optional<Error> failure;
        try {
            httplib::Client client(url.origin);
            auto secs = std::chrono::duration_cast<std::chrono::seconds>(cfg_.timeout);
            auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(cfg_.timeout - secs);
            client.set_connection_timeout(secs.count(), usecs.count());
            client.set_read_timeout(secs.count(), usecs.count());
            client.set_write_timeout(secs.count(), usecs.count());
            auto res = client.Post(url.prefix + path, headers, payload, "application/json");
            if (!res) {
                failure = Error(ErrorKind::BackendTransport, httplib::to_string(res.error()));
            } else if (res->status < 200 || res->status >= 300) {
                HttpStatusError err(res->status, res->body);
                if (!retryable_status(res->status)) throw err;
                failure = err;
            } else {
                try {
                    return json::parse(res->body);
                } catch (const json::parse_error& e) {
                    throw Error(ErrorKind::BackendProtocol, std::string("invalid JSON body: ") + e.what());
                }
            }
        } catch (const Error&) {
            throw;
        } catch (const std::exception& e) {
            failure = Error(ErrorKind::BackendTransport, e.what());
        }
        if (attempt >= cfg_.max_retries)
            throw Error(ErrorKind::BackendTransport, "retries exhausted after " + std::to_string(attempt + 1) +
                                                         " attempts; last error: " + failure->what());
        spdlog::debug("backend {} attempt {} failed: {}", id(), attempt + 1, failure->what());
        std::this_thread::sleep_for(delay);
        delay = std::min(delay * 2, cfg_.backoff_cap);
    }
}

BackendResponse HttpBackend::complete(const BackendRequest& req) {
    validate(req);
    const auto start = std::chrono::steady_clock::now();
    json reply;
    try {
        reply = post_json(cfg_.chat_path, build_chat_payload(req, cfg_.model));
    } catch (const HttpStatusError& e) {
        if (req.gen.mode != DecodeMode::Beam || (e.status() != 400 && e.status() != 422)) throw;
        spdlog::warn("backend {} rejected beam-search parameters ({}); degrading to greedy decoding", id(),
                     e.what());
        reply = post_json(cfg_.chat_path, build_chat_payload(req, cfg_.model, false));
    }

    BackendResponse resp;
    resp.backend_id = id();
    try {
        const auto& choices = reply.at("choices");
        if (!choices.is_array()) throw Error(ErrorKind::BackendProtocol, "'choices' is not an array");
        for (const auto& choice : choices) {
            std::string t;
            if (choice.contains("message")) {
                const auto& c = choice.at("message").at("content");
                t = c.is_null() ? std::string() : c.get<std::string>();
            } else {
                t = choice.at("text").get<std::string>();
            }
            resp.texts.push_back(text::trim(t));
        }
    } catch (const json::exception& e) {
        throw Error(ErrorKind::BackendProtocol, std::string("unexpected response shape: ") + e.what());
    }
    if (resp.texts.size() != static_cast<std::size_t>(req.gen.n))
        throw Error(ErrorKind::BackendProtocol, "expected " + std::to_string(req.gen.n) + " completions, got " +
                                                    std::to_string(resp.texts.size()));
    resp.latency_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    return resp;
}

Embedding HttpEmbeddingProvider::embed(std::string_view input) {
    if (text::trim(input).empty()) throw Error(ErrorKind::EmbeddingUnavailable, "cannot embed empty text");
    try {
        auto reply = backend_.post_json(backend_.config().embeddings_path,
                                        {{"model", backend_.config().model}, {"input", std::string(input)}});
        auto v = reply.at("data").at(0).at("embedding").get<Embedding>();
        if (v.empty()) throw Error(ErrorKind::EmbeddingUnavailable, "empty embedding");
        std::size_t expected = 0;
        if (!dimension_.compare_exchange_strong(expected, v.size()) && expected != v.size())
            throw Error(ErrorKind::DimMismatch, "embedding dimension changed from " + std::to_string(expected) +
                                                    " to " + std::to_string(v.size()));
        return v;
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::DimMismatch || e.kind() == ErrorKind::EmbeddingUnavailable) throw;
        throw Error(ErrorKind::EmbeddingUnavailable, e.what());
    } catch (const json::exception& e) {
        throw Error(ErrorKind::EmbeddingUnavailable, std::string("unexpected response shape: ") + e.what());
    }
}

}  // namespace vqa
