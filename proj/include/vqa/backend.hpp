#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "vqa/error.hpp"

namespace vqa {

enum class DecodeMode { Beam, Sample, Greedy };

std::string_view to_string(DecodeMode mode);
DecodeMode decode_mode_from_string(std::string_view name);

struct GenerationConfig {
    DecodeMode mode = DecodeMode::Greedy;
    int beam_size = 1;
    double temperature = 1.0;
    int n = 1;
    int max_new_tokens = 10;
    double length_penalty = 0.0;
    std::optional<std::int64_t> seed;
    /// Zeroed-image ablation: the image never reaches the wire.
    bool omit_image = false;

    bool operator==(const GenerationConfig&) const = default;
};

void validate(const GenerationConfig& gen);
nlohmann::json to_json(const GenerationConfig& gen);
GenerationConfig generation_config_from_json(const nlohmann::json& j);

enum class Purpose { Answer, Caption, Rationale, Parse, Convert, Embed };

std::string_view to_string(Purpose purpose);
Purpose purpose_from_string(std::string_view name);

struct BackendRequest {
    std::string prompt;
    std::optional<std::string> image_ref;
    GenerationConfig gen;
    Purpose purpose = Purpose::Answer;
};

/// Throws Precondition when the request breaks its invariants (image on a
/// text-only purpose, invalid generation config).
void validate(const BackendRequest& req);

/// The image reference that may go on the wire: none when omitted.
std::optional<std::string> wire_image(const BackendRequest& req);

nlohmann::json to_json(const BackendRequest& req);
BackendRequest backend_request_from_json(const nlohmann::json& j);

struct BackendResponse {
    std::vector<std::string> texts;
    std::vector<double> scores;
    double latency_ms = 0.0;
    std::string backend_id;

    bool operator==(const BackendResponse&) const = default;
};

nlohmann::json to_json(const BackendResponse& resp);
BackendResponse backend_response_from_json(const nlohmann::json& j);

/// SHA-256 over the canonical (sorted-key) JSON of prompt, image_ref and
/// generation config. Stable across runs and platforms.
std::string request_digest(const BackendRequest& req);

class Backend {
public:
    virtual ~Backend() = default;
    virtual BackendResponse complete(const BackendRequest& req) = 0;
    virtual std::string id() const = 0;
};

/// Adapts a callable into a Backend. Used for scripted test doubles and for
/// producing replay fixtures.
class CallbackBackend final : public Backend {
public:
    using Fn = std::function<BackendResponse(const BackendRequest&)>;

    CallbackBackend(std::string id, Fn fn) : id_(std::move(id)), fn_(std::move(fn)) {}

    BackendResponse complete(const BackendRequest& req) override {
        validate(req);
        return fn_(req);
    }
    std::string id() const override { return id_; }

private:
    std::string id_;
    Fn fn_;
};

struct BatchSlot {
    std::optional<BackendResponse> response;
    std::optional<Error> error;

    bool ok() const { return response.has_value(); }
};

/// Responses aligned index-to-index with requests; at most max_in_flight
/// requests outstanding; a failing request only fills its own slot.
std::vector<BatchSlot> complete_batch(Backend& backend, std::span<const BackendRequest> reqs,
                                      std::size_t max_in_flight);

/// Decode presets: answer, verbose-answer, caption, rationale,
/// consistency-path, parse, convert.
GenerationConfig preset(std::string_view purpose);

}  // namespace vqa
