#include "vqa/backend.hpp"

#include <algorithm>
#include <atomic>
#include <thread>

#include "vqa/digest.hpp"

namespace vqa {

using nlohmann::json;

std::string_view to_string(DecodeMode mode) {
    switch (mode) {
        case DecodeMode::Beam: return "beam";
        case DecodeMode::Sample: return "sample";
        case DecodeMode::Greedy: return "greedy";
    }
    return "greedy";
}

DecodeMode decode_mode_from_string(std::string_view name) {
    if (name == "beam") return DecodeMode::Beam;
    if (name == "sample") return DecodeMode::Sample;
    if (name == "greedy") return DecodeMode::Greedy;
    throw Error(ErrorKind::ConfigError, "unknown decode mode '" + std::string(name) + "'");
}

std::string_view to_string(Purpose purpose) {
    switch (purpose) {
        case Purpose::Answer: return "answer";
        case Purpose::Caption: return "caption";
        case Purpose::Rationale: return "rationale";
        case Purpose::Parse: return "parse";
        case Purpose::Convert: return "convert";
        case Purpose::Embed: return "embed";
    }
    return "answer";
}

Purpose purpose_from_string(std::string_view name) {
    for (auto p : {Purpose::Answer, Purpose::Caption, Purpose::Rationale, Purpose::Parse, Purpose::Convert,
                   Purpose::Embed})
        if (to_string(p) == name) return p;
    throw Error(ErrorKind::ConfigError, "unknown request purpose '" + std::string(name) + "'");
}

void validate(const GenerationConfig& gen) {
    if (gen.mode == DecodeMode::Beam && gen.beam_size < 1)
        throw Error(ErrorKind::Precondition, "beam search needs beam_size >= 1");
    if (gen.mode == DecodeMode::Sample && !(gen.temperature > 0.0))
        throw Error(ErrorKind::Precondition, "sampling needs temperature > 0");
    if (gen.n < 1) throw Error(ErrorKind::Precondition, "n must be >= 1");
    if (gen.max_new_tokens < 1) throw Error(ErrorKind::Precondition, "max_new_tokens must be >= 1");
}

json to_json(const GenerationConfig& gen) {
    return {{"mode", to_string(gen.mode)},
            {"beam_size", gen.beam_size},
            {"temperature", gen.temperature},
            {"n", gen.n},
            {"max_new_tokens", gen.max_new_tokens},
            {"length_penalty", gen.length_penalty},
            {"seed", gen.seed ? json(*gen.seed) : json(nullptr)},
            {"omit_image", gen.omit_image}};
}

GenerationConfig generation_config_from_json(const json& j) {
    GenerationConfig gen;
    try {
        if (j.contains("mode")) gen.mode = decode_mode_from_string(j.at("mode").get<std::string>());
        gen.beam_size = j.value("beam_size", gen.beam_size);
        gen.temperature = j.value("temperature", gen.temperature);
        gen.n = j.value("n", gen.n);
        gen.max_new_tokens = j.value("max_new_tokens", gen.max_new_tokens);
        gen.length_penalty = j.value("length_penalty", gen.length_penalty);
        if (j.contains("seed") && !j.at("seed").is_null()) gen.seed = j.at("seed").get<std::int64_t>();
        gen.omit_image = j.value("omit_image", gen.omit_image);
    } catch (const json::exception& e) {
        throw Error(ErrorKind::ConfigError, std::string("generation config: ") + e.what());
    }
    return gen;
}

void validate(const BackendRequest& req) {
    validate(req.gen);
    if (req.image_ref && (req.purpose == Purpose::Parse || req.purpose == Purpose::Convert ||
                          req.purpose == Purpose::Embed))
        throw Error(ErrorKind::Precondition,
                    std::string("text-only purpose '") + std::string(to_string(req.purpose)) + "' carries an image");
}

std::optional<std::string> wire_image(const BackendRequest& req) {
    if (req.gen.omit_image) return std::nullopt;
    return req.image_ref;
}

json to_json(const BackendRequest& req) {
    return {{"prompt", req.prompt},
            {"image_ref", req.image_ref ? json(*req.image_ref) : json(nullptr)},
            {"gen", to_json(req.gen)},
            {"purpose", to_string(req.purpose)}};
}

BackendRequest backend_request_from_json(const json& j) {
    BackendRequest req;
    req.prompt = j.at("prompt").get<std::string>();
    if (j.contains("image_ref") && !j["image_ref"].is_null()) req.image_ref = j["image_ref"].get<std::string>();
    req.gen = generation_config_from_json(j.at("gen"));
    req.purpose = purpose_from_string(j.value("purpose", std::string("answer")));
    return req;
}

json to_json(const BackendResponse& resp) {
    json j = {{"texts", resp.texts}, {"latency_ms", resp.latency_ms}, {"backend_id", resp.backend_id}};
    if (!resp.scores.empty()) j["scores"] = resp.scores;
    return j;
}

BackendResponse backend_response_from_json(const json& j) {
    BackendResponse resp;
    resp.texts = j.at("texts").get<std::vector<std::string>>();
    if (j.contains("scores")) resp.scores = j["scores"].get<std::vector<double>>();
    resp.latency_ms = j.value("latency_ms", 0.0);
    resp.backend_id = j.value("backend_id", std::string());
    return resp;
}

std::string request_digest(const BackendRequest& req) {
    // nlohmann::json objects keep keys sorted, so dump() is canonical.
    json canonical = {{"prompt", req.prompt},
                      {"image_ref", req.image_ref ? json(*req.image_ref) : json(nullptr)},
                      {"gen", to_json(req.gen)}};
    return sha256_hex(canonical.dump());
}

std::vector<BatchSlot> complete_batch(Backend& backend, std::span<const BackendRequest> reqs,
                                      std::size_t max_in_flight) {
    if (max_in_flight < 1) throw Error(ErrorKind::Precondition, "max_in_flight must be >= 1");
    std::vector<BatchSlot> slots(reqs.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < reqs.size(); i = next++) {
            try {
                slots[i].response = backend.complete(reqs[i]);
            } catch (const Error& e) {
                slots[i].error = e;
            } catch (const std::exception& e) {
                slots[i].error = Error(ErrorKind::BackendProtocol, e.what());
            }
        }
    };
    const auto workers = std::min(max_in_flight, reqs.size());
    if (workers <= 1) {
        worker();
        return slots;
    }
    {
        std::vector<std::jthread> pool;
        pool.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    }
    return slots;
}

GenerationConfig preset(std::string_view purpose) {
    GenerationConfig g;
    if (purpose == "answer" || purpose == "verbose-answer") {
        g.mode = DecodeMode::Beam;
        g.beam_size = 3;
        g.max_new_tokens = purpose == "answer" ? 10 : 50;
        g.length_penalty = -1.0;
    } else if (purpose == "caption" || purpose == "rationale") {
        g.mode = DecodeMode::Beam;
        g.beam_size = 3;
        g.max_new_tokens = 128;
        g.length_penalty = 1.0;
    } else if (purpose == "consistency-path" || purpose == "dense-caption") {
        g.mode = DecodeMode::Sample;
        g.temperature = 0.7;
        g.max_new_tokens = 128;
        g.length_penalty = 1.0;
    } else if (purpose == "parse") {
        g.mode = DecodeMode::Greedy;
        g.max_new_tokens = 10;
    } else if (purpose == "convert") {
        g.mode = DecodeMode::Greedy;
        g.max_new_tokens = 64;
    } else {
        throw Error(ErrorKind::UnknownPreset, "no generation preset named '" + std::string(purpose) + "'");
    }
    return g;
}

}  // namespace vqa
