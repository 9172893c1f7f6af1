#pragma once

// A stand-in model whose every reply is a pure function of the request, so
// recorded and replayed runs can be compared byte for byte.

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

#include "vqa/backend.hpp"
#include "vqa/text.hpp"

namespace synthetic {

inline constexpr std::array<std::string_view, 8> kVocab = {"red", "blue", "kitchen", "2", "yes", "no", "dog",
                                                           "surfing"};

inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 1469598103934665603ULL) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::uint64_t request_hash(const vqa::BackendRequest& r) {
    auto h = fnv1a(r.prompt);
    h = fnv1a(r.image_ref.value_or("-"), h);
    h = fnv1a(std::to_string(r.gen.seed.value_or(-1)), h);
    return h;
}

inline std::string word(std::uint64_t h) { return std::string(kVocab[h % kVocab.size()]); }

// Short-answer reply to the parsing prompt: the last token of the verbose
// answer on its final "Input:" line.
inline std::string parse_reply(const std::string& prompt) {
    auto end = prompt.rfind(" Short answer:");
    auto words = vqa::text::split_whitespace(prompt.substr(0, end));
    auto last = words.empty() ? std::string("none") : words.back();
    while (!last.empty() && !std::isalnum(static_cast<unsigned char>(last.back()))) last.pop_back();
    return last.empty() ? "none" : last;
}

inline vqa::BackendResponse reply(const vqa::BackendRequest& r) {
    const auto h = request_hash(r);
    vqa::BackendResponse out;
    out.backend_id = "synthetic";
    switch (r.purpose) {
        case vqa::Purpose::Caption:
            if (!r.image_ref) {
                out.texts = {"A photo of a " + word(h) + " scene."};
            } else {
                for (int i = 0; i < r.gen.n; ++i) out.texts.push_back("a " + word(h >> (8 * (i % 7))) + " thing");
            }
            break;
        case vqa::Purpose::Rationale:
            out.texts = {"The image shows a " + word(h >> 8) + ". The final answer: " + word(h) + "."};
            break;
        case vqa::Purpose::Parse:
            out.texts = {parse_reply(r.prompt)};
            break;
        case vqa::Purpose::Convert:
            out.texts = {"Is there a " + word(h) + "?"};
            break;
        default:
            // One answer in three is verbose, so parsing has work to do.
            if (h % 3 == 0)
                out.texts = {"I think it is probably " + word(h >> 4)};
            else
                out.texts = {word(h >> 4)};
            break;
    }
    return out;
}

inline std::shared_ptr<vqa::Backend> backend() {
    return std::make_shared<vqa::CallbackBackend>("synthetic", reply);
}

}  // namespace synthetic
