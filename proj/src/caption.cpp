#include "vqa/caption.hpp"

#include <nlohmann/json.hpp>

#include "vqa/assets.hpp"
#include "vqa/digest.hpp"
#include "vqa/text.hpp"

namespace vqa {

using nlohmann::json;

std::string_view to_string(CaptionStrategy s) {
    switch (s) {
        case CaptionStrategy::Dense: return "dense";
        case CaptionStrategy::Grounded: return "grounded";
        case CaptionStrategy::QuestionGuided: return "question_guided";
    }
    return "question_guided";
}

CaptionStrategy caption_strategy_from_string(std::string_view name) {
    if (name == "dense") return CaptionStrategy::Dense;
    if (name == "grounded") return CaptionStrategy::Grounded;
    if (name == "question_guided" || name == "question-guided") return CaptionStrategy::QuestionGuided;
    throw Error(ErrorKind::ConfigError, "unknown caption strategy '" + std::string(name) + "'");
}

void validate(const CaptionRequest& req) {
    const bool has_q = req.question && !text::trim(*req.question).empty();
    if (req.strategy == CaptionStrategy::QuestionGuided && !has_q)
        throw Error(ErrorKind::Precondition, "question-guided captions need a question");
    if (req.strategy != CaptionStrategy::QuestionGuided && req.question)
        throw Error(ErrorKind::Precondition, "only question-guided captions take a question");
    if (req.strategy == CaptionStrategy::Dense && req.n_samples < 2)
        throw Error(ErrorKind::Precondition, "dense captions need at least 2 samples");
}

namespace {

BackendResponse call(Backend& backend, std::string prompt, std::optional<std::string> image_ref,
                     const GenerationConfig& gen) {
    BackendRequest req;
    req.prompt = std::move(prompt);
    req.image_ref = std::move(image_ref);
    req.gen = gen;
    req.purpose = Purpose::Caption;
    return backend.complete(req);
}

Caption single_caption(const std::string& prompt, const std::string& image_ref, Backend& backend,
                       const GenerationConfig& gen, CaptionStrategy strategy) {
    auto g = gen;
    g.n = 1;
    auto resp = call(backend, prompt, image_ref, g);
    if (resp.texts.empty()) throw Error(ErrorKind::BackendProtocol, "captioning backend returned nothing");
    Caption c{text::single_line(resp.texts.front()), strategy, {resp.texts.front()}};
    if (c.text.empty()) throw Error(ErrorKind::BackendProtocol, "captioning backend returned an empty caption");
    return c;
}

}  // namespace

std::vector<std::string> sample_raw_captions(const std::string& image_ref, int n, Backend& backend,
                                             GenerationConfig gen) {
    if (n < 1) throw Error(ErrorKind::Precondition, "need at least one caption sample");
    gen.n = n;
    auto prompt = render_captioning(builtin_registry().at("a-photo-of")).text;
    auto resp = call(backend, prompt, image_ref, gen);
    if (resp.texts.size() != static_cast<std::size_t>(n))
        throw Error(ErrorKind::BackendProtocol, "asked for " + std::to_string(n) + " captions, got " +
                                                    std::to_string(resp.texts.size()));
    std::vector<std::string> out;
    out.reserve(resp.texts.size());
    for (const auto& t : resp.texts) out.push_back(text::single_line(t));
    return out;
}

std::string build_fusion_prompt(std::span<const std::string> raws) {
    std::string out(assets::fusion_prompt());
    out += "Captions:\n";
    for (const auto& r : raws) out += "- " + text::single_line(r) + "\n";
    out += "Description:";
    return out;
}

Caption fuse_captions(std::span<const std::string> raws, Backend& backend, const GenerationConfig& gen) {
    if (raws.size() < 2) throw Error(ErrorKind::Precondition, "fusion needs at least two raw captions");
    auto g = gen;
    g.n = 1;
    auto resp = call(backend, build_fusion_prompt(raws), std::nullopt, g);
    auto fused = resp.texts.empty() ? std::string() : text::single_line(resp.texts.front());
    if (fused.empty()) throw Error(ErrorKind::FusionEmpty, "fusion backend returned an empty description");
    return {std::move(fused), CaptionStrategy::Dense, std::vector<std::string>(raws.begin(), raws.end())};
}

Caption question_guided_caption(const std::string& image_ref, std::string_view question, Backend& backend,
                                const GenerationConfig& gen) {
    if (text::trim(question).empty()) throw Error(ErrorKind::Precondition, "question-guided caption needs a question");
    auto prompt = render_captioning(builtin_registry().at("q-guided-cap"), question).text;
    return single_caption(prompt, image_ref, backend, gen, CaptionStrategy::QuestionGuided);
}

Caption grounded_caption(const std::string& image_ref, Backend& backend, const GenerationConfig& gen) {
    auto prompt = render_captioning(builtin_registry().at("a-photo-of")).text;
    return single_caption(prompt, image_ref, backend, gen, CaptionStrategy::Grounded);
}

PromptContext attach_caption(const PromptContext& ctx, const Caption& caption) {
    if (ctx.caption) throw Error(ErrorKind::CaptionAlreadySet, "context already carries a caption");
    auto out = ctx;
    out.caption = caption.text;
    return out;
}

CaptionCache::CaptionCache(const std::filesystem::path& path) {
    if (std::ifstream in(path); in) {
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (text::trim(line).empty()) continue;
            try {
                auto j = json::parse(line);
                Caption c{j.at("text").get<std::string>(),
                          caption_strategy_from_string(j.at("strategy").get<std::string>()),
                          j.value("provenance", std::vector<std::string>{})};
                entries_[j.at("key").get<std::string>()] = std::move(c);
            } catch (const json::exception& e) {
                throw Error(ErrorKind::LoadError,
                            "caption cache " + path.string() + " line " + std::to_string(line_no) + ": " + e.what());
            }
        }
    }
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    out_.open(path, std::ios::app);
    if (!out_) throw Error(ErrorKind::ConfigError, "cannot open caption cache " + path.string());
}

std::string CaptionCache::key(const std::string& image_ref, CaptionStrategy strategy,
                              const std::optional<std::string>& question) {
    return image_ref + "|" + std::string(to_string(strategy)) + "|" +
           (question ? sha256_hex(text::trim(*question)).substr(0, 16) : std::string("-"));
}

std::optional<Caption> CaptionCache::get(const std::string& key) const {
    std::shared_lock lock(mu_);
    auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    return it->second;
}

void CaptionCache::put(const std::string& key, const Caption& caption) {
    json j = {{"key", key}, {"strategy", to_string(caption.strategy)}, {"text", caption.text},
              {"provenance", caption.provenance}};
    std::unique_lock lock(mu_);
    entries_[key] = caption;
    if (out_.is_open()) {
        out_ << j.dump() << '\n';
        out_.flush();
    }
}

std::size_t CaptionCache::size() const {
    std::shared_lock lock(mu_);
    return entries_.size();
}

CaptionPipeline::CaptionPipeline(CaptionBackends backends, std::shared_ptr<CaptionCache> cache)
    : backends_(std::move(backends)), cache_(std::move(cache)) {
    if (!cache_) cache_ = std::make_shared<CaptionCache>();
}

Caption CaptionPipeline::caption(const CaptionRequest& req) {
    validate(req);
    auto key = CaptionCache::key(req.image_ref, req.strategy, req.question);
    if (auto hit = cache_->get(key)) return *hit;

    auto need = [](const std::shared_ptr<Backend>& b, const char* role) -> Backend& {
        if (!b) throw Error(ErrorKind::ConfigError, std::string("no backend configured for ") + role);
        return *b;
    };
    Caption c;
    switch (req.strategy) {
        case CaptionStrategy::Dense: {
            auto raws = sample_raw_captions(req.image_ref, req.n_samples, need(backends_.captioner, "dense captions"));
            c = fuse_captions(raws, need(backends_.fuser, "caption fusion"));
            break;
        }
        case CaptionStrategy::Grounded:
            c = grounded_caption(req.image_ref, need(backends_.grounder, "grounded captions"));
            break;
        case CaptionStrategy::QuestionGuided:
            c = question_guided_caption(req.image_ref, *req.question,
                                        need(backends_.question_captioner, "question-guided captions"));
            break;
    }
    cache_->put(key, c);
    return c;
}

}  // namespace vqa
