#include "vqa/replay.hpp"

#include "vqa/text.hpp"

namespace vqa {

using nlohmann::json;

ReplayMode replay_mode_from_string(std::string_view name) {
    if (name == "record") return ReplayMode::Record;
    if (name == "replay") return ReplayMode::Replay;
    if (name == "passthrough" || name == "live") return ReplayMode::Passthrough;
    throw Error(ErrorKind::ConfigError, "unknown replay mode '" + std::string(name) + "'");
}

std::string_view to_string(ReplayMode mode) {
    switch (mode) {
        case ReplayMode::Record: return "record";
        case ReplayMode::Replay: return "replay";
        case ReplayMode::Passthrough: return "passthrough";
    }
    return "passthrough";
}

ReplayBackend::ReplayBackend(const std::filesystem::path& store) {
    std::ifstream in(store);
    if (!in) throw Error(ErrorKind::ConfigError, "cannot open replay store " + store.string());
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (text::trim(line).empty()) continue;
        try {
            auto j = json::parse(line);
            entries_.try_emplace(j.at("digest").get<std::string>(), backend_response_from_json(j.at("response")));
        } catch (const json::exception& e) {
            throw Error(ErrorKind::LoadError,
                        "replay store " + store.string() + " line " + std::to_string(line_no) + ": " + e.what());
        }
    }
}

BackendResponse ReplayBackend::complete(const BackendRequest& req) {
    validate(req);
    auto digest = request_digest(req);
    auto it = entries_.find(digest);
    if (it == entries_.end()) throw Error(ErrorKind::ReplayMiss, "no recorded response for digest " + digest);
    return it->second;
}

RecordingBackend::RecordingBackend(std::shared_ptr<Backend> live, const std::filesystem::path& store)
    : live_(std::move(live)) {
    if (!live_) throw Error(ErrorKind::ConfigError, "record mode needs a live backend");
    if (store.has_parent_path()) std::filesystem::create_directories(store.parent_path());
    out_.open(store, std::ios::app);
    if (!out_) throw Error(ErrorKind::ConfigError, "cannot open replay store for writing: " + store.string());
}

BackendResponse RecordingBackend::complete(const BackendRequest& req) {
    auto resp = live_->complete(req);
    json entry = {{"digest", request_digest(req)}, {"request", to_json(req)}, {"response", to_json(resp)}};
    auto line = entry.dump() + "\n";
    std::lock_guard lock(mu_);
    out_ << line;
    out_.flush();
    return resp;
}

std::shared_ptr<Backend> record_replay(ReplayMode mode, const std::filesystem::path& store,
                                       std::shared_ptr<Backend> live) {
    switch (mode) {
        case ReplayMode::Record: return std::make_shared<RecordingBackend>(std::move(live), store);
        case ReplayMode::Replay: return std::make_shared<ReplayBackend>(store);
        case ReplayMode::Passthrough:
            if (!live) throw Error(ErrorKind::ConfigError, "passthrough mode needs a live backend");
            return live;
    }
    return live;
}

}  // namespace vqa
