#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <string>
#include <unordered_map>

#include "vqa/backend.hpp"

namespace vqa {

enum class ReplayMode { Record, Replay, Passthrough };

ReplayMode replay_mode_from_string(std::string_view name);
std::string_view to_string(ReplayMode mode);

/// Serves responses from an append-only JSONL store of
/// {digest, request, response}; never touches the network. When a digest
/// appears more than once the first entry wins.
class ReplayBackend final : public Backend {
public:
    explicit ReplayBackend(const std::filesystem::path& store);

    BackendResponse complete(const BackendRequest& req) override;
    std::string id() const override { return "replay"; }

    std::size_t size() const { return entries_.size(); }

private:
    std::unordered_map<std::string, BackendResponse> entries_;
};

/// Wraps a live backend and appends every successful exchange to the store.
/// Appends are serialized; each entry is written and flushed as one line.
class RecordingBackend final : public Backend {
public:
    RecordingBackend(std::shared_ptr<Backend> live, const std::filesystem::path& store);

    BackendResponse complete(const BackendRequest& req) override;
    std::string id() const override { return live_->id(); }

private:
    std::shared_ptr<Backend> live_;
    std::mutex mu_;
    std::ofstream out_;
};

/// Record: wrap `live` and persist. Replay: serve from `store` only (`live`
/// may be null). Passthrough: return `live` unchanged.
std::shared_ptr<Backend> record_replay(ReplayMode mode, const std::filesystem::path& store,
                                       std::shared_ptr<Backend> live);

}  // namespace vqa
