#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace vqa {

enum class ErrorKind {
    // prompt templates
    OptionsTooFew,
    MissingInstruction,
    EmptyCaption,
    AlreadyWrapped,
    ExemplarFieldMissing,
    UnknownTemplate,
    InvalidTemplate,
    // exemplar selection
    DimMismatch,
    ZeroVector,
    EmbeddingUnavailable,
    // captions
    CaptionAlreadySet,
    FusionEmpty,
    // cot
    EmptyVote,
    // datasets
    LoadError,
    ConversionInvalid,
    QuadIncomplete,
    // backends
    BackendTransport,
    BackendRequest,
    BackendProtocol,
    ReplayMiss,
    UnknownPreset,
    // runner
    ConfigError,
    CompareMismatch,
    // generic contract violation
    Precondition,
};

std::string_view to_string(ErrorKind kind) noexcept;

/// Every failure raised by the harness carries a kind so callers can branch
/// on the taxonomy without parsing messages.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

    /// True for the three BackendError flavours.
    bool is_backend_error() const noexcept {
        return kind_ == ErrorKind::BackendTransport || kind_ == ErrorKind::BackendRequest ||
               kind_ == ErrorKind::BackendProtocol || kind_ == ErrorKind::ReplayMiss;
    }

private:
    ErrorKind kind_;
};

}  // namespace vqa
