#include "vqa/error.hpp"

namespace vqa {

std::string_view to_string(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::OptionsTooFew: return "OptionsTooFew";
        case ErrorKind::MissingInstruction: return "MissingInstruction";
        case ErrorKind::EmptyCaption: return "EmptyCaption";
        case ErrorKind::AlreadyWrapped: return "AlreadyWrapped";
        case ErrorKind::ExemplarFieldMissing: return "ExemplarFieldMissing";
        case ErrorKind::UnknownTemplate: return "UnknownTemplate";
        case ErrorKind::InvalidTemplate: return "InvalidTemplate";
        case ErrorKind::DimMismatch: return "DimMismatch";
        case ErrorKind::ZeroVector: return "ZeroVector";
        case ErrorKind::EmbeddingUnavailable: return "EmbeddingUnavailable";
        case ErrorKind::CaptionAlreadySet: return "CaptionAlreadySet";
        case ErrorKind::FusionEmpty: return "FusionEmpty";
        case ErrorKind::EmptyVote: return "EmptyVote";
        case ErrorKind::LoadError: return "LoadError";
        case ErrorKind::ConversionInvalid: return "ConversionInvalid";
        case ErrorKind::QuadIncomplete: return "QuadIncomplete";
        case ErrorKind::BackendTransport: return "BackendError(transport)";
        case ErrorKind::BackendRequest: return "BackendError(request)";
        case ErrorKind::BackendProtocol: return "BackendError(protocol)";
        case ErrorKind::ReplayMiss: return "ReplayMiss";
        case ErrorKind::UnknownPreset: return "UnknownPreset";
        case ErrorKind::ConfigError: return "ConfigError";
        case ErrorKind::CompareMismatch: return "CompareMismatch";
        case ErrorKind::Precondition: return "Precondition";
    }
    return "Unknown";
}

}  // namespace vqa
