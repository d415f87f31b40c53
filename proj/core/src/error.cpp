#include "actseg/error.hpp"

namespace actseg {

std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::InvalidArgument: return "InvalidArgument";
        case ErrorCode::IoError: return "IoError";
        case ErrorCode::MissingFrame: return "MissingFrame";
        case ErrorCode::MalformedManifest: return "MalformedManifest";
        case ErrorCode::ShapeMismatch: return "ShapeMismatch";
        case ErrorCode::EmptyRegion: return "EmptyRegion";
        case ErrorCode::EmptyNegativeSet: return "EmptyNegativeSet";
        case ErrorCode::EmptyNegatives: return "EmptyNegatives";
        case ErrorCode::NoTrainableFrames: return "NoTrainableFrames";
        case ErrorCode::SingularCovariance: return "SingularCovariance";
        case ErrorCode::InsufficientData: return "InsufficientData";
        case ErrorCode::DegenerateCluster: return "DegenerateCluster";
        case ErrorCode::FrameTooSmall: return "FrameTooSmall";
        case ErrorCode::UnknownRefiner: return "UnknownRefiner";
        case ErrorCode::UncoveredPixel: return "UncoveredPixel";
        case ErrorCode::EmptyRisks: return "EmptyRisks";
        case ErrorCode::EmptyFrame: return "EmptyFrame";
        case ErrorCode::EmptySequence: return "EmptySequence";
        case ErrorCode::NoTriggeredState: return "NoTriggeredState";
        case ErrorCode::UnknownRequest: return "UnknownRequest";
        case ErrorCode::InvalidAnnotation: return "InvalidAnnotation";
        case ErrorCode::EmptySupplementalPool: return "EmptySupplementalPool";
        case ErrorCode::UnresolvedRequests: return "UnresolvedRequests";
        case ErrorCode::NoReferenceMasks: return "NoReferenceMasks";
    }
    return "Unknown";
}

}  // namespace actseg
