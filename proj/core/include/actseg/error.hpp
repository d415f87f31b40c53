#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace actseg {

enum class ErrorCode {
    InvalidArgument,
    IoError,
    // dataset
    MissingFrame,
    MalformedManifest,
    ShapeMismatch,
    EmptyRegion,
    // sampler / encoder
    EmptyNegativeSet,
    EmptyNegatives,
    NoTrainableFrames,
    // category model
    SingularCovariance,
    InsufficientData,
    DegenerateCluster,
    // segmenter
    FrameTooSmall,
    UnknownRefiner,
    UncoveredPixel,
    // risk
    EmptyRisks,
    EmptyFrame,
    EmptySequence,
    // active loop
    NoTriggeredState,
    UnknownRequest,
    InvalidAnnotation,
    EmptySupplementalPool,
    UnresolvedRequests,
    // metrics
    NoReferenceMasks,
};

std::string_view to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace actseg
