#pragma once

#include "actseg/dataset.hpp"

namespace actseg {

/// Label value used for the unknown class in label maps and predictions.
inline constexpr int kUnknownLabel = 0;

/// Risk-gated classification of one sliding-window patch. `label` is
/// best_cluster + 1 when accepted and kUnknownLabel otherwise.
struct PatchPrediction {
    PatchRegion region;
    int label = kUnknownLabel;
    double risk = 0.0;
    int best_cluster = 0;
    double log_density = 0.0;

    bool unknown() const { return label == kUnknownLabel; }
};

}  // namespace actseg
