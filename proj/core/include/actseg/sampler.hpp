#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>

#include "actseg/dataset.hpp"
#include "actseg/tensor.hpp"

namespace actseg {

using Rng = std::mt19937_64;

enum class SampleRole { Query, Positive, Negative };

/// s x s x 6 input: channels 0-2 hold the patch (foreground), channels 3-5
/// the co-centered context crop (background), both scaled to [0,1].
struct ContrastiveSample {
    Tensor tensor;
    PatchRegion source_region;
    SampleRole role = SampleRole::Query;
};

struct ContrastiveBatch {
    ContrastiveSample query;
    ContrastiveSample positive;
    std::vector<ContrastiveSample> negatives;
    std::string frame_id;
};

struct SamplerConfig {
    int sample_size = 64;
    double bg_scale = 2.0;
    int negatives_per_query = 16;
    double greyscale_prob = 0.2;
    double flip_prob = 0.5;
    // Jitter factors are drawn uniformly from [1 - r, 1 + r].
    double brightness = 0.4;
    double contrast = 0.4;
    double saturation = 0.4;
    std::uint64_t rng_seed = 0;

    void validate() const;
};

void to_json(nlohmann::json& j, const SamplerConfig& c);
void from_json(const nlohmann::json& j, SamplerConfig& c);

struct AnchorPartition {
    std::vector<AnchorAnnotation> positives;
    std::vector<AnchorAnnotation> negatives;
};

/// Splits the other anchors of the frame by the query's group label.
/// Throws EmptyNegativeSet when every anchor shares the query's label.
AnchorPartition partition_anchors(const FrameAnnotationSet& annotations, std::size_t query_index);
AnchorPartition partition_anchors(const FrameAnnotationSet& annotations, const AnchorAnnotation& query);

/// Center drawn uniformly from the region's rectangle (intersected with the image).
cv::Point draw_neighbor_center(const PatchRegion& region, cv::Size image_bounds, Rng& rng);

/// Same-size region around a center from draw_neighbor_center, clamped to the image.
PatchRegion sample_neighbor(const PatchRegion& region, cv::Size image_bounds, Rng& rng);

ContrastiveSample compose_fg_bg(const ImageFrame& frame, const PatchRegion& region, const SamplerConfig& config);

/// One concrete draw of the augmentation pipeline.
struct AugmentationParams {
    bool flip = false;
    bool greyscale = false;
    double brightness = 1.0;
    double contrast = 1.0;
    double saturation = 1.0;
};

AugmentationParams draw_augmentation(const SamplerConfig& config, Rng& rng);

/// Applies the same flip and photometric transform to both halves.
ContrastiveSample apply_augmentation(ContrastiveSample sample, const AugmentationParams& params);

ContrastiveSample augment(ContrastiveSample sample, const SamplerConfig& config, Rng& rng);

ContrastiveBatch make_batch(const ImageFrame& frame, const FrameAnnotationSet& annotations,
                            std::size_t query_index, const SamplerConfig& config, Rng& rng);

}  // namespace actseg
