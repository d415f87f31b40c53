#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>

#include "actseg/category_model.hpp"
#include "actseg/dataset.hpp"
#include "actseg/encoder.hpp"
#include "actseg/prediction.hpp"
#include "actseg/sampler.hpp"

namespace actseg {

enum class VoteWeighting { Linear, Uniform, Gaussian };

struct SlidingWindowConfig {
    int patch_size = 64;
    int stride = 32;
    int encode_batch = 32;
    VoteWeighting weighting = VoteWeighting::Linear;

    void validate() const;
};

void to_json(nlohmann::json& j, const SlidingWindowConfig& c);
void from_json(const nlohmann::json& j, SlidingWindowConfig& c);

/// Regular grid with the given stride; the last row/column is moved to the
/// image edge (or one more is added) so that every pixel is covered.
std::vector<PatchRegion> generate_windows(int height, int width, const SlidingWindowConfig& cfg);

/// Best cluster and risk without the gate; `label` is best_cluster + 1.
PatchPrediction score_patch(const EmbeddingVector& z, const CategoryModel& model, bool weighted = false);

/// Maximum-density cluster, risk 1 - gamma and the gated label. Ties on the
/// density go to the lower cluster index. With `weighted` the mixing weights
/// multiply the densities. Note that the risk is negative whenever the
/// density exceeds 1; the bound lives on the same scale.
PatchPrediction classify_patch(const EmbeddingVector& z, const CategoryModel& model, bool weighted = false);

/// Voting weight of a patch at pixel (x, y); zero outside the patch.
double vote_weight(const PatchRegion& patch, int x, int y, VoteWeighting weighting = VoteWeighting::Linear);

struct VoteResult {
    cv::Mat label_map;  // CV_8UC1, 0 = unknown
    cv::Mat risk_map;   // CV_32FC1, vote-weighted mean patch risk
};

/// Per-pixel weighted vote over the covering patches. Ties go to the label
/// of the nearest patch center, then to the lowest label.
VoteResult vote_pixels(std::span<const PatchPrediction> predictions, int height, int width,
                       VoteWeighting weighting = VoteWeighting::Linear);

struct SegmentationResult {
    std::string frame_id;
    cv::Mat label_map;
    cv::Mat risk_map;
    std::vector<PatchPrediction> patch_predictions;
    double frame_risk = 0.0;

    std::size_t unknown_patches() const;
};

SegmentationResult segment_frame(const ImageFrame& frame, const PatchEncoder& encoder, const CategoryModel& model,
                                 const SlidingWindowConfig& sw_cfg, const SamplerConfig& sampler_cfg,
                                 bool weighted = false);

/// Named post-processing refiners (e.g. an external dense CRF). The empty
/// name is the identity.
class RefinerRegistry {
public:
    using Refiner = std::function<SegmentationResult(SegmentationResult, const ImageFrame&)>;

    void add(std::string name, Refiner refiner);
    bool contains(std::string_view name) const;
    SegmentationResult refine(SegmentationResult result, const ImageFrame& frame, std::string_view name) const;

private:
    std::map<std::string, Refiner, std::less<>> refiners_;
};

SegmentationResult crf_refine_hook(SegmentationResult result, const ImageFrame& frame,
                                   const RefinerRegistry& registry = {}, std::string_view name = {});

nlohmann::json segmentation_sidecar(const SegmentationResult& result, int m, double risk_bound);

/// `<frame_id>.png` (label map), `<frame_id>.json` (sidecar), `<frame_id>.risk`.
void write_segmentation(const SegmentationResult& result, int m, double risk_bound, const std::filesystem::path& dir);

/// Risk map file: "RISK" magic, u32 H, u32 W, H*W little-endian float32 row-major.
void write_risk_map(const cv::Mat& risk_map, const std::filesystem::path& path);
cv::Mat read_risk_map(const std::filesystem::path& path);

}  // namespace actseg
