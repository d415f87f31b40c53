#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "actseg/dataset.hpp"
#include "actseg/sampler.hpp"

namespace actseg::synthetic {

/// Number of base terrain textures; texture index kShiftTexture only
/// appears in shifted scenes.
inline constexpr int kBaseTextures = 4;
inline constexpr int kShiftTexture = 4;

struct SceneConfig {
    int width = 160;
    int height = 160;
    int cells = 6;             // Voronoi cells per scene
    int shift_cells = 2;       // cells re-textured with kShiftTexture in shifted scenes
    double brightness_jitter = 0.08;
};

struct Scene {
    ImageFrame frame;
    cv::Mat ground_truth;  // CV_8UC1 texture index per pixel
};

/// Renders texture `index` (0..kShiftTexture) over a full H x W canvas, RGB.
cv::Mat render_texture(int index, int height, int width, Rng& rng);

/// Voronoi scene; every base texture is present. Shifted scenes replace
/// `shift_cells` cells with the extra texture.
Scene generate_scene(const SceneConfig& cfg, const std::string& frame_id, std::int64_t sequence_index, bool shifted,
                     Rng& rng);

std::vector<Scene> generate_sequence(const SceneConfig& cfg, const std::string& prefix, std::int64_t first_index,
                                     int count, bool shifted, std::uint64_t seed);

struct AnnotatorConfig {
    int patch_size = 16;
    int patches_per_class = 2;
};

/// Simulated operator: square anchors placed fully inside ground-truth
/// regions, with group labels permuted per frame (labels mean nothing
/// across frames).
FrameAnnotationSet annotate(const Scene& scene, const AnnotatorConfig& cfg, Rng& rng);

/// Manifest over the scenes, annotating the first `annotated` of them and
/// attaching ground truth as reference masks.
DatasetManifest make_manifest(const std::vector<Scene>& scenes, int annotated, const AnnotatorConfig& cfg,
                              std::uint64_t seed, const std::string& dataset_id = "synthetic");

}  // namespace actseg::synthetic
