#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>

namespace actseg {

/// One RGB frame of a sequence. `image` is CV_8UC3 in RGB channel order.
struct ImageFrame {
    std::string frame_id;
    std::int64_t sequence_index = 0;
    cv::Mat image;
    std::string source_path;

    int width() const { return image.cols; }
    int height() const { return image.rows; }
};

/// Axis-aligned rectangle stored as integer center plus size. The covered
/// pixel columns are [center_x - width/2, center_x - width/2 + width).
struct PatchRegion {
    int center_x = 0;
    int center_y = 0;
    int width = 1;
    int height = 1;

    int left() const { return center_x - width / 2; }
    int top() const { return center_y - height / 2; }
    int right() const { return left() + width; }    // exclusive
    int bottom() const { return top() + height; }  // exclusive

    cv::Rect rect() const { return {left(), top(), width, height}; }

    /// Intersection with a W x H image; empty when there is no overlap.
    cv::Rect clamped(int image_width, int image_height) const;

    /// Region with the same center and both sides multiplied by `factor`.
    PatchRegion scaled(double factor) const;

    static PatchRegion from_rect(const cv::Rect& r);

    bool operator==(const PatchRegion&) const = default;
};

struct AnchorAnnotation {
    PatchRegion region;
    int group_label = 0;

    bool operator==(const AnchorAnnotation&) const = default;
};

/// Anchor patches of one frame. Group labels are only comparable inside it.
struct FrameAnnotationSet {
    std::string frame_id;
    std::vector<AnchorAnnotation> anchors;

    bool operator==(const FrameAnnotationSet&) const = default;
};

struct ReferenceMask {
    std::string path;
    cv::Mat mask;  // CV_8UC1, 255 = ignore
};

inline constexpr std::uint8_t kIgnoreLabel = 255;

struct DatasetManifest {
    std::string dataset_id;
    std::vector<ImageFrame> frames;
    std::vector<FrameAnnotationSet> annotations;
    std::map<std::string, ReferenceMask> reference_masks;
    std::string granularity_tag;
    std::filesystem::path base_dir;

    const ImageFrame* find_frame(const std::string& frame_id) const;
    const FrameAnnotationSet* find_annotations(const std::string& frame_id) const;
};

struct LoadOptions {
    bool load_images = true;
};

/// Reads and validates a manifest document. Image and mask paths are
/// resolved relative to the manifest's directory.
DatasetManifest load_manifest(const std::filesystem::path& path, const LoadOptions& options = {});

DatasetManifest manifest_from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir,
                                   const LoadOptions& options = {});
nlohmann::json manifest_to_json(const DatasetManifest& manifest);

nlohmann::json annotations_to_json(const FrameAnnotationSet& set);
FrameAnnotationSet annotations_from_json(const nlohmann::json& doc);

/// Writes only the JSON document; referenced images are not touched.
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

/// Writes images, reference masks and manifest.json under `dir`, rewriting
/// every path relative to it. Used for generated datasets.
void write_dataset(DatasetManifest& manifest, const std::filesystem::path& dir);

/// Checks the manifest invariants (frame ids resolve, sequence indices are
/// unique, mask shapes match). Throws Error on the first violation.
void validate_manifest(const DatasetManifest& manifest);

/// Pixels of `region` clamped to the image. Throws EmptyRegion when the
/// region does not overlap the frame. The returned Mat is a deep copy.
cv::Mat extract_patch(const ImageFrame& frame, const PatchRegion& region);

struct FrameValidation {
    std::string frame_id;
    bool trainable = false;                 // every anchor has a non-empty negative set
    std::vector<int> labels_without_positive;  // labels used by exactly one anchor
    std::vector<std::string> issues;
};

struct ValidationReport {
    std::vector<FrameValidation> frames;

    std::size_t trainable_frames() const;
    bool ready() const { return trainable_frames() > 0; }
};

FrameValidation validate_frame_annotations(const FrameAnnotationSet& set);
ValidationReport validate_training_set(const DatasetManifest& manifest);

cv::Mat read_rgb_image(const std::filesystem::path& path);
void write_rgb_image(const std::filesystem::path& path, const cv::Mat& rgb);

}  // namespace actseg
