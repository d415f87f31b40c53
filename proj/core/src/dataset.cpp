#include "actseg/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <unordered_set>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "actseg/error.hpp"

namespace actseg {

namespace fs = std::filesystem;
using nlohmann::json;

cv::Rect PatchRegion::clamped(int image_width, int image_height) const {
    const int x0 = std::max(left(), 0);
    const int y0 = std::max(top(), 0);
    const int x1 = std::min(right(), image_width);
    const int y1 = std::min(bottom(), image_height);
    if (x1 <= x0 || y1 <= y0) return {};
    return {x0, y0, x1 - x0, y1 - y0};
}

PatchRegion PatchRegion::scaled(double factor) const {
    PatchRegion out = *this;
    out.width = std::max(1, static_cast<int>(std::lround(width * factor)));
    out.height = std::max(1, static_cast<int>(std::lround(height * factor)));
    return out;
}

PatchRegion PatchRegion::from_rect(const cv::Rect& r) {
    return {r.x + r.width / 2, r.y + r.height / 2, r.width, r.height};
}

const ImageFrame* DatasetManifest::find_frame(const std::string& frame_id) const {
    auto it = std::find_if(frames.begin(), frames.end(),
                           [&](const ImageFrame& f) { return f.frame_id == frame_id; });
    return it == frames.end() ? nullptr : &*it;
}

const FrameAnnotationSet* DatasetManifest::find_annotations(const std::string& frame_id) const {
    auto it = std::find_if(annotations.begin(), annotations.end(),
                           [&](const FrameAnnotationSet& a) { return a.frame_id == frame_id; });
    return it == annotations.end() ? nullptr : &*it;
}

cv::Mat read_rgb_image(const fs::path& path) {
    cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (bgr.empty()) throw Error(ErrorCode::IoError, "cannot read image " + path.string());
    cv::Mat rgb;
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
    return rgb;
}

void write_rgb_image(const fs::path& path, const cv::Mat& rgb) {
    cv::Mat bgr;
    cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
    if (!cv::imwrite(path.string(), bgr)) throw Error(ErrorCode::IoError, "cannot write " + path.string());
}

namespace {

cv::Mat read_mask(const fs::path& path) {
    cv::Mat mask = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
    if (mask.empty()) throw Error(ErrorCode::IoError, "cannot read mask " + path.string());
    if (mask.type() != CV_8UC1)
        throw Error(ErrorCode::MalformedManifest, "reference mask must be 8-bit single channel: " + path.string());
    return mask;
}

template <typename T>
T required(const json& obj, const char* key) {
    if (!obj.is_object() || !obj.contains(key))
        throw Error(ErrorCode::MalformedManifest, std::string("missing key '") + key + "'");
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception& e) {
        throw Error(ErrorCode::MalformedManifest, std::string("bad value for '") + key + "': " + e.what());
    }
}

}  // namespace

json annotations_to_json(const FrameAnnotationSet& set) {
    json anchors = json::array();
    for (const auto& a : set.anchors) {
        anchors.push_back({{"cx", a.region.center_x},
                           {"cy", a.region.center_y},
                           {"w", a.region.width},
                           {"h", a.region.height},
                           {"label", a.group_label}});
    }
    return {{"frame_id", set.frame_id}, {"anchors", std::move(anchors)}};
}

FrameAnnotationSet annotations_from_json(const json& doc) {
    FrameAnnotationSet set;
    set.frame_id = required<std::string>(doc, "frame_id");
    const auto anchors = required<json>(doc, "anchors");
    if (!anchors.is_array()) throw Error(ErrorCode::MalformedManifest, "'anchors' must be an array");
    for (const auto& a : anchors) {
        AnchorAnnotation anchor;
        anchor.region.center_x = required<int>(a, "cx");
        anchor.region.center_y = required<int>(a, "cy");
        anchor.region.width = required<int>(a, "w");
        anchor.region.height = required<int>(a, "h");
        anchor.group_label = required<int>(a, "label");
        if (anchor.region.width <= 0 || anchor.region.height <= 0)
            throw Error(ErrorCode::MalformedManifest, "anchor width/height must be positive");
        if (anchor.group_label < 0)
            throw Error(ErrorCode::MalformedManifest, "anchor label must be non-negative");
        set.anchors.push_back(anchor);
    }
    return set;
}

DatasetManifest manifest_from_json(const json& doc, const fs::path& base_dir, const LoadOptions& options) {
    if (!doc.is_object()) throw Error(ErrorCode::MalformedManifest, "manifest must be a JSON object");
    DatasetManifest m;
    m.base_dir = base_dir;
    m.dataset_id = required<std::string>(doc, "dataset_id");
    m.granularity_tag = doc.value("granularity_tag", std::string{});

    const auto frames = required<json>(doc, "frames");
    if (!frames.is_array()) throw Error(ErrorCode::MalformedManifest, "'frames' must be an array");
    for (const auto& f : frames) {
        ImageFrame frame;
        frame.frame_id = required<std::string>(f, "frame_id");
        frame.sequence_index = required<std::int64_t>(f, "sequence_index");
        frame.source_path = required<std::string>(f, "path");
        if (frame.sequence_index < 0)
            throw Error(ErrorCode::MalformedManifest, "negative sequence_index for " + frame.frame_id);
        if (options.load_images) frame.image = read_rgb_image(base_dir / frame.source_path);
        m.frames.push_back(std::move(frame));
    }

    if (doc.contains("annotations")) {
        const auto& annotations = doc.at("annotations");
        if (!annotations.is_array()) throw Error(ErrorCode::MalformedManifest, "'annotations' must be an array");
        for (const auto& a : annotations) m.annotations.push_back(annotations_from_json(a));
    }

    if (doc.contains("reference_masks")) {
        const auto& masks = doc.at("reference_masks");
        if (!masks.is_array()) throw Error(ErrorCode::MalformedManifest, "'reference_masks' must be an array");
        for (const auto& r : masks) {
            ReferenceMask mask;
            const auto id = required<std::string>(r, "frame_id");
            mask.path = required<std::string>(r, "path");
            if (options.load_images) mask.mask = read_mask(base_dir / mask.path);
            m.reference_masks.emplace(id, std::move(mask));
        }
    }

    validate_manifest(m);
    return m;
}

DatasetManifest load_manifest(const fs::path& path, const LoadOptions& options) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot open manifest " + path.string());
    json doc;
    try {
        in >> doc;
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::MalformedManifest, e.what());
    }
    return manifest_from_json(doc, path.parent_path(), options);
}

json manifest_to_json(const DatasetManifest& m) {
    json frames = json::array();
    for (const auto& f : m.frames)
        frames.push_back({{"frame_id", f.frame_id}, {"sequence_index", f.sequence_index}, {"path", f.source_path}});
    json annotations = json::array();
    for (const auto& a : m.annotations) annotations.push_back(annotations_to_json(a));

    json doc = {{"dataset_id", m.dataset_id},
                {"frames", std::move(frames)},
                {"annotations", std::move(annotations)},
                {"granularity_tag", m.granularity_tag}};
    if (!m.reference_masks.empty()) {
        json masks = json::array();
        for (const auto& [id, mask] : m.reference_masks) masks.push_back({{"frame_id", id}, {"path", mask.path}});
        doc["reference_masks"] = std::move(masks);
    }
    return doc;
}

void save_manifest(const DatasetManifest& manifest, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::IoError, "cannot write manifest " + path.string());
    out << manifest_to_json(manifest).dump(2) << '\n';
}

void write_dataset(DatasetManifest& manifest, const fs::path& dir) {
    fs::create_directories(dir / "images");
    for (auto& frame : manifest.frames) {
        frame.source_path = "images/" + frame.frame_id + ".png";
        write_rgb_image(dir / frame.source_path, frame.image);
    }
    if (!manifest.reference_masks.empty()) fs::create_directories(dir / "masks");
    for (auto& [id, mask] : manifest.reference_masks) {
        mask.path = "masks/" + id + ".png";
        if (!cv::imwrite((dir / mask.path).string(), mask.mask))
            throw Error(ErrorCode::IoError, "cannot write " + mask.path);
    }
    manifest.base_dir = dir;
    save_manifest(manifest, dir / "manifest.json");
}

void validate_manifest(const DatasetManifest& m) {
    std::unordered_set<std::string> ids;
    std::set<std::int64_t> indices;
    for (const auto& f : m.frames) {
        if (!ids.insert(f.frame_id).second)
            throw Error(ErrorCode::MalformedManifest, "duplicate frame_id " + f.frame_id);
        if (!indices.insert(f.sequence_index).second)
            throw Error(ErrorCode::MalformedManifest, "duplicate sequence_index for " + f.frame_id);
        if (!f.image.empty() && f.image.type() != CV_8UC3)
            throw Error(ErrorCode::MalformedManifest, "frame " + f.frame_id + " is not 8-bit RGB");
    }
    std::unordered_set<std::string> annotated;
    for (const auto& a : m.annotations) {
        if (!ids.contains(a.frame_id))
            throw Error(ErrorCode::MissingFrame, "annotation references unknown frame " + a.frame_id);
        if (!annotated.insert(a.frame_id).second)
            throw Error(ErrorCode::MalformedManifest, "duplicate annotation set for " + a.frame_id);
    }
    for (const auto& [id, mask] : m.reference_masks) {
        const ImageFrame* frame = m.find_frame(id);
        if (frame == nullptr) throw Error(ErrorCode::MissingFrame, "reference mask for unknown frame " + id);
        if (!frame->image.empty() && !mask.mask.empty() && frame->image.size() != mask.mask.size())
            throw Error(ErrorCode::ShapeMismatch, "reference mask size differs from frame " + id);
    }
}

cv::Mat extract_patch(const ImageFrame& frame, const PatchRegion& region) {
    const cv::Rect r = region.clamped(frame.width(), frame.height());
    if (r.area() <= 0) throw Error(ErrorCode::EmptyRegion, "region does not overlap frame " + frame.frame_id);
    return frame.image(r).clone();
}

FrameValidation validate_frame_annotations(const FrameAnnotationSet& set) {
    FrameValidation v;
    v.frame_id = set.frame_id;
    std::map<int, int> counts;
    for (const auto& a : set.anchors) ++counts[a.group_label];
    for (const auto& [label, count] : counts)
        if (count == 1) v.labels_without_positive.push_back(label);

    if (set.anchors.empty()) {
        v.issues.emplace_back("no anchors");
    } else if (counts.size() < 2) {
        v.issues.emplace_back("single group label: negative set is empty");
    }
    for (int label : v.labels_without_positive)
        v.issues.push_back("label " + std::to_string(label) + " has an empty positive set");
    v.trainable = counts.size() >= 2;
    return v;
}

std::size_t ValidationReport::trainable_frames() const {
    return static_cast<std::size_t>(
        std::count_if(frames.begin(), frames.end(), [](const FrameValidation& f) { return f.trainable; }));
}

ValidationReport validate_training_set(const DatasetManifest& manifest) {
    ValidationReport report;
    for (const auto& set : manifest.annotations) report.frames.push_back(validate_frame_annotations(set));
    return report;
}

}  // namespace actseg
