#include "actseg/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <opencv2/imgproc.hpp>

#include "actseg/error.hpp"

namespace actseg::synthetic {

namespace {

cv::Mat noise_field(int height, int width, double sigma, double blur, Rng& rng) {
    cv::Mat n(height, width, CV_32F);
    std::normal_distribution<float> dist(0.0f, 1.0f);
    for (int y = 0; y < height; ++y) {
        auto* row = n.ptr<float>(y);
        for (int x = 0; x < width; ++x) row[x] = dist(rng);
    }
    if (blur > 0.0) {
        cv::GaussianBlur(n, n, cv::Size(), blur);
        cv::Scalar mean, stddev;
        cv::meanStdDev(n, mean, stddev);
        n = (n - mean[0]) / std::max(stddev[0], 1e-6);
    }
    return n * sigma;
}

cv::Mat colorize(const cv::Mat& intensity, cv::Vec3f base, cv::Vec3f gain) {
    cv::Mat out(intensity.size(), CV_32FC3);
    for (int y = 0; y < intensity.rows; ++y) {
        const auto* in = intensity.ptr<float>(y);
        auto* o = out.ptr<cv::Vec3f>(y);
        for (int x = 0; x < intensity.cols; ++x)
            for (int c = 0; c < 3; ++c) o[x][c] = base[c] + gain[c] * in[x];
    }
    return out;
}

}  // namespace

cv::Mat render_texture(int index, int height, int width, Rng& rng) {
    cv::Mat f;
    switch (index) {
        case 0: {  // grass: fine vertical streaks
            cv::Mat n = noise_field(height, width, 1.0, 0.0, rng);
            cv::blur(n, n, cv::Size(1, 7));
            f = colorize(n * 2.2, {60, 125, 40}, {18, 35, 14});
            break;
        }
        case 1: {  // sand: bright, smooth, faint grain
            f = colorize(noise_field(height, width, 1.0, 1.0, rng), {205, 182, 135}, {6, 6, 5});
            break;
        }
        case 2: {  // gravel: high-contrast blobs
            cv::Mat n = noise_field(height, width, 1.0, 1.6, rng);
            cv::Mat s;
            cv::threshold(n, s, 0.0, 1.0, cv::THRESH_BINARY);
            f = colorize(s * 2.0 - 1.0 + n * 0.2, {112, 110, 108}, {55, 55, 55});
            break;
        }
        case 3: {  // sky: vertical gradient, almost no texture
            cv::Mat g(height, width, CV_32F);
            for (int y = 0; y < height; ++y) g.row(y).setTo(static_cast<float>(y) / std::max(1, height - 1) - 0.5f);
            f = colorize(g + noise_field(height, width, 0.05, 2.0, rng), {125, 170, 228}, {-30, -20, -10});
            break;
        }
        case kShiftTexture: {  // snow: near-white with sparse dark speckles
            cv::Mat n = noise_field(height, width, 1.0, 0.0, rng);
            cv::Mat speckle;
            cv::threshold(n, speckle, 1.6, 1.0, cv::THRESH_BINARY);
            f = colorize(speckle * -3.0f + noise_field(height, width, 0.1, 1.0, rng), {245, 248, 252}, {40, 30, 10});
            break;
        }
        default:
            throw Error(ErrorCode::InvalidArgument, "texture index out of range");
    }
    cv::Mat out;
    f.convertTo(out, CV_8UC3);  // saturating
    return out;
}

Scene generate_scene(const SceneConfig& cfg, const std::string& frame_id, std::int64_t sequence_index, bool shifted,
                     Rng& rng) {
    if (cfg.cells < kBaseTextures + (shifted ? cfg.shift_cells : 0))
        throw Error(ErrorCode::InvalidArgument, "too few cells for all textures");
    std::uniform_int_distribution<int> ux(0, cfg.width - 1), uy(0, cfg.height - 1);
    std::vector<cv::Point> seeds(static_cast<std::size_t>(cfg.cells));
    for (auto& s : seeds) s = {ux(rng), uy(rng)};

    std::vector<int> texture(static_cast<std::size_t>(cfg.cells));
    std::iota(texture.begin(), texture.begin() + kBaseTextures, 0);
    std::uniform_int_distribution<int> ut(0, kBaseTextures - 1);
    for (std::size_t i = kBaseTextures; i < texture.size(); ++i) texture[i] = ut(rng);
    std::shuffle(texture.begin(), texture.end(), rng);
    if (shifted) {
        // Cells whose texture is duplicated go first so every base texture survives.
        std::vector<std::size_t> order(texture.size());
        std::iota(order.begin(), order.end(), 0);
        std::vector<int> counts(kBaseTextures, 0);
        for (int t : texture) ++counts[static_cast<std::size_t>(t)];
        int replaced = 0;
        for (std::size_t i : order) {
            if (replaced == cfg.shift_cells) break;
            if (counts[static_cast<std::size_t>(texture[i])] > 1) {
                --counts[static_cast<std::size_t>(texture[i])];
                texture[i] = kShiftTexture;
                ++replaced;
            }
        }
    }

    Scene scene;
    scene.ground_truth.create(cfg.height, cfg.width, CV_8UC1);
    for (int y = 0; y < cfg.height; ++y) {
        auto* row = scene.ground_truth.ptr<std::uint8_t>(y);
        for (int x = 0; x < cfg.width; ++x) {
            std::size_t best = 0;
            long best_d = -1;
            for (std::size_t i = 0; i < seeds.size(); ++i) {
                const long dx = x - seeds[i].x, dy = y - seeds[i].y;
                const long d = dx * dx + dy * dy;
                if (best_d < 0 || d < best_d) {
                    best_d = d;
                    best = i;
                }
            }
            row[x] = static_cast<std::uint8_t>(texture[best]);
        }
    }

    cv::Mat image(cfg.height, cfg.width, CV_8UC3, cv::Scalar::all(0));
    for (int t = 0; t <= kShiftTexture; ++t) {
        cv::Mat mask = scene.ground_truth == t;
        if (cv::countNonZero(mask) == 0) continue;
        render_texture(t, cfg.height, cfg.width, rng).copyTo(image, mask);
    }
    const double jitter = std::uniform_real_distribution<double>(1.0 - cfg.brightness_jitter,
                                                                 1.0 + cfg.brightness_jitter)(rng);
    image.convertTo(image, CV_8UC3, jitter);

    scene.frame.frame_id = frame_id;
    scene.frame.sequence_index = sequence_index;
    scene.frame.image = image;
    return scene;
}

std::vector<Scene> generate_sequence(const SceneConfig& cfg, const std::string& prefix, std::int64_t first_index,
                                     int count, bool shifted, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Scene> scenes;
    scenes.reserve(static_cast<std::size_t>(std::max(0, count)));
    for (int i = 0; i < count; ++i) {
        const std::int64_t idx = first_index + i;
        scenes.push_back(generate_scene(cfg, prefix + std::to_string(idx), idx, shifted, rng));
    }
    return scenes;
}

FrameAnnotationSet annotate(const Scene& scene, const AnnotatorConfig& cfg, Rng& rng) {
    FrameAnnotationSet set;
    set.frame_id = scene.frame.frame_id;
    std::vector<int> labels(kShiftTexture + 1);
    std::iota(labels.begin(), labels.end(), 1);
    std::shuffle(labels.begin(), labels.end(), rng);

    const cv::Mat kernel = cv::getStructuringElement(cv::MORPH_RECT, cv::Size(cfg.patch_size, cfg.patch_size));
    for (int t = 0; t <= kShiftTexture; ++t) {
        cv::Mat mask = scene.ground_truth == t;
        if (cv::countNonZero(mask) == 0) continue;
        // Erosion leaves the centers whose full square stays inside the region.
        cv::Mat inner;
        cv::erode(mask, inner, kernel, cv::Point(-1, -1), 1, cv::BORDER_CONSTANT, cv::Scalar(0));
        std::vector<cv::Point> centers;
        cv::findNonZero(inner, centers);
        if (centers.empty()) continue;
        std::uniform_int_distribution<std::size_t> pick(0, centers.size() - 1);
        for (int k = 0; k < cfg.patches_per_class; ++k) {
            const cv::Point c = centers[pick(rng)];
            // The erosion anchor is the kernel center; PatchRegion's left edge is cx - w/2.
            set.anchors.push_back({PatchRegion{c.x, c.y, cfg.patch_size, cfg.patch_size},
                                   labels[static_cast<std::size_t>(t)]});
        }
    }
    return set;
}

DatasetManifest make_manifest(const std::vector<Scene>& scenes, int annotated, const AnnotatorConfig& cfg,
                              std::uint64_t seed, const std::string& dataset_id) {
    DatasetManifest m;
    m.dataset_id = dataset_id;
    m.granularity_tag = "synthetic-terrain";
    Rng rng(seed);
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        m.frames.push_back(scenes[i].frame);
        m.reference_masks[scenes[i].frame.frame_id] = ReferenceMask{"", scenes[i].ground_truth};
        if (static_cast<int>(i) < annotated) m.annotations.push_back(annotate(scenes[i], cfg, rng));
    }
    return m;
}

}  // namespace actseg::synthetic
