#include "actseg/sampler.hpp"

#include <algorithm>

#include <opencv2/imgproc.hpp>

#include "actseg/error.hpp"

namespace actseg {

void SamplerConfig::validate() const {
    auto prob_ok = [](double p) { return p >= 0.0 && p <= 1.0; };
    if (sample_size < 4) throw Error(ErrorCode::InvalidArgument, "sample_size must be >= 4");
    if (!(bg_scale > 1.0)) throw Error(ErrorCode::InvalidArgument, "bg_scale must be > 1");
    if (negatives_per_query < 1) throw Error(ErrorCode::InvalidArgument, "negatives_per_query must be >= 1");
    if (!prob_ok(greyscale_prob) || !prob_ok(flip_prob))
        throw Error(ErrorCode::InvalidArgument, "augmentation probabilities must lie in [0,1]");
    if (brightness < 0 || contrast < 0 || saturation < 0)
        throw Error(ErrorCode::InvalidArgument, "jitter ranges must be non-negative");
}

void to_json(nlohmann::json& j, const SamplerConfig& c) {
    j = {{"sample_size", c.sample_size},   {"bg_scale", c.bg_scale},     {"negatives_per_query", c.negatives_per_query},
         {"greyscale_prob", c.greyscale_prob}, {"flip_prob", c.flip_prob}, {"brightness", c.brightness},
         {"contrast", c.contrast},         {"saturation", c.saturation}, {"rng_seed", c.rng_seed}};
}

void from_json(const nlohmann::json& j, SamplerConfig& c) {
    c.sample_size = j.value("sample_size", c.sample_size);
    c.bg_scale = j.value("bg_scale", c.bg_scale);
    c.negatives_per_query = j.value("negatives_per_query", c.negatives_per_query);
    c.greyscale_prob = j.value("greyscale_prob", c.greyscale_prob);
    c.flip_prob = j.value("flip_prob", c.flip_prob);
    c.brightness = j.value("brightness", c.brightness);
    c.contrast = j.value("contrast", c.contrast);
    c.saturation = j.value("saturation", c.saturation);
    c.rng_seed = j.value("rng_seed", c.rng_seed);
}

AnchorPartition partition_anchors(const FrameAnnotationSet& annotations, std::size_t query_index) {
    if (query_index >= annotations.anchors.size())
        throw Error(ErrorCode::InvalidArgument, "query anchor not in annotation set");
    const int label = annotations.anchors[query_index].group_label;
    AnchorPartition out;
    for (std::size_t i = 0; i < annotations.anchors.size(); ++i) {
        if (i == query_index) continue;
        const auto& a = annotations.anchors[i];
        (a.group_label == label ? out.positives : out.negatives).push_back(a);
    }
    if (out.negatives.empty())
        throw Error(ErrorCode::EmptyNegativeSet, "frame " + annotations.frame_id + " has no anchor with another label");
    return out;
}

AnchorPartition partition_anchors(const FrameAnnotationSet& annotations, const AnchorAnnotation& query) {
    auto it = std::find(annotations.anchors.begin(), annotations.anchors.end(), query);
    if (it == annotations.anchors.end())
        throw Error(ErrorCode::InvalidArgument, "query anchor not in annotation set");
    return partition_anchors(annotations, static_cast<std::size_t>(it - annotations.anchors.begin()));
}

cv::Point draw_neighbor_center(const PatchRegion& region, cv::Size image_bounds, Rng& rng) {
    cv::Rect r = region.clamped(image_bounds.width, image_bounds.height);
    if (r.area() <= 0) throw Error(ErrorCode::EmptyRegion, "anchor region outside image");
    std::uniform_int_distribution<int> dx(r.x, r.x + r.width - 1);
    std::uniform_int_distribution<int> dy(r.y, r.y + r.height - 1);
    const int x = dx(rng);
    const int y = dy(rng);
    return {x, y};
}

PatchRegion sample_neighbor(const PatchRegion& region, cv::Size image_bounds, Rng& rng) {
    const cv::Point c = draw_neighbor_center(region, image_bounds, rng);
    PatchRegion moved{c.x, c.y, region.width, region.height};
    if (region.width == 1 && region.height == 1) return moved;
    return PatchRegion::from_rect(moved.clamped(image_bounds.width, image_bounds.height));
}

namespace {

void write_planes(const cv::Mat& rgb, int sample_size, Tensor& out, int first_channel) {
    cv::Mat resized;
    if (rgb.cols == sample_size && rgb.rows == sample_size) {
        resized = rgb;
    } else {
        cv::resize(rgb, resized, cv::Size(sample_size, sample_size), 0, 0, cv::INTER_LINEAR);
    }
    for (int y = 0; y < sample_size; ++y) {
        const auto* row = resized.ptr<cv::Vec3b>(y);
        for (int x = 0; x < sample_size; ++x)
            for (int c = 0; c < 3; ++c) out.at(first_channel + c, y, x) = row[x][c] / 255.0f;
    }
}

// Rec. 601 luma.
inline float luma(float r, float g, float b) { return 0.299f * r + 0.587f * g + 0.114f * b; }

void flip_horizontal(Tensor& t) {
    for (int c = 0; c < t.channels; ++c)
        for (int y = 0; y < t.height; ++y) {
            float* row = &t.at(c, y, 0);
            std::reverse(row, row + t.width);
        }
}

void photometric(Tensor& t, int first, const AugmentationParams& p) {
    auto r = t.plane(first);
    auto g = t.plane(first + 1);
    auto b = t.plane(first + 2);
    const std::size_t n = r.size();
    auto clamp01 = [](float v) { return std::clamp(v, 0.0f, 1.0f); };

    if (p.brightness != 1.0) {
        const float f = static_cast<float>(p.brightness);
        for (std::size_t i = 0; i < n; ++i) {
            r[i] = clamp01(r[i] * f);
            g[i] = clamp01(g[i] * f);
            b[i] = clamp01(b[i] * f);
        }
    }
    if (p.contrast != 1.0) {
        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) mean += luma(r[i], g[i], b[i]);
        const float m = static_cast<float>(mean / static_cast<double>(n));
        const float f = static_cast<float>(p.contrast);
        for (std::size_t i = 0; i < n; ++i) {
            r[i] = clamp01(f * r[i] + (1.0f - f) * m);
            g[i] = clamp01(f * g[i] + (1.0f - f) * m);
            b[i] = clamp01(f * b[i] + (1.0f - f) * m);
        }
    }
    if (p.saturation != 1.0) {
        const float f = static_cast<float>(p.saturation);
        for (std::size_t i = 0; i < n; ++i) {
            const float grey = luma(r[i], g[i], b[i]);
            r[i] = clamp01(f * r[i] + (1.0f - f) * grey);
            g[i] = clamp01(f * g[i] + (1.0f - f) * grey);
            b[i] = clamp01(f * b[i] + (1.0f - f) * grey);
        }
    }
    if (p.greyscale) {
        for (std::size_t i = 0; i < n; ++i) {
            const float grey = clamp01(luma(r[i], g[i], b[i]));
            r[i] = g[i] = b[i] = grey;
        }
    }
}

}  // namespace

ContrastiveSample compose_fg_bg(const ImageFrame& frame, const PatchRegion& region, const SamplerConfig& config) {
    const int s = config.sample_size;
    ContrastiveSample sample;
    sample.source_region = region;
    sample.tensor = Tensor(6, s, s);
    write_planes(extract_patch(frame, region), s, sample.tensor, 0);
    write_planes(extract_patch(frame, region.scaled(config.bg_scale)), s, sample.tensor, 3);
    return sample;
}

AugmentationParams draw_augmentation(const SamplerConfig& config, Rng& rng) {
    AugmentationParams p;
    std::bernoulli_distribution flip(config.flip_prob);
    std::bernoulli_distribution grey(config.greyscale_prob);
    p.flip = flip(rng);
    p.greyscale = grey(rng);
    auto factor = [&rng](double range) {
        if (range <= 0.0) return 1.0;
        std::uniform_real_distribution<double> d(std::max(0.0, 1.0 - range), 1.0 + range);
        return d(rng);
    };
    p.brightness = factor(config.brightness);
    p.contrast = factor(config.contrast);
    p.saturation = factor(config.saturation);
    return p;
}

ContrastiveSample apply_augmentation(ContrastiveSample sample, const AugmentationParams& params) {
    if (params.flip) flip_horizontal(sample.tensor);
    for (int first = 0; first + 3 <= sample.tensor.channels; first += 3) photometric(sample.tensor, first, params);
    return sample;
}

ContrastiveSample augment(ContrastiveSample sample, const SamplerConfig& config, Rng& rng) {
    return apply_augmentation(std::move(sample), draw_augmentation(config, rng));
}

ContrastiveBatch make_batch(const ImageFrame& frame, const FrameAnnotationSet& annotations, std::size_t query_index,
                            const SamplerConfig& config, Rng& rng) {
    const AnchorPartition parts = partition_anchors(annotations, query_index);
    const cv::Size bounds = frame.image.size();
    const AnchorAnnotation& query = annotations.anchors[query_index];

    ContrastiveBatch batch;
    batch.frame_id = frame.frame_id;

    batch.query = augment(compose_fg_bg(frame, query.region, config), config, rng);
    batch.query.role = SampleRole::Query;

    // A unique label falls back to a neighbor of the query anchor itself.
    const PatchRegion* positive_anchor = &query.region;
    if (!parts.positives.empty()) {
        std::uniform_int_distribution<std::size_t> pick(0, parts.positives.size() - 1);
        positive_anchor = &parts.positives[pick(rng)].region;
    }
    batch.positive = augment(compose_fg_bg(frame, sample_neighbor(*positive_anchor, bounds, rng), config), config, rng);
    batch.positive.role = SampleRole::Positive;

    std::uniform_int_distribution<std::size_t> pick_neg(0, parts.negatives.size() - 1);
    batch.negatives.reserve(static_cast<std::size_t>(config.negatives_per_query));
    for (int i = 0; i < config.negatives_per_query; ++i) {
        const auto& anchor = parts.negatives[pick_neg(rng)];
        auto neg = augment(compose_fg_bg(frame, sample_neighbor(anchor.region, bounds, rng), config), config, rng);
        neg.role = SampleRole::Negative;
        batch.negatives.push_back(std::move(neg));
    }
    return batch;
}

}  // namespace actseg
