#include "actseg/segmenter.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>

#include <opencv2/imgcodecs.hpp>

#include "actseg/error.hpp"
#include "actseg/risk.hpp"

namespace actseg {

using nlohmann::json;

namespace {

std::string to_string(VoteWeighting w) {
    switch (w) {
        case VoteWeighting::Linear: return "linear";
        case VoteWeighting::Uniform: return "uniform";
        case VoteWeighting::Gaussian: return "gaussian";
    }
    return "linear";
}

VoteWeighting weighting_from_string(const std::string& s) {
    if (s == "linear") return VoteWeighting::Linear;
    if (s == "uniform") return VoteWeighting::Uniform;
    if (s == "gaussian") return VoteWeighting::Gaussian;
    throw Error(ErrorCode::InvalidArgument, "unknown vote weighting '" + s + "'");
}

std::vector<int> window_offsets(int extent, int size, int stride) {
    std::vector<int> offsets;
    for (int off = 0; off + size <= extent; off += stride) offsets.push_back(off);
    const int edge = extent - size;
    if (offsets.back() == edge) return offsets;
    // Snap the last window to the edge unless that would open a gap.
    const bool gap = offsets.size() == 1 || offsets[offsets.size() - 2] + size < edge;
    if (gap) {
        offsets.push_back(edge);
    } else {
        offsets.back() = edge;
    }
    return offsets;
}

}  // namespace

void SlidingWindowConfig::validate() const {
    if (patch_size < 1) throw Error(ErrorCode::InvalidArgument, "patch_size must be >= 1");
    if (stride < 1 || stride > patch_size) throw Error(ErrorCode::InvalidArgument, "stride must lie in [1, patch_size]");
    if (encode_batch < 1) throw Error(ErrorCode::InvalidArgument, "encode_batch must be >= 1");
}

void to_json(json& j, const SlidingWindowConfig& c) {
    j = {{"patch_size", c.patch_size},
         {"stride", c.stride},
         {"encode_batch", c.encode_batch},
         {"weighting", to_string(c.weighting)}};
}

void from_json(const json& j, SlidingWindowConfig& c) {
    c.patch_size = j.value("patch_size", c.patch_size);
    c.stride = j.value("stride", c.stride);
    c.encode_batch = j.value("encode_batch", c.encode_batch);
    if (j.contains("weighting")) c.weighting = weighting_from_string(j.at("weighting").get<std::string>());
}

std::vector<PatchRegion> generate_windows(int height, int width, const SlidingWindowConfig& cfg) {
    cfg.validate();
    if (height < cfg.patch_size || width < cfg.patch_size)
        throw Error(ErrorCode::FrameTooSmall, "frame " + std::to_string(width) + "x" + std::to_string(height) +
                                                  " is smaller than the window " + std::to_string(cfg.patch_size));
    const auto ys = window_offsets(height, cfg.patch_size, cfg.stride);
    const auto xs = window_offsets(width, cfg.patch_size, cfg.stride);
    std::vector<PatchRegion> windows;
    windows.reserve(ys.size() * xs.size());
    for (int y : ys)
        for (int x : xs) windows.push_back(PatchRegion::from_rect({x, y, cfg.patch_size, cfg.patch_size}));
    return windows;
}

PatchPrediction score_patch(const EmbeddingVector& z, const CategoryModel& model, bool weighted) {
    if (model.clusters.empty()) throw Error(ErrorCode::InvalidArgument, "empty category model");
    PatchPrediction p;
    double best = -std::numeric_limits<double>::infinity();
    double best_log_density = best;
    for (int k = 0; k < model.m(); ++k) {
        const auto& c = model.clusters[static_cast<std::size_t>(k)];
        const double log_density = c.log_density(z);
        const double score = weighted ? log_density + std::log(c.weight()) : log_density;
        if (score > best) {
            best = score;
            best_log_density = log_density;
            p.best_cluster = k;
        }
    }
    p.log_density = best_log_density;
    p.risk = 1.0 - std::exp(best);
    p.label = p.best_cluster + 1;
    return p;
}

PatchPrediction classify_patch(const EmbeddingVector& z, const CategoryModel& model, bool weighted) {
    if (!model.has_risk_bound()) throw Error(ErrorCode::InvalidArgument, "category model has no risk bound");
    PatchPrediction p = score_patch(z, model, weighted);
    if (!(p.risk <= model.risk_bound)) p.label = kUnknownLabel;
    return p;
}

double vote_weight(const PatchRegion& patch, int x, int y, VoteWeighting weighting) {
    if (x < patch.left() || x >= patch.right() || y < patch.top() || y >= patch.bottom()) return 0.0;
    const double d = std::max(std::abs(x - patch.center_x), std::abs(y - patch.center_y));
    const double radius = std::max(patch.width, patch.height) / 2.0 + 1.0;
    switch (weighting) {
        case VoteWeighting::Linear: return std::max(0.0, 1.0 - d / radius);
        case VoteWeighting::Uniform: return 1.0;
        case VoteWeighting::Gaussian: {
            const double sigma = radius / 2.0;
            return std::exp(-d * d / (2.0 * sigma * sigma));
        }
    }
    return 0.0;
}

VoteResult vote_pixels(std::span<const PatchPrediction> predictions, int height, int width, VoteWeighting weighting) {
    if (height < 1 || width < 1) throw Error(ErrorCode::InvalidArgument, "empty output size");
    int max_label = 0;
    for (const auto& p : predictions) {
        if (p.label < 0 || p.label > 254) throw Error(ErrorCode::InvalidArgument, "label out of range");
        max_label = std::max(max_label, p.label);
    }
    const std::size_t labels = static_cast<std::size_t>(max_label) + 1;
    const std::size_t pixels = static_cast<std::size_t>(height) * width;
    std::vector<double> votes(pixels * labels, 0.0);
    std::vector<double> weight_sum(pixels, 0.0);
    std::vector<double> risk_sum(pixels, 0.0);

    for (const auto& p : predictions) {
        const cv::Rect r = p.region.clamped(width, height);
        for (int y = r.y; y < r.y + r.height; ++y)
            for (int x = r.x; x < r.x + r.width; ++x) {
                const double w = vote_weight(p.region, x, y, weighting);
                const std::size_t px = static_cast<std::size_t>(y) * width + x;
                votes[px * labels + static_cast<std::size_t>(p.label)] += w;
                weight_sum[px] += w;
                risk_sum[px] += w * p.risk;
            }
    }

    VoteResult out{cv::Mat(height, width, CV_8UC1, cv::Scalar(0)), cv::Mat(height, width, CV_32FC1, cv::Scalar(0))};
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const std::size_t px = static_cast<std::size_t>(y) * width + x;
            if (!(weight_sum[px] > 0.0))
                throw Error(ErrorCode::UncoveredPixel,
                            "pixel (" + std::to_string(x) + "," + std::to_string(y) + ") has no covering patch");
            const double* v = &votes[px * labels];
            const double best = *std::max_element(v, v + labels);
            int winner = -1;
            int ties = 0;
            for (std::size_t l = 0; l < labels; ++l)
                if (v[l] == best) {
                    if (winner < 0) winner = static_cast<int>(l);
                    ++ties;
                }
            if (ties > 1) {
                long long nearest = std::numeric_limits<long long>::max();
                int chosen = -1;
                for (const auto& p : predictions) {
                    if (v[p.label] != best || vote_weight(p.region, x, y, weighting) <= 0.0) continue;
                    const long long dx = x - p.region.center_x;
                    const long long dy = y - p.region.center_y;
                    const long long d2 = dx * dx + dy * dy;
                    if (d2 < nearest || (d2 == nearest && p.label < chosen)) {
                        nearest = d2;
                        chosen = p.label;
                    }
                }
                winner = chosen;
            }
            out.label_map.at<std::uint8_t>(y, x) = static_cast<std::uint8_t>(winner);
            out.risk_map.at<float>(y, x) = static_cast<float>(risk_sum[px] / weight_sum[px]);
        }
    }
    return out;
}

std::size_t SegmentationResult::unknown_patches() const {
    return static_cast<std::size_t>(std::count_if(patch_predictions.begin(), patch_predictions.end(),
                                                  [](const PatchPrediction& p) { return p.unknown(); }));
}

SegmentationResult segment_frame(const ImageFrame& frame, const PatchEncoder& encoder, const CategoryModel& model,
                                 const SlidingWindowConfig& sw_cfg, const SamplerConfig& sampler_cfg, bool weighted) {
    const auto windows = generate_windows(frame.height(), frame.width(), sw_cfg);
    SegmentationResult result;
    result.frame_id = frame.frame_id;
    result.patch_predictions.reserve(windows.size());
    for (const auto& window : windows) {
        const ContrastiveSample sample = compose_fg_bg(frame, window, sampler_cfg);
        PatchPrediction p = classify_patch(encoder.encode(sample.tensor), model, weighted);
        p.region = window;
        result.patch_predictions.push_back(p);
    }
    VoteResult votes = vote_pixels(result.patch_predictions, frame.height(), frame.width(), sw_cfg.weighting);
    result.label_map = std::move(votes.label_map);
    result.risk_map = std::move(votes.risk_map);
    result.frame_risk = frame_risk(result.patch_predictions);
    return result;
}

void RefinerRegistry::add(std::string name, Refiner refiner) { refiners_[std::move(name)] = std::move(refiner); }

bool RefinerRegistry::contains(std::string_view name) const { return refiners_.find(name) != refiners_.end(); }

SegmentationResult RefinerRegistry::refine(SegmentationResult result, const ImageFrame& frame,
                                           std::string_view name) const {
    if (name.empty()) return result;
    auto it = refiners_.find(name);
    if (it == refiners_.end()) throw Error(ErrorCode::UnknownRefiner, "no refiner named '" + std::string(name) + "'");
    return it->second(std::move(result), frame);
}

SegmentationResult crf_refine_hook(SegmentationResult result, const ImageFrame& frame, const RefinerRegistry& registry,
                                   std::string_view name) {
    return registry.refine(std::move(result), frame, name);
}

json segmentation_sidecar(const SegmentationResult& result, int m, double risk_bound) {
    return {{"frame_id", result.frame_id},
            {"frame_risk", result.frame_risk},
            {"m", m},
            {"r_sigma", risk_bound},
            {"patch_count", result.patch_predictions.size()},
            {"phi_count", result.unknown_patches()}};
}

void write_segmentation(const SegmentationResult& result, int m, double risk_bound, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    const auto png = dir / (result.frame_id + ".png");
    if (!cv::imwrite(png.string(), result.label_map)) throw Error(ErrorCode::IoError, "cannot write " + png.string());
    std::ofstream sidecar(dir / (result.frame_id + ".json"));
    if (!sidecar) throw Error(ErrorCode::IoError, "cannot write sidecar for " + result.frame_id);
    sidecar << segmentation_sidecar(result, m, risk_bound).dump(2) << '\n';
    write_risk_map(result.risk_map, dir / (result.frame_id + ".risk"));
}

namespace {
constexpr std::array<char, 4> kRiskMagic{'R', 'I', 'S', 'K'};
}

void write_risk_map(const cv::Mat& risk_map, const std::filesystem::path& path) {
    if (risk_map.type() != CV_32FC1) throw Error(ErrorCode::InvalidArgument, "risk map must be CV_32FC1");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
    const auto h = static_cast<std::uint32_t>(risk_map.rows);
    const auto w = static_cast<std::uint32_t>(risk_map.cols);
    out.write(kRiskMagic.data(), kRiskMagic.size());
    out.write(reinterpret_cast<const char*>(&h), sizeof h);
    out.write(reinterpret_cast<const char*>(&w), sizeof w);
    for (int y = 0; y < risk_map.rows; ++y)
        out.write(reinterpret_cast<const char*>(risk_map.ptr<float>(y)), static_cast<std::streamsize>(w * sizeof(float)));
}

cv::Mat read_risk_map(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::array<char, 4> magic{};
    std::uint32_t h = 0;
    std::uint32_t w = 0;
    in.read(magic.data(), magic.size());
    in.read(reinterpret_cast<char*>(&h), sizeof h);
    in.read(reinterpret_cast<char*>(&w), sizeof w);
    if (!in || magic != kRiskMagic) throw Error(ErrorCode::IoError, path.string() + " is not a risk map");
    cv::Mat m(static_cast<int>(h), static_cast<int>(w), CV_32FC1);
    for (int y = 0; y < m.rows; ++y)
        in.read(reinterpret_cast<char*>(m.ptr<float>(y)), static_cast<std::streamsize>(w * sizeof(float)));
    if (!in) throw Error(ErrorCode::IoError, "truncated risk map " + path.string());
    return m;
}

}  // namespace actseg
