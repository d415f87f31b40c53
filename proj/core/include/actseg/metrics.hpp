#pragma once

#include <map>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>

namespace actseg {

/// Mean frame-level risk of a sequence.
double mflr(std::span<const double> frame_risks);

/// 1 - sequence risk at level epsilon.
double scene_coverage(std::span<const double> frame_risks, double epsilon);

inline constexpr int kVoidClass = -1;

/// Cluster label (1..m) -> reference class id, or kVoidClass.
struct LabelMapping {
    std::map<int, int> cluster_to_class;

    int apply(int label) const;
};

/// Optimal one-to-one assignment maximising matched pixels over the
/// cluster x class co-occurrence counts (unknown and ignore pixels excluded).
LabelMapping map_clusters_to_reference(std::span<const cv::Mat> label_maps, std::span<const cv::Mat> references);

/// Maximum-weight assignment on a rows x cols matrix; result[r] is the
/// matched column or -1. Hungarian algorithm, O(n^3).
std::vector<int> max_weight_assignment(const std::vector<std::vector<double>>& weights);

struct ClassMetrics {
    int class_id = 0;
    long long tp = 0;
    long long fp = 0;
    long long fn = 0;
    long long tn = 0;
    double iou = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double fpr = 0.0;
};

struct EvalReport {
    double mflr = 0.0;
    double sc = 0.0;
    std::vector<ClassMetrics> classes;
    double miou = 0.0;
    double pa = 0.0;
    double precision = 0.0;  // macro
    double recall = 0.0;     // macro
    double fpr = 0.0;        // macro
    long long evaluated_pixels = 0;
    LabelMapping mapping;
    // rows: reference classes (order of `classes`); columns: the same classes
    // followed by one "no prediction" column for unknown / void pixels.
    std::vector<std::vector<long long>> counts;
};

/// Pixel metrics after mapping. Unknown and void pixels are misses for the
/// reference class and false positives for none.
EvalReport pixel_metrics(std::span<const cv::Mat> label_maps, std::span<const cv::Mat> references,
                         const LabelMapping& mapping);

EvalReport evaluate(std::span<const cv::Mat> label_maps, std::span<const cv::Mat> references,
                    std::span<const double> frame_risks, double epsilon);

nlohmann::json to_json(const EvalReport& report);

}  // namespace actseg
