#include "actseg/metrics.hpp"

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <set>

#include "actseg/dataset.hpp"
#include "actseg/error.hpp"
#include "actseg/prediction.hpp"
#include "actseg/risk.hpp"

namespace actseg {

using nlohmann::json;

double mflr(std::span<const double> frame_risks) {
    if (frame_risks.empty()) throw Error(ErrorCode::EmptySequence, "no frame risks");
    return std::accumulate(frame_risks.begin(), frame_risks.end(), 0.0) / static_cast<double>(frame_risks.size());
}

double scene_coverage(std::span<const double> frame_risks, double epsilon) {
    return 1.0 - sequence_risk(frame_risks, epsilon);
}

int LabelMapping::apply(int label) const {
    if (label == kUnknownLabel) return kVoidClass;
    auto it = cluster_to_class.find(label);
    return it == cluster_to_class.end() ? kVoidClass : it->second;
}

std::vector<int> max_weight_assignment(const std::vector<std::vector<double>>& weights) {
    const std::size_t rows = weights.size();
    const std::size_t cols = rows == 0 ? 0 : weights.front().size();
    const std::size_t n = std::max(rows, cols);
    if (n == 0) return {};
    double top = 0.0;
    for (const auto& r : weights)
        for (double w : r) top = std::max(top, w);
    // Square cost matrix, 1-indexed as in the classic potentials formulation.
    std::vector<std::vector<double>> cost(n + 1, std::vector<double>(n + 1, top));
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) cost[i + 1][j + 1] = top - weights[i][j];

    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        p[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(n + 1, inf);
        std::vector<bool> used(n + 1, false);
        do {
            used[j0] = true;
            const std::size_t i0 = p[j0];
            double delta = inf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost[i0][j] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<int> result(rows, -1);
    for (std::size_t j = 1; j <= n; ++j)
        if (p[j] >= 1 && p[j] <= rows && j <= cols) result[p[j] - 1] = static_cast<int>(j - 1);
    return result;
}

namespace {

void check_pairs(std::span<const cv::Mat> label_maps, std::span<const cv::Mat> references) {
    if (references.empty()) throw Error(ErrorCode::NoReferenceMasks, "no reference masks");
    if (label_maps.size() != references.size())
        throw Error(ErrorCode::ShapeMismatch, "prediction and reference counts differ");
    for (std::size_t i = 0; i < references.size(); ++i) {
        if (label_maps[i].size() != references[i].size())
            throw Error(ErrorCode::ShapeMismatch, "prediction and reference sizes differ");
        if (label_maps[i].type() != CV_8UC1 || references[i].type() != CV_8UC1)
            throw Error(ErrorCode::InvalidArgument, "label maps and references must be CV_8UC1");
    }
}

std::vector<int> reference_classes(std::span<const cv::Mat> references) {
    std::set<int> classes;
    for (const auto& ref : references)
        for (int y = 0; y < ref.rows; ++y) {
            const auto* row = ref.ptr<std::uint8_t>(y);
            for (int x = 0; x < ref.cols; ++x)
                if (row[x] != kIgnoreLabel) classes.insert(row[x]);
        }
    return {classes.begin(), classes.end()};
}

}  // namespace

LabelMapping map_clusters_to_reference(std::span<const cv::Mat> label_maps, std::span<const cv::Mat> references) {
    check_pairs(label_maps, references);
    const std::vector<int> classes = reference_classes(references);
    std::set<int> cluster_set;
    for (const auto& pred : label_maps)
        for (int y = 0; y < pred.rows; ++y) {
            const auto* row = pred.ptr<std::uint8_t>(y);
            for (int x = 0; x < pred.cols; ++x)
                if (row[x] != kUnknownLabel) cluster_set.insert(row[x]);
        }
    const std::vector<int> clusters(cluster_set.begin(), cluster_set.end());

    std::vector<int> class_index(256, -1);
    for (std::size_t c = 0; c < classes.size(); ++c) class_index[static_cast<std::size_t>(classes[c])] = static_cast<int>(c);
    std::vector<int> cluster_index(256, -1);
    for (std::size_t k = 0; k < clusters.size(); ++k)
        cluster_index[static_cast<std::size_t>(clusters[k])] = static_cast<int>(k);

    std::vector<std::vector<double>> counts(clusters.size(), std::vector<double>(classes.size(), 0.0));
    for (std::size_t i = 0; i < references.size(); ++i)
        for (int y = 0; y < references[i].rows; ++y) {
            const auto* ref = references[i].ptr<std::uint8_t>(y);
            const auto* pred = label_maps[i].ptr<std::uint8_t>(y);
            for (int x = 0; x < references[i].cols; ++x) {
                if (ref[x] == kIgnoreLabel || pred[x] == kUnknownLabel) continue;
                counts[static_cast<std::size_t>(cluster_index[pred[x]])][static_cast<std::size_t>(class_index[ref[x]])] += 1.0;
            }
        }

    LabelMapping mapping;
    const auto assignment = max_weight_assignment(counts);
    for (std::size_t k = 0; k < clusters.size(); ++k) {
        const int col = assignment[k];
        mapping.cluster_to_class[clusters[k]] = col >= 0 ? classes[static_cast<std::size_t>(col)] : kVoidClass;
    }
    return mapping;
}

EvalReport pixel_metrics(std::span<const cv::Mat> label_maps, std::span<const cv::Mat> references,
                         const LabelMapping& mapping) {
    check_pairs(label_maps, references);
    EvalReport report;
    report.mapping = mapping;
    const std::vector<int> classes = reference_classes(references);
    const std::size_t nc = classes.size();
    std::vector<int> class_index(256, -1);
    for (std::size_t c = 0; c < nc; ++c) class_index[static_cast<std::size_t>(classes[c])] = static_cast<int>(c);

    std::vector<int> mapped(256, static_cast<int>(nc));  // label -> column; nc = no prediction
    for (int label = 1; label < 256; ++label) {
        const int cls = mapping.apply(label);
        if (cls >= 0 && cls < 256 && class_index[static_cast<std::size_t>(cls)] >= 0)
            mapped[static_cast<std::size_t>(label)] = class_index[static_cast<std::size_t>(cls)];
    }

    report.counts.assign(nc, std::vector<long long>(nc + 1, 0));
    for (std::size_t i = 0; i < references.size(); ++i)
        for (int y = 0; y < references[i].rows; ++y) {
            const auto* ref = references[i].ptr<std::uint8_t>(y);
            const auto* pred = label_maps[i].ptr<std::uint8_t>(y);
            for (int x = 0; x < references[i].cols; ++x) {
                if (ref[x] == kIgnoreLabel) continue;
                ++report.counts[static_cast<std::size_t>(class_index[ref[x]])][static_cast<std::size_t>(mapped[pred[x]])];
                ++report.evaluated_pixels;
            }
        }

    long long correct = 0;
    for (std::size_t c = 0; c < nc; ++c) {
        ClassMetrics m;
        m.class_id = classes[c];
        m.tp = report.counts[c][c];
        for (std::size_t j = 0; j <= nc; ++j)
            if (j != c) m.fn += report.counts[c][j];
        for (std::size_t r = 0; r < nc; ++r)
            if (r != c) m.fp += report.counts[r][c];
        m.tn = report.evaluated_pixels - m.tp - m.fp - m.fn;
        auto ratio = [](long long a, long long b) { return b > 0 ? static_cast<double>(a) / static_cast<double>(b) : 0.0; };
        m.iou = ratio(m.tp, m.tp + m.fp + m.fn);
        m.precision = ratio(m.tp, m.tp + m.fp);
        m.recall = ratio(m.tp, m.tp + m.fn);
        m.fpr = ratio(m.fp, m.fp + m.tn);
        correct += m.tp;
        report.classes.push_back(m);
    }
    if (nc > 0) {
        for (const auto& m : report.classes) {
            report.miou += m.iou;
            report.precision += m.precision;
            report.recall += m.recall;
            report.fpr += m.fpr;
        }
        const double inv = 1.0 / static_cast<double>(nc);
        report.miou *= inv;
        report.precision *= inv;
        report.recall *= inv;
        report.fpr *= inv;
    }
    report.pa = report.evaluated_pixels > 0
                    ? static_cast<double>(correct) / static_cast<double>(report.evaluated_pixels)
                    : 0.0;
    return report;
}

EvalReport evaluate(std::span<const cv::Mat> label_maps, std::span<const cv::Mat> references,
                    std::span<const double> frame_risks, double epsilon) {
    EvalReport report = pixel_metrics(label_maps, references, map_clusters_to_reference(label_maps, references));
    if (!frame_risks.empty()) {
        report.mflr = mflr(frame_risks);
        report.sc = scene_coverage(frame_risks, epsilon);
    }
    return report;
}

json to_json(const EvalReport& report) {
    json classes = json::array();
    for (const auto& m : report.classes)
        classes.push_back({{"class_id", m.class_id},
                           {"tp", m.tp},
                           {"fp", m.fp},
                           {"fn", m.fn},
                           {"tn", m.tn},
                           {"iou", m.iou},
                           {"precision", m.precision},
                           {"recall", m.recall},
                           {"fpr", m.fpr}});
    json mapping = json::object();
    for (const auto& [cluster, cls] : report.mapping.cluster_to_class)
        mapping[std::to_string(cluster)] = cls == kVoidClass ? json("void") : json(cls);
    return {{"mflr", report.mflr},
            {"sc", report.sc},
            {"miou", report.miou},
            {"pa", report.pa},
            {"precision", report.precision},
            {"recall", report.recall},
            {"fpr", report.fpr},
            {"evaluated_pixels", report.evaluated_pixels},
            {"classes", classes},
            {"label_mapping", mapping},
            {"counts", report.counts}};
}

}  // namespace actseg
