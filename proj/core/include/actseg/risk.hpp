#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "actseg/prediction.hpp"

namespace actseg {

struct RiskBoundConfig {
    double confidence = 0.95;  // delta
    int histogram_bins = 50;

    void validate() const;
};

void to_json(nlohmann::json& j, const RiskBoundConfig& c);
void from_json(const nlohmann::json& j, RiskBoundConfig& c);

/// Smallest observed risk r such that the fraction of risks strictly above
/// it is at most 1 - confidence. Computed exactly on the sorted values.
double estimate_risk_bound(std::span<const double> risks, double confidence);

struct RiskHistogram {
    double lo = 0.0;
    double hi = 0.0;
    std::vector<std::size_t> counts;
};

/// Equal-width histogram, for display only.
RiskHistogram risk_histogram(std::span<const double> risks, int bins);

/// Fraction of patches labelled unknown.
double frame_risk(std::span<const PatchPrediction> predictions);

/// Fraction of frames whose frame risk strictly exceeds `epsilon`.
double sequence_risk(std::span<const double> frame_risks, double epsilon);

struct RiskSeriesConfig {
    double epsilon = 0.5;
    int window = 100;
    double trigger_threshold = 0.5;
    bool require_full_window = true;

    void validate() const;
};

void to_json(nlohmann::json& j, const RiskSeriesConfig& c);
void from_json(const nlohmann::json& j, RiskSeriesConfig& c);

struct RiskSeries {
    RiskSeriesConfig config;
    std::vector<std::pair<std::string, double>> frame_risks;  // full history, oldest first
    double sequence_risk = 0.0;  // over the trailing window
    bool triggered = false;      // latched until acknowledged
    bool suspended = false;      // no new trigger while an annotation batch is open

    /// Trailing window, at most config.window entries.
    std::span<const std::pair<std::string, double>> window() const;
};

/// Appends a frame risk and recomputes the sequence risk over the trailing
/// window; latches `triggered` once it exceeds the threshold.
RiskSeries update_trigger(RiskSeries series, const std::string& frame_id, double flr);

RiskSeries acknowledge(RiskSeries series);

nlohmann::json risk_series_summary(const RiskSeries& series);

/// One `{frame_id, flr}` line per frame followed by a summary line.
void export_risk_series(const RiskSeries& series, const std::filesystem::path& path);

}  // namespace actseg
