#include "actseg/risk.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "actseg/error.hpp"

namespace actseg {

using nlohmann::json;

void RiskBoundConfig::validate() const {
    if (!(confidence > 0.0 && confidence < 1.0)) throw Error(ErrorCode::InvalidArgument, "confidence must lie in (0,1)");
    if (histogram_bins < 1) throw Error(ErrorCode::InvalidArgument, "histogram_bins must be >= 1");
}

void to_json(json& j, const RiskBoundConfig& c) {
    j = {{"confidence", c.confidence}, {"histogram_bins", c.histogram_bins}};
}

void from_json(const json& j, RiskBoundConfig& c) {
    c.confidence = j.value("confidence", c.confidence);
    c.histogram_bins = j.value("histogram_bins", c.histogram_bins);
}

double estimate_risk_bound(std::span<const double> risks, double confidence) {
    if (risks.empty()) throw Error(ErrorCode::EmptyRisks, "no training risks");
    if (!(confidence > 0.0 && confidence < 1.0)) throw Error(ErrorCode::InvalidArgument, "confidence must lie in (0,1)");
    std::vector<double> sorted(risks.begin(), risks.end());
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    // Largest count of values allowed strictly above the bound; the slack
    // absorbs representation error in (1 - delta) * N.
    const double budget = (1.0 - confidence) * static_cast<double>(n);
    std::size_t allowed = static_cast<std::size_t>(std::floor(budget + 1e-9 * std::max(1.0, budget)));
    allowed = std::min(allowed, n - 1);
    return sorted[n - 1 - allowed];
}

RiskHistogram risk_histogram(std::span<const double> risks, int bins) {
    if (risks.empty()) throw Error(ErrorCode::EmptyRisks, "no risks");
    if (bins < 1) throw Error(ErrorCode::InvalidArgument, "bins must be >= 1");
    RiskHistogram h;
    const auto [lo, hi] = std::minmax_element(risks.begin(), risks.end());
    h.lo = *lo;
    h.hi = *hi;
    h.counts.assign(static_cast<std::size_t>(bins), 0);
    const double width = (h.hi - h.lo) / bins;
    for (double r : risks) {
        std::size_t b = width > 0.0 ? static_cast<std::size_t>((r - h.lo) / width) : 0;
        ++h.counts[std::min(b, h.counts.size() - 1)];
    }
    return h;
}

double frame_risk(std::span<const PatchPrediction> predictions) {
    if (predictions.empty()) throw Error(ErrorCode::EmptyFrame, "frame has no patches");
    const auto unknown = std::count_if(predictions.begin(), predictions.end(),
                                       [](const PatchPrediction& p) { return p.unknown(); });
    return static_cast<double>(unknown) / static_cast<double>(predictions.size());
}

double sequence_risk(std::span<const double> frame_risks, double epsilon) {
    if (frame_risks.empty()) throw Error(ErrorCode::EmptySequence, "no frame risks");
    const auto risky = std::count_if(frame_risks.begin(), frame_risks.end(), [epsilon](double f) { return f > epsilon; });
    return static_cast<double>(risky) / static_cast<double>(frame_risks.size());
}

void RiskSeriesConfig::validate() const {
    if (window < 1) throw Error(ErrorCode::InvalidArgument, "window must be >= 1");
}

void to_json(json& j, const RiskSeriesConfig& c) {
    j = {{"epsilon", c.epsilon},
         {"window", c.window},
         {"trigger_threshold", c.trigger_threshold},
         {"require_full_window", c.require_full_window}};
}

void from_json(const json& j, RiskSeriesConfig& c) {
    c.epsilon = j.value("epsilon", c.epsilon);
    c.window = j.value("window", c.window);
    c.trigger_threshold = j.value("trigger_threshold", c.trigger_threshold);
    c.require_full_window = j.value("require_full_window", c.require_full_window);
}

std::span<const std::pair<std::string, double>> RiskSeries::window() const {
    const std::size_t w = std::min(frame_risks.size(), static_cast<std::size_t>(std::max(config.window, 1)));
    return std::span(frame_risks).subspan(frame_risks.size() - w);
}

RiskSeries update_trigger(RiskSeries series, const std::string& frame_id, double flr) {
    series.frame_risks.emplace_back(frame_id, flr);
    const auto win = series.window();
    std::vector<double> values;
    values.reserve(win.size());
    for (const auto& [id, f] : win) values.push_back(f);
    series.sequence_risk = sequence_risk(values, series.config.epsilon);
    const bool full = !series.config.require_full_window ||
                      win.size() >= static_cast<std::size_t>(series.config.window);
    if (!series.suspended && full && series.sequence_risk > series.config.trigger_threshold) series.triggered = true;
    return series;
}

RiskSeries acknowledge(RiskSeries series) {
    series.triggered = false;
    return series;
}

json risk_series_summary(const RiskSeries& series) {
    return {{"phi_s", series.sequence_risk},
            {"epsilon", series.config.epsilon},
            {"window", series.config.window},
            {"trigger_threshold", series.config.trigger_threshold},
            {"triggered", series.triggered},
            {"frames", series.frame_risks.size()}};
}

void export_risk_series(const RiskSeries& series, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
    for (const auto& [id, flr] : series.frame_risks) out << json{{"frame_id", id}, {"flr", flr}}.dump() << '\n';
    auto summary_path = path;
    summary_path.replace_extension(".summary.json");
    std::ofstream summary(summary_path);
    if (!summary) throw Error(ErrorCode::IoError, "cannot write " + summary_path.string());
    summary << risk_series_summary(series).dump(2) << '\n';
}

}  // namespace actseg
