#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "actseg/category_model.hpp"
#include "actseg/encoder.hpp"
#include "actseg/risk.hpp"
#include "actseg/sampler.hpp"
#include "actseg/segmenter.hpp"

namespace actseg {

struct SessionConfig {
    int batch_size = 20;         // B
    int spacing = 5;             // Delta, in frames
    int patches_per_anchor = 8;  // neighbour samples per anchor for the category fit
    std::filesystem::path state_dir;  // empty: no persistence

    void validate() const;
};

void to_json(nlohmann::json& j, const SessionConfig& c);
void from_json(const nlohmann::json& j, SessionConfig& c);

/// Everything a run needs, read from one JSON document with one object per
/// section. Missing sections and keys keep their defaults.
struct RunConfig {
    SamplerConfig sampler;
    TrainConfig train;
    SlidingWindowConfig sliding_window;
    RiskBoundConfig risk_bound;
    RiskSeriesConfig risk_series;
    EmConfig em;
    SessionConfig session;
    std::uint64_t seed = 0;

    void validate() const;

    /// Derives every component seed from `seed`.
    void apply_seed(std::uint64_t seed);
};

void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const RunConfig& config, const std::filesystem::path& path);

}  // namespace actseg
