#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "actseg/config.hpp"
#include "actseg/dataset.hpp"
#include "actseg/synthetic.hpp"

namespace actseg::cli {

struct SimulationOptions {
    std::filesystem::path out_dir;
    std::filesystem::path write_data;  // dump generated datasets here when set
    int max_rounds = -1;               // < 0: as many as the stream triggers

    // Synthetic scenario.
    synthetic::SceneConfig scenes;
    int train_frames = 20;
    int test_frames = 20;
    int calm_frames = -1;   // < 0: one risk window
    int shift_frames = -1;
    int anchor_size = 32;
    int anchors_per_class = 3;

    // Recorded data instead of the synthetic scenario. The stream manifest
    // needs reference masks; they stand in for the operator.
    std::optional<std::filesystem::path> train_manifest;
    std::optional<std::filesystem::path> stream_manifest;
};

/// Offline learning, streaming with trigger-driven annotation rounds and a
/// final evaluation. Returns the JSON report that is also written to
/// `out_dir/report.json`.
nlohmann::json simulate_loop(const RunConfig& cfg, const SimulationOptions& opt);

}  // namespace actseg::cli
