#pragma once

#include <filesystem>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

namespace actseg {

/// Minimal binary container used for checkpoints and model files: a JSON
/// metadata document followed by a list of raw numeric blobs.
///
///   "ACTSEGAR" | u32 format | u64 meta_len | meta bytes | u64 blob_count |
///   { u8 dtype (0 = f32, 1 = f64) | u64 count | little-endian payload }*
struct Archive {
    using Blob = std::variant<std::vector<float>, std::vector<double>>;

    nlohmann::json meta = nlohmann::json::object();
    std::vector<Blob> blobs;
};

void write_archive(const Archive& archive, const std::filesystem::path& path);
Archive read_archive(const std::filesystem::path& path);

}  // namespace actseg
