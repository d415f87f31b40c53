#pragma once

// Small encoder, frames and configs that keep session-level tests fast.

#include <memory>
#include <string>
#include <vector>

#include "actseg/active_loop.hpp"
#include "actseg/config.hpp"
#include "actseg/synthetic.hpp"
#include "test_support.hpp"

namespace actseg::testing {

inline RunConfig tiny_config() {
    RunConfig cfg;
    cfg.sampler.sample_size = 16;
    cfg.sampler.negatives_per_query = 4;
    cfg.train.arch.input_size = 16;
    cfg.train.arch.conv_channels = {4, 8, 8};
    cfg.train.arch.embedding_dim = 8;
    cfg.train.steps = 40;
    cfg.train.fine_tune_steps = 10;
    cfg.train.learning_rate = 0.01;
    cfg.train.fine_tune_learning_rate = 0.005;
    cfg.sliding_window.patch_size = 16;
    cfg.sliding_window.stride = 16;
    cfg.em.max_clusters = 3;
    cfg.em.restarts = 1;
    cfg.em.reg_covar = 1e-3;
    cfg.risk_series.window = 4;
    cfg.risk_series.epsilon = 0.5;
    cfg.risk_series.trigger_threshold = 0.5;
    cfg.session.batch_size = 2;
    cfg.session.spacing = 0;
    cfg.session.patches_per_anchor = 2;
    cfg.apply_seed(17);
    return cfg;
}

inline synthetic::SceneConfig tiny_scenes() {
    synthetic::SceneConfig sc;
    sc.width = sc.height = 64;
    return sc;
}

inline DatasetManifest tiny_manifest(int frames = 2) {
    synthetic::AnnotatorConfig ac;
    ac.patch_size = 12;
    const auto scenes = synthetic::generate_sequence(tiny_scenes(), "train", 0, frames, false, 31);
    return synthetic::make_manifest(scenes, frames, ac, 7, "tiny");
}

/// Random encoder with two fixed unit-variance clusters. A bound of +2 accepts every
/// patch (risk is at most 1), a very negative bound rejects every patch.
inline ModelBundle fixed_bundle(const RunConfig& cfg, double bound, int version = 0) {
    ModelBundle b;
    auto params = init_encoder(cfg.train.arch, 3);
    params.version = version;
    b.encoder = std::make_shared<EncoderParams>(std::move(params));
    const int d = cfg.train.arch.embedding_dim;
    auto model = isotropic_model({EmbeddingVector::Zero(d), EmbeddingVector::Constant(d, 1.0)}, 1.0, bound);
    model.version = version;
    b.categories = std::make_shared<CategoryModel>(std::move(model));
    b.risk_bound = bound;
    b.version = version;
    b.provenance.manifest_id = "fixed";
    b.provenance.lineage = {version};
    return b;
}

inline constexpr double kAcceptAll = 2.0;
inline constexpr double kRejectAll = -1e12;

/// Plain 64 x 64 frames that the tiny config segments into 16 windows.
inline std::vector<ImageFrame> plain_frames(const std::string& prefix, int count, std::int64_t first = 0) {
    std::vector<ImageFrame> out;
    for (int i = 0; i < count; ++i) {
        const auto v = static_cast<std::uint8_t>(40 + 20 * (i % 8));
        out.push_back(solid_frame(prefix + std::to_string(first + i), 64, 64, {v, 100, 200}, first + i));
    }
    return out;
}

/// Two-label annotation inside a 64 x 64 frame.
inline FrameAnnotationSet two_anchor_set(const std::string& frame_id) {
    FrameAnnotationSet s;
    s.frame_id = frame_id;
    s.anchors = {anchor(16, 16, 12, 1), anchor(48, 48, 12, 2)};
    return s;
}

}  // namespace actseg::testing
