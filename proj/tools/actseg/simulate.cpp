#include "simulate.hpp"

#include <fstream>
#include <map>

#include <spdlog/spdlog.h>

#include "actseg/active_loop.hpp"
#include "actseg/error.hpp"
#include "actseg/metrics.hpp"
#include "actseg/segmenter.hpp"

namespace actseg::cli {

using nlohmann::json;

namespace {

struct Scenario {
    DatasetManifest train;
    DatasetManifest stream;
    std::vector<std::pair<std::string, DatasetManifest>> eval_sets;
};

DatasetManifest scenes_manifest(const std::vector<synthetic::Scene>& scenes, const std::string& id) {
    return synthetic::make_manifest(scenes, 0, {}, 0, id);
}

Scenario synthetic_scenario(const RunConfig& cfg, const SimulationOptions& opt) {
    const std::uint64_t s = cfg.seed * 1000;
    const int calm = opt.calm_frames < 0 ? cfg.risk_series.window : opt.calm_frames;
    const int shift = opt.shift_frames < 0 ? cfg.risk_series.window : opt.shift_frames;
    synthetic::AnnotatorConfig ac{opt.anchor_size, opt.anchors_per_class};

    Scenario sc;
    const auto train = synthetic::generate_sequence(opt.scenes, "train", 0, opt.train_frames, false, s + 1);
    sc.train = synthetic::make_manifest(train, opt.train_frames, ac, s + 7, "synthetic-train");

    auto stream = synthetic::generate_sequence(opt.scenes, "calm", 1000, calm, false, s + 11);
    const auto drift = synthetic::generate_sequence(opt.scenes, "drift", 1000 + calm, shift, true, s + 12);
    stream.insert(stream.end(), drift.begin(), drift.end());
    sc.stream = scenes_manifest(stream, "synthetic-stream");

    sc.eval_sets.emplace_back(
        "base", scenes_manifest(synthetic::generate_sequence(opt.scenes, "test", 100, opt.test_frames, false, s + 99),
                                "synthetic-test"));
    sc.eval_sets.emplace_back(
        "shifted", scenes_manifest(synthetic::generate_sequence(opt.scenes, "shift", 200, opt.test_frames, true, s + 98),
                                   "synthetic-shifted"));
    return sc;
}

Scenario recorded_scenario(const SimulationOptions& opt) {
    Scenario sc;
    sc.train = load_manifest(*opt.train_manifest);
    sc.stream = load_manifest(*opt.stream_manifest);
    if (sc.stream.reference_masks.empty())
        throw Error(ErrorCode::InvalidArgument, "stream manifest has no reference masks to annotate from");
    sc.eval_sets.emplace_back("stream", sc.stream);
    return sc;
}

json score(const ModelBundle& b, const DatasetManifest& set, const RunConfig& cfg) {
    const NetworkEncoder enc(*b.encoder);
    std::vector<cv::Mat> preds, refs;
    std::vector<double> risks;
    for (const auto& frame : set.frames) {
        const auto r =
            segment_frame(frame, enc, *b.categories, cfg.sliding_window, cfg.sampler, cfg.em.weighted_classification);
        risks.push_back(r.frame_risk);
        const auto it = set.reference_masks.find(frame.frame_id);
        if (it == set.reference_masks.end()) continue;
        preds.push_back(r.label_map);
        refs.push_back(it->second.mask);
    }
    json out;
    if (!preds.empty()) {
        const auto rep = evaluate(preds, refs, risks, cfg.risk_series.epsilon);
        out = {{"miou", rep.miou}, {"pa", rep.pa}, {"precision", rep.precision}, {"recall", rep.recall},
               {"fpr", rep.fpr}};
    }
    out["mflr"] = mflr(risks);
    out["sc"] = scene_coverage(risks, cfg.risk_series.epsilon);
    out["frames"] = set.frames.size();
    return out;
}

// Mask-driven stand-in for the operator; frames without a usable mask are skipped.
std::vector<FrameAnnotationSet> annotate_requests(const std::vector<AnnotationRequest>& requests,
                                                  const SessionState& state, const DatasetManifest& stream,
                                                  const SimulationOptions& opt, Rng& rng) {
    synthetic::AnnotatorConfig ac{opt.anchor_size, opt.anchors_per_class};
    std::vector<FrameAnnotationSet> out;
    for (const auto& r : requests) {
        const auto mask = stream.reference_masks.find(r.frame_id);
        const auto frame = state.frames.find(r.frame_id);
        if (mask == stream.reference_masks.end() || frame == state.frames.end()) continue;
        auto set = synthetic::annotate({frame->second, mask->second.mask}, ac, rng);
        if (validate_frame_annotations(set).trainable) out.push_back(std::move(set));
    }
    return out;
}

void write_json(const std::filesystem::path& path, const json& doc) {
    std::ofstream f(path);
    if (!f) throw Error(ErrorCode::IoError, "cannot write " + path.string());
    f << doc.dump(2) << '\n';
}

}  // namespace

json simulate_loop(const RunConfig& cfg, const SimulationOptions& opt) {
    if (opt.train_manifest.has_value() != opt.stream_manifest.has_value())
        throw Error(ErrorCode::InvalidArgument, "recorded data needs both a training and a stream manifest");
    Scenario sc = opt.train_manifest ? recorded_scenario(opt) : synthetic_scenario(cfg, opt);
    std::filesystem::create_directories(opt.out_dir);

    if (!opt.write_data.empty()) {
        write_dataset(sc.train, opt.write_data / "train");
        write_dataset(sc.stream, opt.write_data / "stream");
        for (auto& [name, set] : sc.eval_sets)
            if (name != "stream") write_dataset(set, opt.write_data / name);
    }

    const ModelBundle offline = offline_learn(sc.train, cfg);
    save_bundle(offline, opt.out_dir / ("bundle_v" + std::to_string(offline.version)));
    json report;
    report["offline"] = {{"bundle", bundle_summary(offline)}};
    for (const auto& [name, set] : sc.eval_sets) report["offline"][name] = score(offline, set, cfg);
    spdlog::info("offline bundle v{}: m={} r_sigma={:.6g}", offline.version, offline.categories->m(),
                 offline.risk_bound);

    SessionState state = make_session(offline, cfg);
    Rng rng(cfg.seed + 5);
    json rounds = json::array();
    std::ofstream stream_log(opt.out_dir / "stream.jsonl");
    for (std::size_t i = 0; i < sc.stream.frames.size(); ++i) {
        const auto& frame = sc.stream.frames[i];
        const auto result = process_frame(state, frame, cfg);
        stream_log << json{{"frame_id", frame.frame_id},
                           {"flr", result.frame_risk},
                           {"phi_s", state.series.sequence_risk},
                           {"triggered", state.series.triggered},
                           {"bundle_version", state.bundle.version}}
                          .dump()
                   << '\n';
        const bool budget_left = opt.max_rounds < 0 || static_cast<int>(rounds.size()) < opt.max_rounds;
        if (!state.series.triggered || state.batch_open() || !budget_left) continue;

        const auto requests = open_annotation_batch(state);
        const auto subs = annotate_requests(requests, state, sc.stream, opt, rng);
        if (!subs.empty()) ingest_annotations(state, subs);
        for (const auto* p : state.pending()) skip_request(state, p->request_id);
        if (subs.empty()) {
            spdlog::warn("round at frame {} produced no usable annotation", frame.frame_id);
            continue;
        }
        const ModelBundle updated = update_model(state, sc.train, cfg);
        save_bundle(updated, opt.out_dir / ("bundle_v" + std::to_string(updated.version)));
        rounds.push_back({{"frame_index", i},
                          {"frame_id", frame.frame_id},
                          {"requests", requests.size()},
                          {"annotated", subs.size()},
                          {"bundle_version", updated.version},
                          {"m", updated.categories->m()},
                          {"r_sigma", updated.risk_bound}});
        spdlog::info("round {} at frame {}: {} requests, bundle v{}", rounds.size(), i, requests.size(),
                     updated.version);
    }
    export_risk_series(state.series, opt.out_dir / "risk_series.jsonl");

    report["rounds"] = rounds;
    report["final"] = {{"bundle", bundle_summary(state.bundle)}};
    for (const auto& [name, set] : sc.eval_sets) report["final"][name] = score(state.bundle, set, cfg);
    write_json(opt.out_dir / "report.json", report);
    return report;
}

}  // namespace actseg::cli
