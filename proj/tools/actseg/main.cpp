#include <algorithm>
#include <csignal>
#include <pthread.h>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <spdlog/spdlog.h>

#include "actseg/active_loop.hpp"
#include "actseg/api_server.hpp"
#include "actseg/config.hpp"
#include "actseg/dataset.hpp"
#include "actseg/error.hpp"
#include "actseg/metrics.hpp"
#include "actseg/segmenter.hpp"
#include "simulate.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace actseg;

namespace {

bool is_image(const fs::path& p) {
    auto ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp";
}

std::vector<fs::path> sorted_images(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw Error(ErrorCode::IoError, "not a directory: " + dir.string());
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && is_image(e.path())) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

// Frames from a manifest, or every image of a directory in name order.
std::vector<ImageFrame> input_frames(const std::string& manifest, const std::string& images) {
    if (!manifest.empty()) return load_manifest(manifest).frames;
    std::vector<ImageFrame> frames;
    std::int64_t index = 0;
    for (const auto& p : sorted_images(images)) {
        ImageFrame f;
        f.frame_id = p.stem().string();
        f.sequence_index = index++;
        f.image = read_rgb_image(p);
        f.source_path = p.string();
        frames.push_back(std::move(f));
    }
    return frames;
}

void print_json(const json& j) { std::cout << j.dump(2) << '\n'; }

void write_json(const fs::path& path, const json& j) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path);
    if (!f) throw Error(ErrorCode::IoError, "cannot write " + path.string());
    f << j.dump(2) << '\n';
}

int cmd_train(const RunConfig& cfg, const std::string& manifest, const std::string& out) {
    const auto bundle = offline_learn(load_manifest(manifest), cfg);
    save_bundle(bundle, out);
    print_json(bundle_summary(bundle));
    return 0;
}

int cmd_segment(const RunConfig& cfg, const std::string& bundle_dir, const std::string& manifest,
                const std::string& images, const std::string& out) {
    const auto bundle = load_bundle(bundle_dir);
    const NetworkEncoder enc(*bundle.encoder);
    std::vector<double> risks;
    for (const auto& frame : input_frames(manifest, images)) {
        const auto r = segment_frame(frame, enc, *bundle.categories, cfg.sliding_window, cfg.sampler,
                                     cfg.em.weighted_classification);
        write_segmentation(r, bundle.categories->m(), bundle.risk_bound, out);
        risks.push_back(r.frame_risk);
        spdlog::info("{}: frame risk {:.4f}", frame.frame_id, r.frame_risk);
    }
    print_json({{"frames", risks.size()},
                {"mflr", risks.empty() ? 0.0 : mflr(risks)},
                {"sc", risks.empty() ? 0.0 : scene_coverage(risks, cfg.risk_series.epsilon)}});
    return 0;
}

int cmd_serve(RunConfig cfg, const std::string& bundle_dir, const std::string& manifest, const std::string& stream,
              const std::string& state_dir, const std::string& host, int port, const std::string& static_dir) {
    if (!state_dir.empty()) cfg.session.state_dir = state_dir;
    // Blocked before any thread starts so that only sigwait below sees them.
    sigset_t stop_signals;
    sigemptyset(&stop_signals);
    sigaddset(&stop_signals, SIGINT);
    sigaddset(&stop_signals, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &stop_signals, nullptr);

    SessionState state;
    const auto& sd = cfg.session.state_dir;
    if (!sd.empty() && fs::exists(sd / "session.json")) {
        state = load_session(sd, cfg);
        spdlog::info("resumed session from {}", sd.string());
    } else {
        if (bundle_dir.empty()) throw Error(ErrorCode::InvalidArgument, "--bundle is required for a new session");
        state = make_session(load_bundle(bundle_dir), cfg);
    }
    DatasetManifest training = manifest.empty() ? DatasetManifest{} : load_manifest(manifest);
    Session session(std::move(state), std::move(training), cfg);
    ApiServer server(session, ApiServerConfig{host, port, static_dir});
    if (!stream.empty()) {
        for (auto& frame : load_manifest(stream).frames) session.submit_frame(std::move(frame));
    }
    server.start();
    int sig = 0;
    sigwait(&stop_signals, &sig);
    spdlog::info("stopping on signal {}", sig);
    server.stop();
    session.wait_idle();
    return 0;
}

int cmd_evaluate(const RunConfig& cfg, const std::string& pred_dir, const std::string& ref_dir, const std::string& out) {
    std::vector<cv::Mat> preds, refs;
    std::vector<double> risks;
    for (const auto& p : sorted_images(pred_dir)) {
        const fs::path ref = fs::path(ref_dir) / (p.stem().string() + ".png");
        if (!fs::exists(ref)) throw Error(ErrorCode::NoReferenceMasks, "no reference mask for " + p.stem().string());
        preds.push_back(cv::imread(p.string(), cv::IMREAD_GRAYSCALE));
        refs.push_back(cv::imread(ref.string(), cv::IMREAD_GRAYSCALE));
        if (preds.back().empty() || refs.back().empty())
            throw Error(ErrorCode::IoError, "cannot read " + p.string() + " or its reference");
        // Frame risks come from segmentation sidecars when present.
        const fs::path sidecar = fs::path(pred_dir) / (p.stem().string() + ".json");
        if (fs::exists(sidecar)) risks.push_back(json::parse(std::ifstream(sidecar)).at("frame_risk").get<double>());
    }
    if (!risks.empty() && risks.size() != preds.size())
        throw Error(ErrorCode::InvalidArgument, "sidecars exist for only some predictions");
    const auto report = evaluate(preds, refs, risks, cfg.risk_series.epsilon);
    const json j = to_json(report);
    if (!out.empty()) write_json(out, j);
    print_json({{"miou", report.miou}, {"pa", report.pa}, {"mflr", report.mflr}, {"sc", report.sc}});
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Active, risk-aware terrain segmentation"};
    app.require_subcommand(1);
    app.fallthrough();
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string log_level = "info";
    app.add_option("--config", config_path, "Run configuration (JSON)")->check(CLI::ExistingFile);
    app.add_option("--seed", seed, "Seed for every random component; overrides the config");
    app.add_option("--log-level", log_level, "trace, debug, info, warn, error, off");

    std::string manifest, out, bundle, images, stream, state_dir, host = "127.0.0.1", static_dir;
    std::string pred_dir, ref_dir;
    int port = 8080;

    auto* train = app.add_subcommand("train", "Offline learning from an annotated manifest");
    train->add_option("--manifest", manifest, "Dataset manifest")->required()->check(CLI::ExistingFile);
    train->add_option("--out", out, "Bundle directory")->required();

    auto* segment = app.add_subcommand("segment", "Segment frames with a bundle");
    segment->add_option("--bundle", bundle, "Bundle directory")->required()->check(CLI::ExistingDirectory);
    auto* seg_manifest = segment->add_option("--manifest", manifest, "Frames from a manifest");
    auto* seg_images = segment->add_option("--images", images, "Frames from an image directory");
    seg_manifest->excludes(seg_images);
    segment->add_option("--out", out, "Output directory (label PNG, sidecar, risk map per frame)")->required();

    auto* serve = app.add_subcommand("serve", "HTTP API for the annotation loop");
    serve->add_option("--bundle", bundle, "Initial bundle directory")->check(CLI::ExistingDirectory);
    serve->add_option("--manifest", manifest, "Training manifest reused by model updates")->check(CLI::ExistingFile);
    serve->add_option("--stream", stream, "Manifest whose frames are fed in on startup")->check(CLI::ExistingFile);
    serve->add_option("--state-dir", state_dir, "Persist and resume the session here");
    serve->add_option("--host", host, "Bind address");
    serve->add_option("--port", port, "Port; 0 picks a free one");
    serve->add_option("--static", static_dir, "Static files served at /");

    auto* evaluate_cmd = app.add_subcommand("evaluate", "Pixel and risk metrics against reference masks");
    evaluate_cmd->add_option("--pred-dir", pred_dir, "Label-map PNGs (and optional sidecars)")
        ->required()
        ->check(CLI::ExistingDirectory);
    evaluate_cmd->add_option("--ref-dir", ref_dir, "Reference masks with matching names")
        ->required()
        ->check(CLI::ExistingDirectory);
    evaluate_cmd->add_option("--out", out, "Report JSON");

    cli::SimulationOptions sim;
    std::string sim_train, sim_stream, write_data;
    auto* simulate = app.add_subcommand("simulate-loop", "Offline learning, triggered rounds, evaluation");
    simulate->add_option("--out", out, "Output directory")->required();
    simulate->add_option("--train-manifest", sim_train, "Recorded training manifest")->check(CLI::ExistingFile);
    simulate->add_option("--stream-manifest", sim_stream, "Recorded stream with reference masks")
        ->check(CLI::ExistingFile);
    simulate->add_option("--max-rounds", sim.max_rounds, "Cap on annotation rounds (negative: no cap)");
    simulate->add_option("--write-data", write_data, "Also write the generated datasets here");
    simulate->add_option("--scene-size", sim.scenes.width, "Synthetic scene side in pixels");
    simulate->add_option("--train-frames", sim.train_frames, "Annotated synthetic training scenes");
    simulate->add_option("--test-frames", sim.test_frames, "Held-out scenes per evaluation set");
    simulate->add_option("--calm-frames", sim.calm_frames, "Familiar scenes before the shift (default: one window)");
    simulate->add_option("--shift-frames", sim.shift_frames, "Shifted scenes (default: one window)");
    simulate->add_option("--anchor-size", sim.anchor_size, "Side of simulated anchor annotations");
    simulate->add_option("--anchors-per-class", sim.anchors_per_class, "Simulated anchors per class and frame");

    CLI11_PARSE(app, argc, argv);
    spdlog::set_level(spdlog::level::from_str(log_level));

    try {
        RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
        if (seed) cfg.apply_seed(*seed);
        cfg.validate();

        if (*train) return cmd_train(cfg, manifest, out);
        if (*segment) {
            if (manifest.empty() && images.empty()) throw Error(ErrorCode::InvalidArgument, "--manifest or --images");
            return cmd_segment(cfg, bundle, manifest, images, out);
        }
        if (*serve) return cmd_serve(cfg, bundle, manifest, stream, state_dir, host, port, static_dir);
        if (*evaluate_cmd) return cmd_evaluate(cfg, pred_dir, ref_dir, out);
        if (*simulate) {
            sim.out_dir = out;
            sim.write_data = write_data;
            sim.scenes.height = sim.scenes.width;
            if (!sim_train.empty()) sim.train_manifest = sim_train;
            if (!sim_stream.empty()) sim.stream_manifest = sim_stream;
            const auto report = cli::simulate_loop(cfg, sim);
            print_json({{"offline", report["offline"]}, {"rounds", report["rounds"].size()}, {"final", report["final"]}});
            return 0;
        }
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return 2;
    }
    return 0;
}
