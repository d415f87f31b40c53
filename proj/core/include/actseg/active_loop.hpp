#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "actseg/category_model.hpp"
#include "actseg/config.hpp"
#include "actseg/dataset.hpp"
#include "actseg/encoder.hpp"
#include "actseg/risk.hpp"
#include "actseg/segmenter.hpp"

namespace actseg {

struct Provenance {
    std::string manifest_id;
    std::vector<std::string> supplemental_frame_ids;
    std::vector<int> lineage;  // versions from the offline bundle up to this one
};

/// Encoder, category model and risk bound of one version. Artifacts are
/// shared and immutable, so copying a bundle is cheap and safe across threads.
struct ModelBundle {
    std::shared_ptr<const EncoderParams> encoder;
    std::shared_ptr<const CategoryModel> categories;
    double risk_bound = 0.0;
    int version = 0;
    Provenance provenance;
    std::vector<StepRecord> training_log;

    bool loaded() const { return encoder && categories; }
};

/// Bundle directory: bundle.json, encoder_v{n}.ckpt, categories_v{n}.gmm.
void save_bundle(const ModelBundle& bundle, const std::filesystem::path& dir);
ModelBundle load_bundle(const std::filesystem::path& dir);
nlohmann::json bundle_summary(const ModelBundle& bundle);

/// Each anchor plus `patches_per_anchor` neighbour draws around it.
std::vector<PatchRegion> training_patches(const ImageFrame& frame, const FrameAnnotationSet& set,
                                          int patches_per_anchor, Rng& rng);

std::vector<EmbeddingVector> embed_training_patches(const EncoderParams& params,
                                                    std::span<const FrameAnnotationSet> annotations,
                                                    const DatasetManifest& manifest, const RunConfig& cfg);

/// Category model and risk bound fitted on the same embeddings.
std::pair<CategoryModel, double> fit_categories(std::span<const EmbeddingVector> embeddings, const RunConfig& cfg);

ModelBundle offline_learn(const DatasetManifest& manifest, const RunConfig& cfg);

/// Fine-tunes on the original anchors plus `supplemental` (frames resolved in
/// `frames`), then refits categories and risk bound on the same union.
ModelBundle refit_bundle(const ModelBundle& bundle, std::span<const FrameAnnotationSet> supplemental,
                         const DatasetManifest& manifest, const DatasetManifest& frames, const RunConfig& cfg);

/// Subset of `frame_risks` (position, FLR) with pairwise position gaps
/// greater than `spacing` maximising the FLR sum. Picks min(budget, largest
/// feasible count) frames; ties go to the lexicographically smallest set.
std::vector<std::int64_t> select_hard_frames(std::span<const std::pair<std::int64_t, double>> frame_risks,
                                             int budget, int spacing);

enum class RequestStatus { Pending, Annotated, Skipped };

std::string to_string(RequestStatus s);
RequestStatus request_status_from_string(const std::string& s);

struct AnnotationRequest {
    std::string request_id;
    std::string frame_id;
    std::int64_t position = 0;  // index in the risk series history
    double frame_risk = 0.0;
    RequestStatus status = RequestStatus::Pending;
    std::string created_at;
};

void to_json(nlohmann::json& j, const AnnotationRequest& r);
void from_json(const nlohmann::json& j, AnnotationRequest& r);

struct SessionState {
    ModelBundle bundle;
    RiskSeries series;
    std::vector<AnnotationRequest> requests;  // current batch
    std::vector<FrameAnnotationSet> pool;     // supplemental annotations, one per frame
    int batch_size = 20;
    int spacing = 5;
    std::int64_t frames_seen = 0;
    int next_request = 1;
    std::map<std::string, std::int64_t> skipped_at;  // frame id -> frames_seen at skip time
    // Frames still reachable from the window, the queue or the pool.
    std::map<std::string, ImageFrame> frames;
    std::map<std::string, SegmentationResult> results;

    bool batch_open() const;
    std::vector<const AnnotationRequest*> pending() const;
};

SessionState make_session(ModelBundle bundle, const RunConfig& cfg);

/// Segments with the current bundle, records the frame risk and updates the trigger.
SegmentationResult process_frame(SessionState& state, const ImageFrame& frame, const RunConfig& cfg);

/// Hard frames of the triggering window become requests; the trigger is
/// acknowledged and further triggers are suspended until the batch closes.
std::vector<AnnotationRequest> open_annotation_batch(SessionState& state);

/// Resubmitting a frame replaces its previous annotation.
void ingest_annotations(SessionState& state, std::span<const FrameAnnotationSet> submissions);

void skip_request(SessionState& state, const std::string& request_id);

/// Checks the update preconditions (non-empty pool, no pending request).
void check_update_ready(const SessionState& state);

/// Manifest view over the frames held by the session (for fine-tuning).
DatasetManifest session_frames(const SessionState& state);

/// Installs a refitted bundle: the batch is closed and a fresh risk window starts.
void apply_update(SessionState& state, ModelBundle bundle);

/// Synchronous update: check, refit, apply.
ModelBundle update_model(SessionState& state, const DatasetManifest& training, const RunConfig& cfg);

/// Segments every frame in order. The callback sees each result.
void run_online(std::span<const ImageFrame> frames, SessionState& state, const RunConfig& cfg,
                const std::function<void(const SegmentationResult&)>& on_result = {});

nlohmann::json session_summary(const SessionState& state);

/// JSON document plus frame images and bundles under `dir`.
void save_session(const SessionState& state, const std::filesystem::path& dir);
SessionState load_session(const std::filesystem::path& dir, const RunConfig& cfg);

struct UpdateJob {
    std::string job_id;
    std::string status = "queued";  // queued, running, done, failed
    std::string stage;
    int from_version = 0;
    int to_version = 0;
    std::string error;
};

nlohmann::json to_json(const UpdateJob& job);

/// Serialized owner of a SessionState. Every transition runs on one command
/// thread; readers get immutable snapshots. Model updates run on a worker
/// thread against a frozen bundle and are swapped in when done.
class Session {
public:
    Session(SessionState state, DatasetManifest training, RunConfig cfg);
    ~Session();

    Session(const Session&) = delete;
    Session& operator=(const Session&) = delete;

    std::shared_ptr<const SessionState> snapshot() const;

    std::future<SegmentationResult> submit_frame(ImageFrame frame);
    std::future<std::vector<AnnotationRequest>> open_batch();
    std::future<std::vector<AnnotationRequest>> ingest(std::vector<FrameAnnotationSet> submissions);
    std::future<AnnotationRequest> skip(std::string request_id);

    /// Returns the job id; the preconditions are checked before launch.
    std::future<std::string> start_update();
    std::optional<UpdateJob> job(const std::string& job_id) const;

    /// Blocks until the command queue and any running update are drained.
    void wait_idle();

    const RunConfig& config() const { return cfg_; }

private:
    template <typename F>
    auto enqueue(F&& fn) -> std::future<decltype(fn(std::declval<SessionState&>()))>;

    void owner_loop();
    void publish();
    void set_job(const UpdateJob& job);

    SessionState state_;  // owner thread only
    DatasetManifest training_;
    RunConfig cfg_;

    mutable std::mutex snapshot_mutex_;
    std::shared_ptr<const SessionState> snapshot_;

    std::mutex queue_mutex_;
    std::condition_variable queue_cv_;
    std::condition_variable idle_cv_;
    std::deque<std::function<void()>> queue_;
    bool stopping_ = false;
    bool busy_ = false;

    mutable std::mutex jobs_mutex_;
    std::map<std::string, UpdateJob> jobs_;
    int next_job_ = 1;
    std::thread update_thread_;
    bool update_running_ = false;

    std::thread owner_;
};

}  // namespace actseg
