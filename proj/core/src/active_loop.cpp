#include "actseg/active_loop.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <limits>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "actseg/error.hpp"

namespace actseg {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    std::uint64_t x = a ^ (b + 0x9E3779B97F4A7C15ULL + (a << 6) + (a >> 2));
    x ^= x >> 33;
    x *= 0xFF51AFD7ED558CCDULL;
    x ^= x >> 33;
    return x;
}

std::string utc_now() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream out;
    out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return out.str();
}

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::IoError, "cannot parse " + path.string() + ": " + e.what());
    }
}

void write_json(const json& doc, const fs::path& path) {
    // Write-then-rename keeps the previous state readable if we die mid-write.
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp);
        if (!out) throw Error(ErrorCode::IoError, "cannot write " + tmp.string());
        out << doc.dump(2) << '\n';
    }
    fs::rename(tmp, path);
}

}  // namespace

// ---------------------------------------------------------------- bundles

json bundle_summary(const ModelBundle& bundle) {
    return {{"version", bundle.version},
            {"risk_bound", bundle.risk_bound},
            {"m", bundle.categories ? bundle.categories->m() : 0},
            {"embedding_dim", bundle.encoder ? bundle.encoder->embedding_dim() : 0},
            {"provenance",
             {{"manifest_id", bundle.provenance.manifest_id},
              {"supplemental_frame_ids", bundle.provenance.supplemental_frame_ids},
              {"lineage", bundle.provenance.lineage}}}};
}

void save_bundle(const ModelBundle& bundle, const fs::path& dir) {
    if (!bundle.loaded()) throw Error(ErrorCode::InvalidArgument, "bundle has no artifacts");
    fs::create_directories(dir);
    json doc = bundle_summary(bundle);
    doc["encoder"] = checkpoint_name(bundle.version);
    doc["categories"] = category_model_name(bundle.version);
    save_checkpoint(*bundle.encoder, dir / checkpoint_name(bundle.version));
    save_category_model(*bundle.categories, dir / category_model_name(bundle.version));
    write_json(doc, dir / "bundle.json");
}

ModelBundle load_bundle(const fs::path& dir) {
    const json doc = read_json(dir / "bundle.json");
    ModelBundle b;
    try {
        b.version = doc.at("version").get<int>();
        b.risk_bound = doc.at("risk_bound").get<double>();
        const auto& prov = doc.at("provenance");
        b.provenance.manifest_id = prov.value("manifest_id", "");
        b.provenance.supplemental_frame_ids = prov.value("supplemental_frame_ids", std::vector<std::string>{});
        b.provenance.lineage = prov.value("lineage", std::vector<int>{});
        b.encoder = std::make_shared<const EncoderParams>(load_checkpoint(dir / doc.at("encoder").get<std::string>()));
        b.categories = std::make_shared<const CategoryModel>(
            load_category_model(dir / doc.at("categories").get<std::string>()));
    } catch (const json::exception& e) {
        throw Error(ErrorCode::IoError, "bad bundle.json in " + dir.string() + ": " + e.what());
    }
    if (b.encoder->version != b.version || b.categories->version != b.version)
        throw Error(ErrorCode::InvalidArgument, "bundle artifacts disagree on the version");
    return b;
}

// ---------------------------------------------------------- offline learning

std::vector<PatchRegion> training_patches(const ImageFrame& frame, const FrameAnnotationSet& set,
                                          int patches_per_anchor, Rng& rng) {
    std::vector<PatchRegion> out;
    out.reserve(set.anchors.size() * static_cast<std::size_t>(patches_per_anchor + 1));
    const cv::Size bounds(frame.width(), frame.height());
    for (const auto& anchor : set.anchors) {
        out.push_back(anchor.region);
        for (int k = 0; k < patches_per_anchor; ++k) out.push_back(sample_neighbor(anchor.region, bounds, rng));
    }
    return out;
}

std::vector<EmbeddingVector> embed_training_patches(const EncoderParams& params,
                                                    std::span<const FrameAnnotationSet> annotations,
                                                    const DatasetManifest& manifest, const RunConfig& cfg) {
    std::vector<EmbeddingVector> out;
    Rng rng(mix(cfg.seed, static_cast<std::uint64_t>(params.version)));
    for (const auto& set : annotations) {
        const ImageFrame* frame = manifest.find_frame(set.frame_id);
        if (frame == nullptr) throw Error(ErrorCode::MissingFrame, "no image for annotated frame " + set.frame_id);
        for (const auto& region : training_patches(*frame, set, cfg.session.patches_per_anchor, rng))
            out.push_back(encode(params, compose_fg_bg(*frame, region, cfg.sampler).tensor));
    }
    return out;
}

std::pair<CategoryModel, double> fit_categories(std::span<const EmbeddingVector> embeddings, const RunConfig& cfg) {
    CategoryModel model = select_model(embeddings, cfg.em);
    std::vector<double> risks;
    risks.reserve(embeddings.size());
    for (const auto& z : embeddings) risks.push_back(score_patch(z, model, cfg.em.weighted_classification).risk);
    const double bound = estimate_risk_bound(risks, cfg.risk_bound.confidence);
    model.risk_bound = bound;
    return {std::move(model), bound};
}

ModelBundle offline_learn(const DatasetManifest& manifest, const RunConfig& cfg) {
    cfg.validate();
    TrainResult trained = train(manifest, cfg.sampler, cfg.train);
    const auto embeddings = embed_training_patches(trained.params, manifest.annotations, manifest, cfg);
    auto [model, bound] = fit_categories(embeddings, cfg);
    model.version = trained.params.version;

    ModelBundle b;
    b.version = trained.params.version;
    b.encoder = std::make_shared<const EncoderParams>(std::move(trained.params));
    b.categories = std::make_shared<const CategoryModel>(std::move(model));
    b.risk_bound = bound;
    b.provenance.manifest_id = manifest.dataset_id;
    b.provenance.lineage = {b.version};
    b.training_log = std::move(trained.log);
    spdlog::info("offline bundle v{}: m={} r_sigma={:.6g} from {} patches", b.version, b.categories->m(), bound,
                 embeddings.size());
    return b;
}

ModelBundle refit_bundle(const ModelBundle& bundle, std::span<const FrameAnnotationSet> supplemental,
                         const DatasetManifest& manifest, const DatasetManifest& frames, const RunConfig& cfg) {
    if (!bundle.loaded()) throw Error(ErrorCode::InvalidArgument, "bundle has no artifacts");
    if (supplemental.empty()) throw Error(ErrorCode::EmptySupplementalPool, "no supplemental annotations");
    // Supplemental frames alone let the encoder drift away from the original classes.
    std::vector<FrameAnnotationSet> tune_sets(manifest.annotations.begin(), manifest.annotations.end());
    tune_sets.insert(tune_sets.end(), supplemental.begin(), supplemental.end());
    DatasetManifest tune_frames = frames;
    tune_frames.frames.insert(tune_frames.frames.end(), manifest.frames.begin(), manifest.frames.end());
    TrainResult tuned = fine_tune(*bundle.encoder, tune_sets, tune_frames, cfg.sampler, cfg.train);
    const int version = bundle.version + 1;
    tuned.params.version = version;

    auto embeddings = embed_training_patches(tuned.params, manifest.annotations, manifest, cfg);
    auto extra = embed_training_patches(tuned.params, supplemental, frames, cfg);
    embeddings.insert(embeddings.end(), std::make_move_iterator(extra.begin()), std::make_move_iterator(extra.end()));
    auto [model, bound] = fit_categories(embeddings, cfg);
    model.version = version;

    ModelBundle b;
    b.version = version;
    b.encoder = std::make_shared<const EncoderParams>(std::move(tuned.params));
    b.categories = std::make_shared<const CategoryModel>(std::move(model));
    b.risk_bound = bound;
    b.provenance = bundle.provenance;
    b.provenance.supplemental_frame_ids.clear();
    for (const auto& s : supplemental) b.provenance.supplemental_frame_ids.push_back(s.frame_id);
    b.provenance.lineage.push_back(version);
    b.training_log = std::move(tuned.log);
    spdlog::info("updated bundle v{}: m={} r_sigma={:.6g} from {} patches", version, b.categories->m(), bound,
                 embeddings.size());
    return b;
}

// ------------------------------------------------------ hard frame selection

std::vector<std::int64_t> select_hard_frames(std::span<const std::pair<std::int64_t, double>> frame_risks,
                                             int budget, int spacing) {
    if (frame_risks.empty() || budget < 1) return {};
    std::vector<std::pair<std::int64_t, double>> items(frame_risks.begin(), frame_risks.end());
    std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    const std::size_t n = items.size();

    // next[i]: first item far enough after item i to be picked with it.
    std::vector<std::size_t> next(n);
    for (std::size_t i = 0, j = 0; i < n; ++i) {
        j = std::max(j, i + 1);
        while (j < n && items[j].first - items[i].first <= spacing) ++j;
        next[i] = j;
    }
    // Largest feasible count: greedy earliest-first is optimal for a spacing constraint.
    std::size_t feasible = 0;
    for (std::size_t i = 0; i < n; i = next[i]) ++feasible;
    const std::size_t k_max = std::min(static_cast<std::size_t>(budget), feasible);
    if (k_max < static_cast<std::size_t>(budget))
        spdlog::warn("hard frame selection: only {} of {} frames satisfy spacing {}", k_max, budget, spacing);

    // best[i][k]: max FLR sum using exactly k picks among items i..n-1.
    const double ninf = -std::numeric_limits<double>::infinity();
    std::vector<std::vector<double>> best(n + 1, std::vector<double>(k_max + 1, ninf));
    for (std::size_t i = 0; i <= n; ++i) best[i][0] = 0.0;
    for (std::size_t i = n; i-- > 0;) {
        for (std::size_t k = 1; k <= k_max; ++k) {
            const double skip = best[i + 1][k];
            const double rest = best[next[i]][k - 1];
            const double take = rest == ninf ? ninf : items[i].second + rest;
            best[i][k] = std::max(skip, take);
        }
    }

    std::vector<std::int64_t> picked;
    constexpr double kTol = 1e-12;
    for (std::size_t i = 0, k = k_max; k > 0 && i < n;) {
        const double rest = best[next[i]][k - 1];
        const bool can_take = rest != ninf;
        // Taking the earliest item on a tie yields the lexicographically smallest set.
        if (can_take && items[i].second + rest >= best[i][k] - kTol) {
            picked.push_back(items[i].first);
            i = next[i];
            --k;
        } else {
            ++i;
        }
    }
    return picked;
}

// ---------------------------------------------------------------- requests

std::string to_string(RequestStatus s) {
    switch (s) {
        case RequestStatus::Pending: return "pending";
        case RequestStatus::Annotated: return "annotated";
        case RequestStatus::Skipped: return "skipped";
    }
    return "pending";
}

RequestStatus request_status_from_string(const std::string& s) {
    if (s == "pending") return RequestStatus::Pending;
    if (s == "annotated") return RequestStatus::Annotated;
    if (s == "skipped") return RequestStatus::Skipped;
    throw Error(ErrorCode::InvalidArgument, "unknown request status '" + s + "'");
}

void to_json(json& j, const AnnotationRequest& r) {
    j = {{"request_id", r.request_id}, {"frame_id", r.frame_id},         {"position", r.position},
         {"frame_risk", r.frame_risk}, {"status", to_string(r.status)}, {"created_at", r.created_at}};
}

void from_json(const json& j, AnnotationRequest& r) {
    r.request_id = j.at("request_id").get<std::string>();
    r.frame_id = j.at("frame_id").get<std::string>();
    r.position = j.value("position", std::int64_t{0});
    r.frame_risk = j.value("frame_risk", 0.0);
    r.status = request_status_from_string(j.value("status", std::string("pending")));
    r.created_at = j.value("created_at", std::string());
}

// ------------------------------------------------------------ session state

bool SessionState::batch_open() const { return !requests.empty(); }

std::vector<const AnnotationRequest*> SessionState::pending() const {
    std::vector<const AnnotationRequest*> out;
    for (const auto& r : requests)
        if (r.status == RequestStatus::Pending) out.push_back(&r);
    return out;
}

SessionState make_session(ModelBundle bundle, const RunConfig& cfg) {
    SessionState s;
    s.bundle = std::move(bundle);
    s.series.config = cfg.risk_series;
    s.batch_size = cfg.session.batch_size;
    s.spacing = cfg.session.spacing;
    return s;
}

namespace {

// Drops frames no longer reachable from the risk window, the batch or the pool.
void prune_frames(SessionState& state) {
    std::set<std::string> keep;
    for (const auto& [id, flr] : state.series.window()) keep.insert(id);
    for (const auto& r : state.requests) keep.insert(r.frame_id);
    for (const auto& p : state.pool) keep.insert(p.frame_id);
    std::erase_if(state.frames, [&](const auto& kv) { return !keep.contains(kv.first); });
    std::erase_if(state.results, [&](const auto& kv) { return !keep.contains(kv.first); });
}

void close_batch(SessionState& state) {
    state.requests.clear();
    state.series.suspended = false;
}

AnnotationRequest* find_request_by_frame(SessionState& state, const std::string& frame_id) {
    for (auto& r : state.requests)
        if (r.frame_id == frame_id) return &r;
    return nullptr;
}

}  // namespace

SegmentationResult process_frame(SessionState& state, const ImageFrame& frame, const RunConfig& cfg) {
    if (!state.bundle.loaded()) throw Error(ErrorCode::InvalidArgument, "no model bundle loaded");
    const NetworkEncoder encoder(*state.bundle.encoder);
    SegmentationResult result = segment_frame(frame, encoder, *state.bundle.categories, cfg.sliding_window,
                                              cfg.sampler, cfg.em.weighted_classification);
    state.series = update_trigger(std::move(state.series), frame.frame_id, result.frame_risk);
    ++state.frames_seen;
    state.frames[frame.frame_id] = frame;
    state.results[frame.frame_id] = result;
    prune_frames(state);
    return result;
}

std::vector<AnnotationRequest> open_annotation_batch(SessionState& state) {
    if (!state.series.triggered) throw Error(ErrorCode::NoTriggeredState, "the risk trigger has not fired");
    const auto window = state.series.window();
    const std::int64_t first = state.frames_seen - static_cast<std::int64_t>(window.size());
    const std::int64_t window_len = state.series.config.window;

    std::set<std::string> pooled;
    for (const auto& p : state.pool) pooled.insert(p.frame_id);
    std::vector<std::pair<std::int64_t, double>> candidates;
    std::map<std::int64_t, std::pair<std::string, double>> by_position;
    for (std::size_t i = 0; i < window.size(); ++i) {
        const auto& [id, flr] = window[i];
        if (flr <= state.series.config.epsilon || pooled.contains(id) || !state.frames.contains(id)) continue;
        if (auto it = state.skipped_at.find(id); it != state.skipped_at.end() && state.frames_seen - it->second < window_len)
            continue;
        const std::int64_t pos = first + static_cast<std::int64_t>(i);
        candidates.emplace_back(pos, flr);
        by_position[pos] = {id, flr};
    }

    state.series = acknowledge(std::move(state.series));
    state.requests.clear();
    const std::string now = utc_now();
    for (std::int64_t pos : select_hard_frames(candidates, state.batch_size, state.spacing)) {
        AnnotationRequest r;
        r.request_id = "req-" + std::to_string(state.next_request++);
        r.frame_id = by_position[pos].first;
        r.frame_risk = by_position[pos].second;
        r.position = pos;
        r.created_at = now;
        state.requests.push_back(std::move(r));
    }
    if (state.requests.empty()) {
        spdlog::warn("annotation batch: no eligible frame in the triggering window");
    } else {
        state.series.suspended = true;
    }
    return state.requests;
}

void ingest_annotations(SessionState& state, std::span<const FrameAnnotationSet> submissions) {
    // Validate everything first so a bad submission leaves the state untouched.
    for (const auto& sub : submissions) {
        const AnnotationRequest* req = find_request_by_frame(state, sub.frame_id);
        if (req == nullptr || req->status == RequestStatus::Skipped)
            throw Error(ErrorCode::UnknownRequest, "no open request for frame " + sub.frame_id);
        const FrameValidation v = validate_frame_annotations(sub);
        if (!v.trainable)
            throw Error(ErrorCode::InvalidAnnotation, "frame " + sub.frame_id + " needs at least two group labels");
        const auto fit = state.frames.find(sub.frame_id);
        if (fit == state.frames.end())
            throw Error(ErrorCode::UnknownRequest, "frame " + sub.frame_id + " is no longer held by the session");
        for (const auto& a : sub.anchors)
            if (a.region.clamped(fit->second.width(), fit->second.height()).area() == 0)
                throw Error(ErrorCode::InvalidAnnotation, "anchor outside frame " + sub.frame_id);
    }
    for (const auto& sub : submissions) {
        auto it = std::find_if(state.pool.begin(), state.pool.end(),
                               [&](const FrameAnnotationSet& p) { return p.frame_id == sub.frame_id; });
        if (it != state.pool.end())
            *it = sub;
        else
            state.pool.push_back(sub);
        find_request_by_frame(state, sub.frame_id)->status = RequestStatus::Annotated;
    }
}

void skip_request(SessionState& state, const std::string& request_id) {
    auto it = std::find_if(state.requests.begin(), state.requests.end(),
                           [&](const AnnotationRequest& r) { return r.request_id == request_id; });
    if (it == state.requests.end()) throw Error(ErrorCode::UnknownRequest, "no request " + request_id);
    if (it->status == RequestStatus::Annotated)
        throw Error(ErrorCode::InvalidArgument, "request " + request_id + " is already annotated");
    it->status = RequestStatus::Skipped;
    state.skipped_at[it->frame_id] = state.frames_seen;
    // A batch that ends with nothing annotated closes without an update.
    const bool all_skipped = std::all_of(state.requests.begin(), state.requests.end(),
                                         [](const AnnotationRequest& r) { return r.status == RequestStatus::Skipped; });
    if (all_skipped && state.pool.empty()) close_batch(state);
}

void check_update_ready(const SessionState& state) {
    if (state.pool.empty()) throw Error(ErrorCode::EmptySupplementalPool, "no supplemental annotations");
    if (!state.pending().empty())
        throw Error(ErrorCode::UnresolvedRequests, std::to_string(state.pending().size()) + " requests still pending");
}

DatasetManifest session_frames(const SessionState& state) {
    DatasetManifest m;
    m.dataset_id = "session";
    for (const auto& [id, frame] : state.frames) m.frames.push_back(frame);
    return m;
}

void apply_update(SessionState& state, ModelBundle bundle) {
    state.bundle = std::move(bundle);
    close_batch(state);
    // Risks measured under the old model say nothing about the new one.
    state.series = RiskSeries{state.series.config, {}, 0.0, false, false};
    state.results.clear();
    prune_frames(state);
}

ModelBundle update_model(SessionState& state, const DatasetManifest& training, const RunConfig& cfg) {
    check_update_ready(state);
    ModelBundle b = refit_bundle(state.bundle, state.pool, training, session_frames(state), cfg);
    apply_update(state, b);
    return b;
}

void run_online(std::span<const ImageFrame> frames, SessionState& state, const RunConfig& cfg,
                const std::function<void(const SegmentationResult&)>& on_result) {
    for (const auto& frame : frames) {
        const SegmentationResult r = process_frame(state, frame, cfg);
        if (on_result) on_result(r);
    }
}

json session_summary(const SessionState& state) {
    std::size_t pending = 0, annotated = 0, skipped = 0;
    for (const auto& r : state.requests) {
        if (r.status == RequestStatus::Pending) ++pending;
        if (r.status == RequestStatus::Annotated) ++annotated;
        if (r.status == RequestStatus::Skipped) ++skipped;
    }
    return {{"bundle", bundle_summary(state.bundle)},
            {"bundle_version", state.bundle.version},
            {"phi_s", state.series.sequence_risk},
            {"triggered", state.series.triggered},
            {"suspended", state.series.suspended},
            {"risk_series", risk_series_summary(state.series)},
            {"frames_seen", state.frames_seen},
            {"batch_size", state.batch_size},
            {"spacing", state.spacing},
            {"queue", {{"pending", pending}, {"annotated", annotated}, {"skipped", skipped}}},
            {"pool_frames", state.pool.size()}};
}

// ------------------------------------------------------------- persistence

void save_session(const SessionState& state, const fs::path& dir) {
    fs::create_directories(dir / "frames");
    const fs::path bundle_dir = dir / "bundles" / ("v" + std::to_string(state.bundle.version));
    if (state.bundle.loaded() && !fs::exists(bundle_dir / "bundle.json")) save_bundle(state.bundle, bundle_dir);

    json frames = json::array();
    for (const auto& [id, frame] : state.frames) {
        const fs::path rel = fs::path("frames") / (id + ".png");
        if (!fs::exists(dir / rel)) write_rgb_image(dir / rel, frame.image);
        frames.push_back({{"frame_id", id}, {"sequence_index", frame.sequence_index}, {"path", rel.string()}});
    }
    json series = json::array();
    for (const auto& [id, flr] : state.series.frame_risks) series.push_back({id, flr});
    json pool = json::array();
    for (const auto& p : state.pool) pool.push_back(annotations_to_json(p));

    const json doc = {{"bundle_dir", fs::relative(bundle_dir, dir).string()},
                      {"series",
                       {{"frame_risks", series},
                        {"sequence_risk", state.series.sequence_risk},
                        {"triggered", state.series.triggered},
                        {"suspended", state.series.suspended}}},
                      {"requests", state.requests},
                      {"pool", pool},
                      {"batch_size", state.batch_size},
                      {"spacing", state.spacing},
                      {"frames_seen", state.frames_seen},
                      {"next_request", state.next_request},
                      {"skipped_at", state.skipped_at},
                      {"frames", frames}};
    write_json(doc, dir / "session.json");
}

SessionState load_session(const fs::path& dir, const RunConfig& cfg) {
    const json doc = read_json(dir / "session.json");
    SessionState s;
    try {
        s.bundle = load_bundle(dir / doc.at("bundle_dir").get<std::string>());
        s.series.config = cfg.risk_series;
        const auto& series = doc.at("series");
        for (const auto& e : series.at("frame_risks"))
            s.series.frame_risks.emplace_back(e.at(0).get<std::string>(), e.at(1).get<double>());
        s.series.sequence_risk = series.value("sequence_risk", 0.0);
        s.series.triggered = series.value("triggered", false);
        s.series.suspended = series.value("suspended", false);
        s.requests = doc.at("requests").get<std::vector<AnnotationRequest>>();
        for (const auto& p : doc.at("pool")) s.pool.push_back(annotations_from_json(p));
        s.batch_size = doc.value("batch_size", cfg.session.batch_size);
        s.spacing = doc.value("spacing", cfg.session.spacing);
        s.frames_seen = doc.value("frames_seen", std::int64_t{0});
        s.next_request = doc.value("next_request", 1);
        s.skipped_at = doc.value("skipped_at", std::map<std::string, std::int64_t>{});
        for (const auto& f : doc.at("frames")) {
            ImageFrame frame;
            frame.frame_id = f.at("frame_id").get<std::string>();
            frame.sequence_index = f.value("sequence_index", std::int64_t{0});
            frame.source_path = (dir / f.at("path").get<std::string>()).string();
            frame.image = read_rgb_image(frame.source_path);
            s.frames[frame.frame_id] = std::move(frame);
        }
    } catch (const json::exception& e) {
        throw Error(ErrorCode::IoError, "bad session.json in " + dir.string() + ": " + e.what());
    }
    return s;
}

// ---------------------------------------------------------------- session

json to_json(const UpdateJob& job) {
    return {{"job_id", job.job_id},       {"status", job.status},         {"stage", job.stage},
            {"from_version", job.from_version}, {"to_version", job.to_version}, {"error", job.error}};
}

Session::Session(SessionState state, DatasetManifest training, RunConfig cfg)
    : state_(std::move(state)), training_(std::move(training)), cfg_(std::move(cfg)) {
    publish();
    owner_ = std::thread([this] { owner_loop(); });
}

Session::~Session() {
    wait_idle();
    {
        std::lock_guard lock(queue_mutex_);
        stopping_ = true;
    }
    queue_cv_.notify_all();
    if (owner_.joinable()) owner_.join();
    if (update_thread_.joinable()) update_thread_.join();
}

std::shared_ptr<const SessionState> Session::snapshot() const {
    std::lock_guard lock(snapshot_mutex_);
    return snapshot_;
}

void Session::publish() {
    auto snap = std::make_shared<const SessionState>(state_);
    {
        std::lock_guard lock(snapshot_mutex_);
        snapshot_ = std::move(snap);
    }
    if (!cfg_.session.state_dir.empty()) {
        try {
            save_session(state_, cfg_.session.state_dir);
        } catch (const std::exception& e) {
            spdlog::error("session: persisting state failed: {}", e.what());
        }
    }
}

template <typename F>
auto Session::enqueue(F&& fn) -> std::future<decltype(fn(std::declval<SessionState&>()))> {
    using R = decltype(fn(std::declval<SessionState&>()));
    auto task = std::make_shared<std::packaged_task<R()>>(
        [this, f = std::forward<F>(fn)]() mutable -> R {
            // Publish before the future resolves so callers see their own change.
            try {
                R result = f(state_);
                publish();
                return result;
            } catch (...) {
                publish();
                throw;
            }
        });
    auto fut = task->get_future();
    {
        std::lock_guard lock(queue_mutex_);
        queue_.emplace_back([task] { (*task)(); });
    }
    queue_cv_.notify_one();
    return fut;
}

void Session::owner_loop() {
    for (;;) {
        std::function<void()> cmd;
        {
            std::unique_lock lock(queue_mutex_);
            queue_cv_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
            if (queue_.empty()) return;
            cmd = std::move(queue_.front());
            queue_.pop_front();
            busy_ = true;
        }
        cmd();
        {
            std::lock_guard lock(queue_mutex_);
            busy_ = false;
        }
        idle_cv_.notify_all();
    }
}

std::future<SegmentationResult> Session::submit_frame(ImageFrame frame) {
    return enqueue([this, f = std::move(frame)](SessionState& s) { return process_frame(s, f, cfg_); });
}

std::future<std::vector<AnnotationRequest>> Session::open_batch() {
    return enqueue([](SessionState& s) { return open_annotation_batch(s); });
}

std::future<std::vector<AnnotationRequest>> Session::ingest(std::vector<FrameAnnotationSet> submissions) {
    return enqueue([subs = std::move(submissions)](SessionState& s) {
        ingest_annotations(s, subs);
        std::vector<AnnotationRequest> touched;
        for (const auto& sub : subs)
            for (const auto& r : s.requests)
                if (r.frame_id == sub.frame_id) touched.push_back(r);
        return touched;
    });
}

std::future<AnnotationRequest> Session::skip(std::string request_id) {
    return enqueue([id = std::move(request_id)](SessionState& s) {
        skip_request(s, id);
        for (const auto& r : s.requests)
            if (r.request_id == id) return r;
        AnnotationRequest closed;  // the batch closed with this skip
        closed.request_id = id;
        closed.status = RequestStatus::Skipped;
        return closed;
    });
}

void Session::set_job(const UpdateJob& job) {
    std::lock_guard lock(jobs_mutex_);
    jobs_[job.job_id] = job;
}

std::optional<UpdateJob> Session::job(const std::string& job_id) const {
    std::lock_guard lock(jobs_mutex_);
    auto it = jobs_.find(job_id);
    if (it == jobs_.end()) return std::nullopt;
    return it->second;
}

std::future<std::string> Session::start_update() {
    return enqueue([this](SessionState& s) {
        {
            std::lock_guard lock(queue_mutex_);
            if (update_running_) throw Error(ErrorCode::InvalidArgument, "a model update is already running");
        }
        check_update_ready(s);
        UpdateJob job;
        {
            std::lock_guard lock(jobs_mutex_);
            job.job_id = "job-" + std::to_string(next_job_++);
        }
        job.from_version = s.bundle.version;
        job.to_version = s.bundle.version + 1;
        set_job(job);

        // Frozen inputs: the owner keeps serving frames with the current bundle.
        ModelBundle bundle = s.bundle;
        std::vector<FrameAnnotationSet> pool = s.pool;
        DatasetManifest frames = session_frames(s);
        if (update_thread_.joinable()) update_thread_.join();
        {
            std::lock_guard lock(queue_mutex_);
            update_running_ = true;
        }
        update_thread_ = std::thread([this, job, bundle = std::move(bundle), pool = std::move(pool),
                                      frames = std::move(frames)]() mutable {
            job.status = "running";
            job.stage = "fine_tune";
            set_job(job);
            try {
                ModelBundle updated = refit_bundle(bundle, pool, training_, frames, cfg_);
                job.stage = "swap";
                set_job(job);
                enqueue([this, job, b = std::move(updated)](SessionState& st) mutable {
                    apply_update(st, std::move(b));
                    job.status = "done";
                    job.stage = "done";
                    set_job(job);
                    return 0;
                }).wait();
            } catch (const std::exception& e) {
                job.status = "failed";
                job.error = e.what();
                set_job(job);
                spdlog::error("model update {} failed: {}", job.job_id, e.what());
            }
            {
                std::lock_guard lock(queue_mutex_);
                update_running_ = false;
            }
            idle_cv_.notify_all();
        });
        return job.job_id;
    });
}

void Session::wait_idle() {
    std::unique_lock lock(queue_mutex_);
    idle_cv_.wait(lock, [this] { return queue_.empty() && !busy_ && !update_running_; });
}

}  // namespace actseg
