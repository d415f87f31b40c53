#include "actseg/api_server.hpp"

#include <array>
#include <thread>

#include <httplib.h>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <spdlog/spdlog.h>

#include "actseg/error.hpp"

namespace actseg {

using nlohmann::json;

namespace {

std::string base64(const std::vector<unsigned char>& bytes) {
    static constexpr std::array<char, 65> table{
        "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/"};
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    for (std::size_t i = 0; i < bytes.size(); i += 3) {
        const unsigned v = (bytes[i] << 16) | ((i + 1 < bytes.size() ? bytes[i + 1] : 0) << 8) |
                           (i + 2 < bytes.size() ? bytes[i + 2] : 0);
        out += table[(v >> 18) & 63];
        out += table[(v >> 12) & 63];
        out += i + 1 < bytes.size() ? table[(v >> 6) & 63] : '=';
        out += i + 2 < bytes.size() ? table[v & 63] : '=';
    }
    return out;
}

std::vector<unsigned char> encode_png(const cv::Mat& img, bool rgb) {
    cv::Mat out = img;
    if (rgb) cv::cvtColor(img, out, cv::COLOR_RGB2BGR);
    std::vector<unsigned char> buf;
    if (!cv::imencode(".png", out, buf)) throw Error(ErrorCode::IoError, "PNG encoding failed");
    return buf;
}

int http_status(ErrorCode code) {
    switch (code) {
        case ErrorCode::UnknownRequest:
        case ErrorCode::MissingFrame: return 404;
        case ErrorCode::InvalidAnnotation:
        case ErrorCode::EmptyNegativeSet:
        case ErrorCode::EmptyRegion: return 422;
        case ErrorCode::NoTriggeredState:
        case ErrorCode::EmptySupplementalPool:
        case ErrorCode::UnresolvedRequests: return 409;
        case ErrorCode::InvalidArgument:
        case ErrorCode::MalformedManifest: return 400;
        default: return 500;
    }
}

void send_json(httplib::Response& res, const json& body, int status = 200) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& code, const std::string& message) {
    send_json(res, {{"error", code}, {"message", message}}, status);
}

// Runs a handler and turns exceptions into JSON errors.
template <typename F>
void guarded(httplib::Response& res, F&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        send_error(res, http_status(e.code()), std::string(to_string(e.code())), e.what());
    } catch (const json::exception& e) {
        send_error(res, 400, "BadJson", e.what());
    } catch (const std::exception& e) {
        send_error(res, 500, "Internal", e.what());
    }
}

}  // namespace

struct ApiServer::Impl {
    Session& session;
    ApiServerConfig cfg;
    httplib::Server server;
    std::thread thread;
    int port = 0;

    Impl(Session& s, ApiServerConfig c) : session(s), cfg(std::move(c)) { routes(); }

    void routes() {
        server.Get("/api/session", [this](const httplib::Request&, httplib::Response& res) {
            guarded(res, [&] { send_json(res, session_summary(*session.snapshot())); });
        });

        server.Get("/api/queue", [this](const httplib::Request&, httplib::Response& res) {
            guarded(res, [&] {
                const auto snap = session.snapshot();
                json open = json::array();
                for (const auto& r : snap->requests)
                    if (r.status == RequestStatus::Pending) open.push_back(r);
                send_json(res, {{"requests", open}, {"batch", snap->requests}});
            });
        });

        server.Post("/api/queue/open", [this](const httplib::Request&, httplib::Response& res) {
            guarded(res, [&] { send_json(res, {{"requests", session.open_batch().get()}}); });
        });

        server.Get(R"(/api/frames/([^/]+)/image)", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                const auto snap = session.snapshot();
                auto it = snap->frames.find(req.matches[1]);
                if (it == snap->frames.end()) throw Error(ErrorCode::MissingFrame, "unknown frame " + req.matches[1].str());
                const auto png = encode_png(it->second.image, true);
                res.set_content(std::string(png.begin(), png.end()), "image/png");
            });
        });

        server.Get(R"(/api/frames/([^/]+)/risk)", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                const auto snap = session.snapshot();
                auto it = snap->results.find(req.matches[1]);
                if (it == snap->results.end())
                    throw Error(ErrorCode::MissingFrame, "no segmentation for frame " + req.matches[1].str());
                const cv::Mat& rm = it->second.risk_map;
                std::vector<float> values;
                values.reserve(rm.total());
                for (int y = 0; y < rm.rows; ++y) values.insert(values.end(), rm.ptr<float>(y), rm.ptr<float>(y) + rm.cols);
                send_json(res, {{"frame_id", it->first},
                                {"frame_risk", it->second.frame_risk},
                                {"height", rm.rows},
                                {"width", rm.cols},
                                {"risk_map", values}});
            });
        });

        server.Get(R"(/api/frames/([^/]+)/segmentation)", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                const auto snap = session.snapshot();
                auto it = snap->results.find(req.matches[1]);
                if (it == snap->results.end())
                    throw Error(ErrorCode::MissingFrame, "no segmentation for frame " + req.matches[1].str());
                const auto png = encode_png(it->second.label_map, false);
                if (req.get_param_value("format") == "png") {
                    res.set_content(std::string(png.begin(), png.end()), "image/png");
                    return;
                }
                json body = segmentation_sidecar(it->second, snap->bundle.categories->m(), snap->bundle.risk_bound);
                body["label_map_png"] = base64(png);
                send_json(res, body);
            });
        });

        server.Post("/api/annotations", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                const json body = json::parse(req.body);
                std::vector<FrameAnnotationSet> subs;
                if (body.is_array())
                    for (const auto& e : body) subs.push_back(annotations_from_json(e));
                else
                    subs.push_back(annotations_from_json(body));
                send_json(res, {{"requests", session.ingest(std::move(subs)).get()}});
            });
        });

        server.Post(R"(/api/requests/([^/]+)/skip)", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] { send_json(res, session.skip(req.matches[1]).get()); });
        });

        server.Post("/api/model/update", [this](const httplib::Request&, httplib::Response& res) {
            guarded(res, [&] {
                const std::string id = session.start_update().get();
                send_json(res, to_json(*session.job(id)), 202);
            });
        });

        server.Get(R"(/api/model/update/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                const auto job = session.job(req.matches[1]);
                if (!job) {
                    send_error(res, 404, "UnknownJob", "no update job " + req.matches[1].str());
                    return;
                }
                send_json(res, to_json(*job));
            });
        });

        server.Get("/api/risk-series", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                const auto snap = session.snapshot();
                const auto& all = snap->series.frame_risks;
                std::size_t n = all.size();
                if (req.has_param("window")) {
                    const long w = std::stol(req.get_param_value("window"));
                    if (w < 0) throw Error(ErrorCode::InvalidArgument, "window must be >= 0");
                    n = std::min(n, static_cast<std::size_t>(w));
                }
                json series = json::array();
                for (std::size_t i = all.size() - n; i < all.size(); ++i)
                    series.push_back({{"frame_id", all[i].first}, {"flr", all[i].second}});
                json body = risk_series_summary(snap->series);
                body["series"] = series;
                send_json(res, body);
            });
        });

        if (!cfg.static_dir.empty() && !server.set_mount_point("/", cfg.static_dir.string()))
            spdlog::warn("api: static directory {} not found", cfg.static_dir.string());
    }
};

ApiServer::ApiServer(Session& session, ApiServerConfig cfg) : impl_(std::make_unique<Impl>(session, std::move(cfg))) {}

ApiServer::~ApiServer() { stop(); }

int ApiServer::start() {
    if (impl_->cfg.port == 0)
        impl_->port = impl_->server.bind_to_any_port(impl_->cfg.host);
    else
        impl_->port = impl_->server.bind_to_port(impl_->cfg.host, impl_->cfg.port) ? impl_->cfg.port : -1;
    if (impl_->port < 0) throw Error(ErrorCode::IoError, "cannot bind " + impl_->cfg.host);
    impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
    spdlog::info("api: listening on {}:{}", impl_->cfg.host, impl_->port);
    return impl_->port;
}

void ApiServer::run() {
    if (!impl_->server.listen(impl_->cfg.host, impl_->cfg.port))
        throw Error(ErrorCode::IoError, "cannot listen on " + impl_->cfg.host + ":" + std::to_string(impl_->cfg.port));
}

void ApiServer::stop() {
    if (!impl_) return;
    impl_->server.stop();
    if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace actseg
