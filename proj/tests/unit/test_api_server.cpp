#include <chrono>
#include <thread>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>
#include <opencv2/imgcodecs.hpp>

#include "actseg/api_server.hpp"
#include "tiny_setup.hpp"

// After Eigen: resolv.h, pulled in by httplib, defines a _res macro.
#include <httplib.h>

using namespace actseg;
using namespace actseg::testing;
using nlohmann::json;

namespace {

class ApiTest : public ::testing::Test {
protected:
    void SetUp() override {
        cfg_ = tiny_config();
        session_ = std::make_unique<Session>(make_session(fixed_bundle(cfg_, kRejectAll), cfg_), tiny_manifest(), cfg_);
        server_ = std::make_unique<ApiServer>(*session_, ApiServerConfig{"127.0.0.1", 0, {}});
        const int port = server_->start();
        client_ = std::make_unique<httplib::Client>("127.0.0.1", port);
        client_->set_read_timeout(120, 0);
    }

    void TearDown() override {
        server_->stop();
        server_.reset();
        session_.reset();
    }

    void feed(int count, const std::string& prefix = "f") {
        for (const auto& f : plain_frames(prefix, count)) session_->submit_frame(f).get();
    }

    static json body(const httplib::Result& r) { return json::parse(r->body); }

    static json annotation(const std::string& frame_id) {
        return {{"frame_id", frame_id},
                {"anchors",
                 {{{"cx", 16}, {"cy", 16}, {"w", 12}, {"h", 12}, {"label", 1}},
                  {{"cx", 48}, {"cy", 48}, {"w", 12}, {"h", 12}, {"label", 2}}}}};
    }

    RunConfig cfg_;
    std::unique_ptr<Session> session_;
    std::unique_ptr<ApiServer> server_;
    std::unique_ptr<httplib::Client> client_;
};

}  // namespace

TEST_F(ApiTest, SessionSummary) {
    feed(2);
    const auto r = client_->Get("/api/session");
    ASSERT_TRUE(r);
    EXPECT_EQ(r->status, 200);
    const auto j = body(r);
    EXPECT_EQ(j["frames_seen"], 2);
    EXPECT_EQ(j["bundle_version"], 0);
    EXPECT_EQ(j["triggered"], false);
}

TEST_F(ApiTest, OpenQueueBeforeTriggerConflicts) {
    const auto r = client_->Post("/api/queue/open", "", "application/json");
    ASSERT_TRUE(r);
    EXPECT_EQ(r->status, 409);
    EXPECT_EQ(body(r)["error"], "NoTriggeredState");
}

TEST_F(ApiTest, QueueLifecycle) {
    feed(4);
    auto r = client_->Post("/api/queue/open", "", "application/json");
    ASSERT_TRUE(r);
    ASSERT_EQ(r->status, 200);
    const auto opened = body(r)["requests"];
    ASSERT_EQ(opened.size(), 2u);

    r = client_->Get("/api/queue");
    ASSERT_TRUE(r);
    EXPECT_EQ(body(r)["requests"].size(), 2u);

    // Skip one, annotate the other.
    const std::string skip_id = opened[1]["request_id"];
    r = client_->Post("/api/requests/" + skip_id + "/skip", "", "application/json");
    ASSERT_TRUE(r);
    EXPECT_EQ(r->status, 200);
    EXPECT_EQ(body(r)["status"], "skipped");

    r = client_->Post("/api/annotations", annotation(opened[0]["frame_id"]).dump(), "application/json");
    ASSERT_TRUE(r);
    EXPECT_EQ(r->status, 200);
    EXPECT_EQ(body(r)["requests"][0]["status"], "annotated");

    r = client_->Get("/api/queue");
    EXPECT_EQ(body(r)["requests"].size(), 0u);
    EXPECT_EQ(body(r)["batch"].size(), 2u);
}

TEST_F(ApiTest, AnnotationErrors) {
    feed(4);
    client_->Post("/api/queue/open", "", "application/json");

    auto r = client_->Post("/api/annotations", "{broken", "application/json");
    ASSERT_TRUE(r);
    EXPECT_EQ(r->status, 400);

    r = client_->Post("/api/annotations", annotation("f3").dump(), "application/json");
    EXPECT_EQ(r->status, 404);
    EXPECT_EQ(body(r)["error"], "UnknownRequest");

    json single = annotation("f0");
    single["anchors"][1]["label"] = 1;
    r = client_->Post("/api/annotations", single.dump(), "application/json");
    EXPECT_EQ(r->status, 422);
    EXPECT_EQ(body(r)["error"], "InvalidAnnotation");

    json missing = annotation("f0");
    missing["anchors"][0].erase("cx");
    r = client_->Post("/api/annotations", missing.dump(), "application/json");
    EXPECT_EQ(r->status, 400);

    r = client_->Post("/api/requests/req-99/skip", "", "application/json");
    EXPECT_EQ(r->status, 404);
}

TEST_F(ApiTest, UpdatePreconditionsAndJob) {
    auto r = client_->Post("/api/model/update", "", "application/json");
    ASSERT_TRUE(r);
    EXPECT_EQ(r->status, 409);
    EXPECT_EQ(body(r)["error"], "EmptySupplementalPool");

    feed(4);
    const auto opened = body(client_->Post("/api/queue/open", "", "application/json"))["requests"];
    client_->Post("/api/annotations", annotation(opened[0]["frame_id"]).dump(), "application/json");
    r = client_->Post("/api/model/update", "", "application/json");
    EXPECT_EQ(r->status, 409);
    EXPECT_EQ(body(r)["error"], "UnresolvedRequests");

    json both = json::array({annotation(opened[0]["frame_id"]), annotation(opened[1]["frame_id"])});
    EXPECT_EQ(client_->Post("/api/annotations", both.dump(), "application/json")->status, 200);
    r = client_->Post("/api/model/update", "", "application/json");
    ASSERT_TRUE(r);
    ASSERT_EQ(r->status, 202);
    const std::string job_id = body(r)["job_id"];
    EXPECT_EQ(body(r)["to_version"], 1);

    session_->wait_idle();
    r = client_->Get("/api/model/update/" + job_id);
    ASSERT_TRUE(r);
    EXPECT_EQ(r->status, 200);
    EXPECT_EQ(body(r)["status"], "done");
    EXPECT_EQ(body(client_->Get("/api/session"))["bundle_version"], 1);

    EXPECT_EQ(client_->Get("/api/model/update/job-404")->status, 404);
}

TEST_F(ApiTest, FrameImageRiskAndSegmentation) {
    feed(1);
    auto r = client_->Get("/api/frames/f0/image");
    ASSERT_TRUE(r);
    EXPECT_EQ(r->status, 200);
    EXPECT_EQ(r->get_header_value("Content-Type"), "image/png");
    const std::vector<unsigned char> bytes(r->body.begin(), r->body.end());
    const cv::Mat img = cv::imdecode(bytes, cv::IMREAD_COLOR);
    EXPECT_EQ(img.rows, 64);
    EXPECT_EQ(img.cols, 64);

    r = client_->Get("/api/frames/f0/risk");
    ASSERT_TRUE(r);
    EXPECT_EQ(r->status, 200);
    const auto risk = body(r);
    EXPECT_EQ(risk["frame_risk"], 1.0);
    EXPECT_EQ(risk["risk_map"].size(), 64u * 64u);

    r = client_->Get("/api/frames/f0/segmentation");
    ASSERT_TRUE(r);
    EXPECT_EQ(r->status, 200);
    EXPECT_TRUE(body(r).contains("label_map_png"));

    r = client_->Get("/api/frames/f0/segmentation?format=png");
    EXPECT_EQ(r->get_header_value("Content-Type"), "image/png");

    EXPECT_EQ(client_->Get("/api/frames/nope/image")->status, 404);
    EXPECT_EQ(client_->Get("/api/frames/nope/risk")->status, 404);
    EXPECT_EQ(client_->Get("/api/frames/nope/segmentation")->status, 404);
}

TEST_F(ApiTest, RiskSeriesWindow) {
    feed(3);
    auto r = client_->Get("/api/risk-series");
    ASSERT_TRUE(r);
    EXPECT_EQ(body(r)["series"].size(), 3u);
    EXPECT_EQ(body(r)["frames"], 3);
    r = client_->Get("/api/risk-series?window=2");
    const auto j = body(r);
    ASSERT_EQ(j["series"].size(), 2u);
    EXPECT_EQ(j["series"][1]["frame_id"], "f2");
    EXPECT_EQ(client_->Get("/api/risk-series?window=-1")->status, 400);
}
