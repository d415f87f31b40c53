#include <thread>

#include <gtest/gtest.h>

#include "actseg/active_loop.hpp"
#include "tiny_setup.hpp"

using namespace actseg;
using namespace actseg::testing;

namespace {

std::unique_ptr<Session> reject_all_session(RunConfig cfg = tiny_config()) {
    return std::make_unique<Session>(make_session(fixed_bundle(cfg, kRejectAll), cfg), tiny_manifest(), cfg);
}

void feed(Session& s, const std::vector<ImageFrame>& frames) {
    for (const auto& f : frames) s.submit_frame(f).get();
}

}  // namespace

TEST(SessionThread, FramesUpdateSnapshot) {
    auto s = reject_all_session();
    const auto before = s->snapshot();
    feed(*s, plain_frames("f", 4));
    const auto after = s->snapshot();
    EXPECT_EQ(before->frames_seen, 0);  // old snapshots are immutable
    EXPECT_EQ(after->frames_seen, 4);
    EXPECT_TRUE(after->series.triggered);
}

TEST(SessionThread, ErrorsPropagateThroughFutures) {
    auto s = reject_all_session();
    EXPECT_ACTSEG_ERROR(s->open_batch().get(), ErrorCode::NoTriggeredState);
    EXPECT_ACTSEG_ERROR(s->skip("req-9").get(), ErrorCode::UnknownRequest);
    EXPECT_ACTSEG_ERROR(s->start_update().get(), ErrorCode::EmptySupplementalPool);
    // The owner thread survives errors.
    EXPECT_EQ(s->submit_frame(plain_frames("f", 1)[0]).get().frame_risk, 1.0);
}

TEST(SessionThread, ConcurrentSubmittersAreSerialized) {
    auto cfg = tiny_config();
    cfg.risk_series.window = 100;
    auto s = reject_all_session(cfg);
    std::vector<std::thread> threads;
    for (int t = 0; t < 4; ++t)
        threads.emplace_back([&s, t] { feed(*s, plain_frames("t" + std::to_string(t) + "-", 5)); });
    for (auto& th : threads) th.join();
    s->wait_idle();
    const auto snap = s->snapshot();
    EXPECT_EQ(snap->frames_seen, 20);
    EXPECT_EQ(snap->series.frame_risks.size(), 20u);
}

TEST(SessionThread, SkipClosesBatchWithPlaceholder) {
    auto s = reject_all_session();
    feed(*s, plain_frames("f", 4));
    const auto reqs = s->open_batch().get();
    ASSERT_EQ(reqs.size(), 2u);
    EXPECT_EQ(s->skip(reqs[0].request_id).get().status, RequestStatus::Skipped);
    const auto last = s->skip(reqs[1].request_id).get();
    EXPECT_EQ(last.request_id, reqs[1].request_id);
    EXPECT_EQ(last.status, RequestStatus::Skipped);
    EXPECT_FALSE(s->snapshot()->batch_open());
}

TEST(SessionThread, UpdateRunsInBackgroundAndSwaps) {
    auto s = reject_all_session();
    feed(*s, plain_frames("f", 4));
    const auto reqs = s->open_batch().get();
    std::vector<FrameAnnotationSet> subs;
    for (const auto& r : reqs) subs.push_back(two_anchor_set(r.frame_id));
    const auto touched = s->ingest(subs).get();
    ASSERT_EQ(touched.size(), reqs.size());
    for (const auto& r : touched) EXPECT_EQ(r.status, RequestStatus::Annotated);

    const std::string job_id = s->start_update().get();
    EXPECT_ACTSEG_ERROR(s->start_update().get(), ErrorCode::InvalidArgument);  // one at a time
    // Frames keep flowing against the old bundle while the update runs.
    s->submit_frame(plain_frames("g", 1, 10)[0]).get();
    s->wait_idle();

    const auto job = s->job(job_id);
    ASSERT_TRUE(job.has_value());
    EXPECT_EQ(job->status, "done");
    EXPECT_EQ(job->from_version, 0);
    EXPECT_EQ(job->to_version, 1);
    EXPECT_FALSE(s->job("job-404").has_value());

    const auto snap = s->snapshot();
    EXPECT_EQ(snap->bundle.version, 1);
    EXPECT_FALSE(snap->batch_open());
    EXPECT_TRUE(snap->series.frame_risks.empty());
    EXPECT_EQ(snap->pool.size(), reqs.size());
    EXPECT_EQ(to_json(*job)["status"], "done");
}

TEST(SessionThread, PersistsStateWhenConfigured) {
    TempDir dir;
    auto cfg = tiny_config();
    cfg.session.state_dir = dir / "state";
    {
        auto s = reject_all_session(cfg);
        feed(*s, plain_frames("f", 3));
    }
    const auto back = load_session(dir / "state", cfg);
    EXPECT_EQ(back.frames_seen, 3);
    EXPECT_EQ(back.series.frame_risks.size(), 3u);
}
