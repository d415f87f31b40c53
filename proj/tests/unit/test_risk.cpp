#include <algorithm>
#include <fstream>
#include <limits>
#include <random>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "actseg/risk.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace actseg;
using namespace actseg::testing;

namespace {

std::vector<PatchPrediction> patches(int total, int unknown) {
    std::vector<PatchPrediction> out(static_cast<std::size_t>(total));
    for (int i = 0; i < total; ++i) out[static_cast<std::size_t>(i)].label = i < unknown ? kUnknownLabel : 1 + i % 3;
    return out;
}

RiskSeries series(int window, double epsilon, double threshold) {
    RiskSeries s;
    s.config.window = window;
    s.config.epsilon = epsilon;
    s.config.trigger_threshold = threshold;
    return s;
}

}  // namespace

TEST(RiskBound, HundredEvenlySpaced) {
    std::vector<double> risks;
    for (int i = 1; i <= 100; ++i) risks.push_back(i / 100.0);
    const double b = estimate_risk_bound(risks, 0.95);
    EXPECT_DOUBLE_EQ(b, 0.95);
    EXPECT_EQ(std::count_if(risks.begin(), risks.end(), [b](double r) { return r > b; }), 5);
}

TEST(RiskBound, HalfOfFour) {
    const std::vector<double> risks{3, 1, 4, 2};
    EXPECT_EQ(estimate_risk_bound(risks, 0.5), 2.0);
    EXPECT_EQ(oracle::risk_bound(risks, 0.5), 2.0);
}

TEST(RiskBound, ConstantRisks) {
    const std::vector<double> risks(17, -4.25);
    for (double d : {0.01, 0.5, 0.95, 0.999}) EXPECT_EQ(estimate_risk_bound(risks, d), -4.25);
}

TEST(RiskBound, Errors) {
    EXPECT_ACTSEG_ERROR(estimate_risk_bound(std::vector<double>{}, 0.9), ErrorCode::EmptyRisks);
    const std::vector<double> one{1.0};
    EXPECT_ACTSEG_ERROR(estimate_risk_bound(one, 1.0), ErrorCode::InvalidArgument);
    EXPECT_ACTSEG_ERROR(estimate_risk_bound(one, 0.0), ErrorCode::InvalidArgument);
}

TEST(RiskBound, MinimalAndWithinBudgetOnRandomSets) {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 100; ++trial) {
        const int n = std::uniform_int_distribution<int>(1, 300)(rng);
        std::vector<double> risks;
        std::uniform_real_distribution<double> u(-50, 1);
        std::uniform_int_distribution<int> coarse(0, 9);
        for (int i = 0; i < n; ++i) risks.push_back(trial % 3 == 0 ? coarse(rng) * 0.1 : u(rng));
        const double delta = std::uniform_real_distribution<double>(0.01, 0.99)(rng);
        const double b = estimate_risk_bound(risks, delta);
        EXPECT_EQ(b, oracle::risk_bound(risks, delta));

        const auto above = static_cast<std::size_t>(std::count_if(risks.begin(), risks.end(), [b](double r) { return r > b; }));
        EXPECT_TRUE(oracle::within_budget(above, risks.size(), delta));
        // The next smaller observed value breaks the budget.
        double below = -std::numeric_limits<double>::infinity();
        for (double r : risks)
            if (r < b) below = std::max(below, r);
        if (below > -std::numeric_limits<double>::infinity()) {
            const auto above2 = static_cast<std::size_t>(
                std::count_if(risks.begin(), risks.end(), [below](double r) { return r > below; }));
            EXPECT_FALSE(oracle::within_budget(above2, risks.size(), delta));
        }
    }
}

TEST(RiskBound, MonotoneInConfidence) {
    std::mt19937_64 rng(2);
    std::vector<double> risks;
    for (int i = 0; i < 200; ++i) risks.push_back(std::normal_distribution<double>(0, 3)(rng));
    double previous = -std::numeric_limits<double>::infinity();
    for (double d = 0.01; d < 1.0; d += 0.01) {
        const double b = estimate_risk_bound(risks, d);
        EXPECT_GE(b, previous);
        previous = b;
    }
}

TEST(Histogram, CountsEveryValue) {
    const std::vector<double> risks{0, 0.1, 0.2, 0.9, 1.0};
    const auto h = risk_histogram(risks, 4);
    std::size_t total = 0;
    for (auto c : h.counts) total += c;
    EXPECT_EQ(total, risks.size());
    EXPECT_EQ(h.lo, 0.0);
    EXPECT_EQ(h.hi, 1.0);
}

TEST(FrameRisk, Counts) {
    EXPECT_DOUBLE_EQ(frame_risk(patches(10, 3)), 0.3);
    EXPECT_DOUBLE_EQ(frame_risk(patches(10, 0)), 0.0);
    EXPECT_DOUBLE_EQ(frame_risk(patches(10, 10)), 1.0);
    EXPECT_ACTSEG_ERROR(frame_risk(std::vector<PatchPrediction>{}), ErrorCode::EmptyFrame);
}

TEST(FrameRisk, IndependentOfKnownLabels) {
    auto p = patches(12, 5);
    const double before = frame_risk(p);
    for (auto& x : p)
        if (!x.unknown()) x.label = 7;
    EXPECT_EQ(frame_risk(p), before);
}

TEST(SequenceRisk, Examples) {
    const std::vector<double> f{0.1, 0.5, 0.9};
    EXPECT_NEAR(sequence_risk(f, 0.4), 2.0 / 3.0, 1e-15);
    EXPECT_EQ(sequence_risk(f, 1.0), 0.0);
    const std::vector<double> eq{0.4, 0.4, 0.4};
    EXPECT_EQ(sequence_risk(eq, 0.4), 0.0);
    EXPECT_ACTSEG_ERROR(sequence_risk(std::vector<double>{}, 0.4), ErrorCode::EmptySequence);
}

TEST(Trigger, NeverFiresOnZeroRisk) {
    auto s = series(10, 0.5, 0.5);
    for (int i = 0; i < 50; ++i) s = update_trigger(s, "f" + std::to_string(i), 0.0);
    EXPECT_FALSE(s.triggered);
    EXPECT_EQ(s.sequence_risk, 0.0);
}

TEST(Trigger, FiresOnWindowCount) {
    auto s = series(4, 0.4, 0.5);
    for (double r : {0.9, 0.9, 0.9, 0.1}) s = update_trigger(s, "f", r);
    EXPECT_DOUBLE_EQ(s.sequence_risk, 0.75);
    EXPECT_TRUE(s.triggered);
}

TEST(Trigger, LatchesUntilAcknowledged) {
    auto s = series(4, 0.4, 0.5);
    for (double r : {0.9, 0.9, 0.9, 0.1}) s = update_trigger(s, "f", r);
    // Risk falls away, but the latch holds.
    for (int i = 0; i < 4; ++i) s = update_trigger(s, "g", 0.0);
    EXPECT_TRUE(s.triggered);
    s = acknowledge(s);
    EXPECT_FALSE(s.triggered);
    s = update_trigger(s, "h", 0.0);
    EXPECT_FALSE(s.triggered);
    for (int i = 0; i < 3; ++i) s = update_trigger(s, "k", 0.95);
    EXPECT_TRUE(s.triggered);
}

TEST(Trigger, AcknowledgedHighWindowStaysQuietUntilRecomputed) {
    auto s = series(4, 0.4, 0.5);
    for (int i = 0; i < 4; ++i) s = update_trigger(s, "f", 0.9);
    s = acknowledge(s);
    EXPECT_FALSE(s.triggered);
    s = update_trigger(s, "g", 0.9);  // recomputed above threshold
    EXPECT_TRUE(s.triggered);
}

TEST(Trigger, SuspendedSeriesDoesNotLatch) {
    auto s = series(2, 0.4, 0.5);
    s.suspended = true;
    for (int i = 0; i < 5; ++i) s = update_trigger(s, "f", 0.9);
    EXPECT_FALSE(s.triggered);
}

TEST(Trigger, TriggeredMatchesThresholdWithoutLatchEffects) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0, 1);
    for (int trial = 0; trial < 200; ++trial) {
        auto s = series(5, 0.5, 0.5);
        s.config.require_full_window = false;
        for (int i = 0; i < 5; ++i) {
            s = update_trigger(acknowledge(s), "f", u(rng));
            EXPECT_EQ(s.triggered, s.sequence_risk > s.config.trigger_threshold);
        }
        EXPECT_GE(s.sequence_risk, 0.0);
        EXPECT_LE(s.sequence_risk, 1.0);
    }
}

TEST(Trigger, LowFrameNeverRaisesSequenceRisk) {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0, 1);
    for (int trial = 0; trial < 200; ++trial) {
        auto s = series(6, 0.5, 0.5);
        for (int i = 0; i < 6; ++i) s = update_trigger(s, "f", u(rng));
        const double before = s.sequence_risk;
        s = update_trigger(s, "low", 0.5 * u(rng));
        EXPECT_LE(s.sequence_risk, before);
    }
}

TEST(Trigger, ExportWritesLinesAndSummary) {
    TempDir dir;
    auto s = series(3, 0.5, 0.5);
    s = update_trigger(s, "a", 0.1);
    s = update_trigger(s, "b", 0.7);
    export_risk_series(s, dir / "series.jsonl");
    std::ifstream in(dir / "series.jsonl");
    std::string line;
    std::vector<nlohmann::json> rows;
    while (std::getline(in, line)) rows.push_back(nlohmann::json::parse(line));
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_EQ(rows[1]["frame_id"], "b");
    EXPECT_DOUBLE_EQ(rows[1]["flr"].get<double>(), 0.7);
    const auto summary = nlohmann::json::parse(std::ifstream(dir / "series.summary.json"));
    EXPECT_DOUBLE_EQ(summary["phi_s"].get<double>(), 0.5);
    EXPECT_EQ(summary["window"], 3);
    EXPECT_EQ(summary["triggered"], false);
}
