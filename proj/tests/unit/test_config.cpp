#include <fstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "actseg/config.hpp"
#include "test_support.hpp"

using namespace actseg;
using namespace actseg::testing;
using nlohmann::json;

namespace {

void write(const std::filesystem::path& p, const std::string& text) {
    std::ofstream(p) << text;
}

}  // namespace

TEST(Config, DefaultsAreValid) {
    RunConfig cfg;
    EXPECT_NO_THROW(cfg.validate());
    EXPECT_EQ(cfg.session.batch_size, 20);
    EXPECT_EQ(cfg.session.spacing, 5);
    EXPECT_EQ(cfg.risk_series.window, 100);
    EXPECT_EQ(cfg.risk_bound.confidence, 0.95);
}

TEST(Config, PartialDocumentKeepsDefaults) {
    TempDir dir;
    write(dir / "c.json", R"({"risk_series": {"epsilon": 0.2}, "session": {"batch_size": 7}})");
    const auto cfg = load_run_config(dir / "c.json");
    EXPECT_EQ(cfg.risk_series.epsilon, 0.2);
    EXPECT_EQ(cfg.risk_series.window, 100);
    EXPECT_EQ(cfg.session.batch_size, 7);
    EXPECT_EQ(cfg.session.spacing, 5);
    EXPECT_EQ(cfg.sampler.sample_size, RunConfig{}.sampler.sample_size);
}

TEST(Config, SeedDerivesComponentSeeds) {
    TempDir dir;
    write(dir / "c.json", R"({"seed": 40})");
    const auto cfg = load_run_config(dir / "c.json");
    EXPECT_EQ(cfg.seed, 40u);
    EXPECT_EQ(cfg.sampler.rng_seed, 40u);
    EXPECT_EQ(cfg.train.rng_seed, 41u);
    EXPECT_EQ(cfg.em.seed, 42u);
}

TEST(Config, RoundTrip) {
    TempDir dir;
    RunConfig cfg;
    cfg.apply_seed(9);
    cfg.train.arch.conv_channels = {8, 16};
    cfg.train.arch.embedding_dim = 12;
    cfg.sliding_window.weighting = VoteWeighting::Uniform;
    cfg.em.weighted_classification = true;
    cfg.session.state_dir = "/tmp/somewhere";
    save_run_config(cfg, dir / "c.json");
    const auto back = load_run_config(dir / "c.json");
    EXPECT_EQ(json(back), json(cfg));
}

TEST(Config, InvalidValuesAreRejected) {
    TempDir dir;
    const std::vector<std::string> bad{
        R"({"risk_bound": {"confidence": 1.0}})",
        R"({"risk_series": {"window": 0}})",
        R"({"session": {"batch_size": 0}})",
        R"({"session": {"spacing": -1}})",
        R"({"sliding_window": {"stride": 100, "patch_size": 64}})",
        R"({"sampler": {"bg_scale": 1.0}})",
        R"({"train": {"temperature": 0}})",
        R"({"em": {"max_clusters": 1}})",
        R"({"sliding_window": {"weighting": "cubic"}})",
        R"({"session": {"batch_size": "many"}})",
        R"({not json)",
    };
    for (std::size_t i = 0; i < bad.size(); ++i) {
        const auto p = dir / ("bad" + std::to_string(i) + ".json");
        write(p, bad[i]);
        EXPECT_ACTSEG_ERROR(load_run_config(p), ErrorCode::InvalidArgument) << bad[i];
    }
}

TEST(Config, MissingFile) {
    EXPECT_ACTSEG_ERROR(load_run_config("/nonexistent/actseg.json"), ErrorCode::IoError);
}
