#include "actseg/config.hpp"

#include <fstream>

#include "actseg/error.hpp"

namespace actseg {

using nlohmann::json;

void SessionConfig::validate() const {
    if (batch_size < 1) throw Error(ErrorCode::InvalidArgument, "batch_size must be >= 1");
    if (spacing < 0) throw Error(ErrorCode::InvalidArgument, "spacing must be >= 0");
    if (patches_per_anchor < 0) throw Error(ErrorCode::InvalidArgument, "patches_per_anchor must be >= 0");
}

void to_json(json& j, const SessionConfig& c) {
    j = {{"batch_size", c.batch_size},
         {"spacing", c.spacing},
         {"patches_per_anchor", c.patches_per_anchor},
         {"state_dir", c.state_dir.string()}};
}

void from_json(const json& j, SessionConfig& c) {
    c.batch_size = j.value("batch_size", c.batch_size);
    c.spacing = j.value("spacing", c.spacing);
    c.patches_per_anchor = j.value("patches_per_anchor", c.patches_per_anchor);
    c.state_dir = j.value("state_dir", c.state_dir.string());
}

void RunConfig::validate() const {
    sampler.validate();
    train.validate();
    sliding_window.validate();
    risk_bound.validate();
    risk_series.validate();
    em.validate();
    session.validate();
}

void RunConfig::apply_seed(std::uint64_t s) {
    seed = s;
    sampler.rng_seed = s;
    train.rng_seed = s + 1;
    em.seed = s + 2;
}

void to_json(json& j, const RunConfig& c) {
    j = {{"seed", c.seed},
         {"sampler", c.sampler},
         {"train", c.train},
         {"sliding_window", c.sliding_window},
         {"risk_bound", c.risk_bound},
         {"risk_series", c.risk_series},
         {"em", c.em},
         {"session", c.session}};
}

void from_json(const json& j, RunConfig& c) {
    auto section = [&j](const char* key, auto& target) {
        if (j.contains(key)) target = j.at(key).get<std::decay_t<decltype(target)>>();
    };
    section("sampler", c.sampler);
    section("train", c.train);
    section("sliding_window", c.sliding_window);
    section("risk_bound", c.risk_bound);
    section("risk_series", c.risk_series);
    section("em", c.em);
    section("session", c.session);
    if (j.contains("seed")) c.apply_seed(j.at("seed").get<std::uint64_t>());
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot open config " + path.string());
    try {
        RunConfig cfg = json::parse(in).get<RunConfig>();
        cfg.validate();
        return cfg;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::InvalidArgument, "bad config " + path.string() + ": " + e.what());
    }
}

void save_run_config(const RunConfig& config, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::IoError, "cannot write config " + path.string());
    out << json(config).dump(2) << '\n';
}

}  // namespace actseg
