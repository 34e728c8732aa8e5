#include <gtest/gtest.h>

#include <fstream>

#include "aerodiff/config.hpp"
#include "aerodiff/error.hpp"
#include "temp_dir.hpp"

using namespace aerodiff;
using nlohmann::json;

namespace {

std::string config_error(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Config) << e.what();
        return e.what();
    }
    ADD_FAILURE() << "no error raised";
    return "";
}

RunConfig with(const std::vector<std::string>& overrides) { return load_run_config({}, overrides).config; }

}  // namespace

TEST(Config, DefaultsRoundTrip) {
    const json tree = default_config_tree();
    EXPECT_EQ(to_tree(run_config_from_tree(tree)), tree);
    const RunConfig c = with({});
    EXPECT_EQ(c.schedule.num_steps, 1000);
    EXPECT_EQ(c.sampler.kind, "ddim");
    EXPECT_EQ(c.sampler.stride, 20);
    EXPECT_EQ(c.evaluation.ensemble_size, 20u);
    EXPECT_DOUBLE_EQ(c.sample.reynolds, 7.5e6);
}

TEST(Config, UnknownKeysNameTheirPath) {
    json tree = default_config_tree();
    EXPECT_NE(config_error([&] { merge_config(tree, json{{"training", {{"bogus", 1}}}}); }).find("training.bogus"),
              std::string::npos);
    EXPECT_NE(config_error([&] { with({"evaluation.sub_set=test"}); }).find("evaluation.sub_set"), std::string::npos);
    EXPECT_NE(config_error([&] { with({"nothere=1"}); }).find("nothere"), std::string::npos);
}

TEST(Config, TypeMismatchesAreRejected) {
    EXPECT_NE(config_error([&] { with({"training.iterations=abc"}); }).find("training.iterations"), std::string::npos);
    EXPECT_NE(config_error([&] { with({"training.iterations=1.5"}); }).find("training.iterations"), std::string::npos);
    EXPECT_NE(config_error([&] { with({"training.ema=3"}); }).find("training.ema"), std::string::npos);
    EXPECT_NE(config_error([&] { with({"seed=-4"}); }).find("seed"), std::string::npos);
    config_error([&] { with({"training"}); });
}

TEST(Config, OverrideTyping) {
    const RunConfig c = with({"training.learning_rate=1", "sampler.kind=ddpm_full", "data.root=/tmp/some where",
                              "model.attn_levels=[1]", "evaluation.cases=[0,2]", "seed=9"});
    EXPECT_DOUBLE_EQ(c.training.adam.learning_rate, 1.0);
    EXPECT_EQ(c.sampler.kind, "ddpm_full");
    EXPECT_EQ(c.data_root, "/tmp/some where");
    EXPECT_EQ(c.model.attn_levels, std::vector<std::size_t>{1});
    EXPECT_EQ(c.evaluation.cases, (std::vector<std::uint32_t>{0, 2}));
    EXPECT_EQ(c.seed, 9u);
    EXPECT_EQ(c.training.seed, 9u);
    // A string slot keeps text that happens to parse as a number.
    EXPECT_EQ(with({"checkpoint=123"}).checkpoint, "123");
}

TEST(Config, RepeatedOverrides) {
    EXPECT_EQ(with({"seed=3", "seed=3"}).seed, 3u);
    const std::string msg = config_error([&] { with({"seed=3", "training.iterations=4", "seed=5"}); });
    EXPECT_NE(msg.find("seed"), std::string::npos) << msg;
    EXPECT_NE(msg.find("conflicting"), std::string::npos) << msg;
}

TEST(Config, ValidationRunsAcrossSections) {
    EXPECT_NE(config_error([&] { with({"evaluation.ensemble_size=1"}); }).find("ensemble_size"), std::string::npos);
    EXPECT_NE(config_error([&] { with({"sampler.kind=euler"}); }).find("sampler"), std::string::npos);
    EXPECT_NE(config_error([&] { with({"sampler.stride=0"}); }).find("sampler"), std::string::npos);
    EXPECT_NE(config_error([&] { with({"schedule.beta_end=2"}); }).find("schedule"), std::string::npos);
    EXPECT_NE(config_error([&] { with({"training.batch_size=0"}); }).find("batch_size"), std::string::npos);
    EXPECT_NE(config_error([&] { with({"evaluation.subset=holdout"}); }).find("evaluation"), std::string::npos);
    EXPECT_NE(config_error([&] { with({"data.synthetic.cases=12"}); }).find("data.synthetic"), std::string::npos);
}

TEST(Config, FileThenOverrides) {
    TempDir dir("config_file");
    {
        std::ofstream f(dir.path / "run.json");
        f << R"({"seed": 11, "training": {"iterations": 7}, "sampler": {"stride": 50}})";
    }
    const LoadedConfig l = load_run_config(dir.path / "run.json", {"training.iterations=9"});
    EXPECT_EQ(l.config.seed, 11u);
    EXPECT_EQ(l.config.training.iterations, 9u);
    EXPECT_EQ(l.config.sampler.stride, 50);
    EXPECT_EQ(l.tree["training"]["iterations"], 9);

    {
        std::ofstream f(dir.path / "bad.json");
        f << R"({"seed": )";
    }
    config_error([&] { load_run_config(dir.path / "bad.json", {}); });
    config_error([&] { load_run_config(dir.path / "missing.json", {}); });
}

TEST(Config, HashIsStableAndSensitive) {
    const json a = load_run_config({}, {}).tree;
    const json b = load_run_config({}, {"seed=1"}).tree;
    EXPECT_EQ(config_hash(a), config_hash(default_config_tree()));
    EXPECT_NE(config_hash(a), config_hash(b));
    EXPECT_EQ(config_hash(a).size(), 16u);
}

TEST(Config, SamplerPlans) {
    const SamplerPlan ddim = with({}).sampler.plan(1000);
    EXPECT_EQ(ddim.timesteps.size(), 50u);
    const SamplerPlan full = with({"sampler.kind=ddpm_full"}).sampler.plan(1000);
    EXPECT_EQ(full.timesteps.size(), 1000u);
}
