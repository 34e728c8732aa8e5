#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "aerodiff/denoiser.hpp"
#include "aerodiff/evaluation.hpp"
#include "aerodiff/importer.hpp"
#include "aerodiff/sampler.hpp"
#include "aerodiff/schedule.hpp"
#include "aerodiff/synthetic.hpp"
#include "aerodiff/training.hpp"

namespace aerodiff {

struct ScheduleConfig {
    int num_steps = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;

    NoiseSchedule make() const { return make_linear_schedule(num_steps, beta_start, beta_end); }
};

struct SamplerConfig {
    std::string kind = "ddim";            // ddim | ddpm_full
    int stride = 20;
    std::string sigma = "deterministic";  // deterministic | ddpm_equivalent | eta
    double eta = 0.0;

    SamplerPlan plan(int num_steps) const;
};

struct SynthConfig {
    std::size_t size = 32;
    std::size_t replicates = 20;
    std::size_t cases = 11;
    double alpha_deg = 20.0;
    double noise_low = 0.2;
    double noise_high = 0.6;

    SynthDatasetSpec spec(std::uint64_t seed) const;
};

struct SampleConfig {
    double reynolds = 7.5e6;
    double alpha_deg = 20.0;
    std::size_t count = 20;
    std::uint32_t case_id = 0;
    double re_max = 0.0;  // 0: take it from the checkpoint
    std::string mask;     // sample file whose mask is used; empty for the synthetic body
};

struct EvalConfig {
    std::size_t ensemble_size = 20;
    bool shared_start = false;
    std::size_t max_batch = 0;
    std::string subset = "test";
    std::vector<std::uint32_t> cases;
    bool dump_fields = false;
};

struct RunConfig {
    std::uint64_t seed = 0;
    ScheduleConfig schedule;
    DenoiserConfig model;
    TrainConfig training;
    SamplerConfig sampler;
    std::string data_root;
    std::string checkpoint;
    SynthConfig synthetic;
    ImportOptions import;
    SampleConfig sample;
    EvalConfig evaluation;

    EvalOptions eval_options() const;
    void validate() const;
};

// Every key the config tree accepts, with its default value.
nlohmann::json default_config_tree();

// Overlays `patch` on `base`. Keys absent from base, or values whose JSON type
// differs from the base value, raise a config error naming the dotted path.
void merge_config(nlohmann::json& base, const nlohmann::json& patch, const std::string& path = "");

// Applies "a.b.c=value" overrides in order. The value is read as JSON when it
// parses (numbers, booleans, lists) and as a bare string otherwise. Two
// overrides of one path with different values are rejected.
void apply_overrides(nlohmann::json& tree, const std::vector<std::string>& overrides);

RunConfig run_config_from_tree(const nlohmann::json& tree);
nlohmann::json to_tree(const RunConfig& config);

// Defaults, then the optional JSON file, then overrides; validated as a whole.
struct LoadedConfig {
    RunConfig config;
    nlohmann::json tree;
};
LoadedConfig load_run_config(const std::filesystem::path& file, const std::vector<std::string>& overrides);

// 16 hex digits of FNV-1a over the canonical dump of the tree.
std::string config_hash(const nlohmann::json& tree);

}  // namespace aerodiff
