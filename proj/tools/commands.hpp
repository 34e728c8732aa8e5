#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "aerodiff/config.hpp"
#include "aerodiff/data.hpp"
#include "aerodiff/error.hpp"
#include "aerodiff/evaluation.hpp"

namespace aerodiff::cli {

// Environment variable consulted when data.root is empty.
inline constexpr const char* kDataRootEnv = "AERODIFF_DATA_ROOT";

struct CommonArgs {
    std::filesystem::path config;
    std::vector<std::string> overrides;  // --set path=value, in order
    std::optional<std::uint64_t> seed;
    std::filesystem::path out = "runs";
    std::ostream* log = nullptr;         // progress lines; null for quiet
};

// Exit statuses: 0 success, 2 config, 3 data, 4 numerical.
int exit_code(ErrorKind kind);

struct RunContext {
    RunConfig config;
    nlohmann::json tree;
    std::filesystem::path dir;  // <out>/<command>-<config hash>-<timestamp>
};

// Loads and validates the whole config, then creates the run directory and
// writes resolved_config.json into it.
RunContext prepare_run(const std::string& command, const CommonArgs& args);

std::filesystem::path resolve_data_root(const RunConfig& config);

struct CommandResult {
    std::filesystem::path run_dir;
    std::vector<std::string> warnings;
    int status = 0;
};

CommandResult cmd_import(const CommonArgs& args, const std::filesystem::path& archive);
CommandResult cmd_synth(const CommonArgs& args);
CommandResult cmd_train(const CommonArgs& args, const std::filesystem::path& resume = {});
CommandResult cmd_sample(const CommonArgs& args);
CommandResult cmd_evaluate(const CommonArgs& args);
CommandResult cmd_ablate(const CommonArgs& args);

// Table rows in order: dit (full model with the configured sampler), unet_mid,
// skipless_dit, ddpm_full (the dit model sampled with every timestep).
struct AblationResult {
    std::vector<AblationEntry> entries;
    std::vector<AblationRow> rows;
};
AblationResult run_ablation(const RunConfig& config, const Dataset& dataset, const std::filesystem::path& dir,
                            std::ostream* log);

int run_cli(int argc, char** argv);

}  // namespace aerodiff::cli
