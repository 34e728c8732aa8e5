#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>

#include "aerodiff/denoiser.hpp"

namespace aerodiff {

nlohmann::json to_json(const DenoiserConfig& config);
// Strict: unknown keys and ill-typed values raise config errors naming the key.
DenoiserConfig denoiser_config_from_json(const nlohmann::json& j, const std::string& path = "model");

// Checkpoint container, little-endian:
//   8-byte magic "ADCKPT\0\0", u32 version (1), u32 reserved
//   u64 length + UTF-8 JSON {"model": <config>, "meta": <free-form>}
//   u64 array count, then per array:
//     u64 name length + name, u32 rank, rank x u64 dims, prod(dims) x f32 values
// Model parameters use their hierarchical names; other arrays (optimizer
// state, EMA weights) carry a prefix such as "optim.m." or "ema.".
struct CheckpointData {
    DenoiserConfig config;
    nlohmann::json meta = nlohmann::json::object();
    std::map<std::string, Tensor> arrays;
};

void write_checkpoint(const std::filesystem::path& path, const CheckpointData& data);
CheckpointData read_checkpoint(const std::filesystem::path& path);

void save_checkpoint(const std::filesystem::path& path, const Denoiser& model,
                     const nlohmann::json& meta = nlohmann::json::object(),
                     const std::map<std::string, Tensor>& extra_arrays = {});

struct LoadedModel {
    Denoiser model;
    nlohmann::json meta;
    std::map<std::string, Tensor> extra_arrays;  // everything that is not a model parameter
};
LoadedModel load_checkpoint(const std::filesystem::path& path);

}  // namespace aerodiff
