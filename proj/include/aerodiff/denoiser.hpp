#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "aerodiff/nn/autograd.hpp"
#include "aerodiff/nn/layers.hpp"
#include "aerodiff/sampler.hpp"

namespace aerodiff {

class RandomStream;

enum class LatentKind {
    Dit,          // adaptive-layer-norm transformer blocks
    Uvit,         // same blocks with long skips resolved by Linear[z || z_skip]
    UnetMid,      // two residual conv blocks instead of the transformer
    SkiplessDit,  // Dit latent, decoder gets no encoder skips
};

std::string to_string(LatentKind kind);
LatentKind latent_kind_from_string(const std::string& name);

struct DenoiserConfig {
    std::size_t image_size = 32;
    std::size_t input_channels = 6;  // 3 noised target + 3 condition channels
    std::size_t base_width = 64;
    std::size_t depth = 2;
    // Resolution levels (0 = full resolution) that get encoder/decoder self-attention.
    std::vector<std::size_t> attn_levels = {0, 1};
    LatentKind latent_kind = LatentKind::Dit;
    std::size_t latent_blocks = 8;
    std::size_t latent_heads = 4;
    std::size_t embed_dim = 256;
    std::size_t patch_size = 1;
    std::size_t time_embed_dim = 128;
    std::size_t norm_groups = 8;
    std::size_t mlp_ratio = 4;

    static constexpr std::size_t kTargetChannels = 3;

    void validate() const;
    std::size_t level_channels(std::size_t level) const { return base_width << level; }
    std::size_t latent_channels() const { return level_channels(depth); }
    std::size_t latent_size() const { return image_size >> depth; }
    std::size_t token_count() const;
    bool has_attention(std::size_t level) const;

    friend bool operator==(const DenoiserConfig&, const DenoiserConfig&) = default;
};

struct StageSummary {
    std::string name;
    std::size_t channels;
    std::size_t height;
    std::size_t width;
};

// Hybrid noise predictor: conv encoder -> conditioned latent transformer -> conv
// decoder, joined by per-resolution skips.
class Denoiser final : public NoisePredictor {
public:
    Denoiser(DenoiserConfig config, std::uint64_t seed);
    ~Denoiser() override;
    Denoiser(Denoiser&&) noexcept;
    Denoiser& operator=(Denoiser&&) noexcept;

    const DenoiserConfig& config() const noexcept { return config_; }

    nn::Var time_embedding(std::span<const Timestep> ts) const;
    nn::Var condition_embedding(const nn::Var& condition) const;

    struct Encoded {
        nn::Var latent;
        std::vector<nn::Var> skips;  // one per level, finest first
    };
    Encoded encode(const nn::Var& x, const nn::Var& t_embed) const;
    nn::Var latent_transform(const nn::Var& z, const nn::Var& cond_embed, const nn::Var& t_embed) const;
    nn::Var decode(const nn::Var& z, const std::vector<nn::Var>& skips, const nn::Var& t_embed) const;

    // Full recorded forward pass; x_t and condition are [B, 3, H, W].
    nn::Var forward(const nn::Var& x_t, const nn::Var& condition, std::span<const Timestep> ts) const;
    Tensor predict(const Tensor& x_t, const Tensor& condition, std::span<const Timestep> ts) const override;

    nn::ParameterList parameters() const;
    std::size_t parameter_count() const;
    std::vector<StageSummary> summary() const;

    // Adds N(0, scale^2) to every parameter (including zero-initialized ones).
    void perturb_parameters(RandomStream& rng, double scale);

private:
    struct Impl;
    DenoiserConfig config_;
    std::unique_ptr<Impl> impl_;
};

// Exposed building block: f(y) = skip(y) + H(y) with H = conv(GELU(GN(conv(GELU(GN(y))) + temb)))).
struct ResidualBlock {
    ResidualBlock() = default;
    ResidualBlock(std::size_t in, std::size_t out, std::size_t embed_dim, std::size_t groups, RandomStream& rng);

    nn::Var operator()(const nn::Var& x, const nn::Var& temb_act) const;
    void collect(nn::ParameterList& out, const std::string& prefix) const;

    nn::GroupNorm norm1, norm2;
    nn::Conv2d conv1, conv2;
    nn::Linear temb_proj;
    bool has_shortcut = false;
    nn::Conv2d shortcut;
};

}  // namespace aerodiff
