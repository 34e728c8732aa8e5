#include "aerodiff/denoiser.hpp"

#include <algorithm>
#include <optional>

#include "aerodiff/error.hpp"
#include "aerodiff/nn/ops.hpp"
#include "aerodiff/random.hpp"

namespace aerodiff {

using nn::Init;
using nn::Var;

std::string to_string(LatentKind kind) {
    switch (kind) {
        case LatentKind::Dit: return "dit";
        case LatentKind::Uvit: return "uvit";
        case LatentKind::UnetMid: return "unet_mid";
        case LatentKind::SkiplessDit: return "skipless_dit";
    }
    return "unknown";
}

LatentKind latent_kind_from_string(const std::string& name) {
    for (LatentKind k : {LatentKind::Dit, LatentKind::Uvit, LatentKind::UnetMid, LatentKind::SkiplessDit})
        if (to_string(k) == name) return k;
    fail(ErrorKind::Config, "unknown latent kind '" + name + "' (expected dit, uvit, unet_mid or skipless_dit)");
}

void DenoiserConfig::validate() const {
    auto need = [](bool ok, const std::string& msg) { require(ok, ErrorKind::Config, msg); };
    need(input_channels == 2 * kTargetChannels, "input_channels must be 6 (3 target + 3 condition)");
    need(base_width >= 1 && depth >= 1, "base_width and depth must be positive");
    need(image_size >= 1 && image_size % (std::size_t{1} << depth) == 0,
         "image_size " + std::to_string(image_size) + " not divisible by 2^depth = " +
             std::to_string(std::size_t{1} << depth));
    need(patch_size >= 1 && latent_size() % patch_size == 0,
         "latent size " + std::to_string(latent_size()) + " not divisible by patch_size " + std::to_string(patch_size));
    for (std::size_t level : attn_levels) {
        need(level < depth, "attention level " + std::to_string(level) + " >= depth");
        need(level_channels(level) % latent_heads == 0,
             "level " + std::to_string(level) + " width not divisible by latent_heads");
    }
    need(latent_heads >= 1, "latent_heads must be positive");
    need(embed_dim >= 2 && embed_dim % latent_heads == 0, "embed_dim must be divisible by latent_heads");
    need(time_embed_dim >= 2 && time_embed_dim % 2 == 0, "time_embed_dim must be even");
    need(norm_groups >= 1 && mlp_ratio >= 1, "norm_groups and mlp_ratio must be positive");
    if (latent_kind != LatentKind::UnetMid) need(latent_blocks >= 1, "latent_blocks must be >= 1");
}

std::size_t DenoiserConfig::token_count() const {
    const std::size_t side = latent_size() / patch_size;
    return side * side;
}

bool DenoiserConfig::has_attention(std::size_t level) const {
    return std::find(attn_levels.begin(), attn_levels.end(), level) != attn_levels.end();
}

ResidualBlock::ResidualBlock(std::size_t in, std::size_t out, std::size_t embed_dim, std::size_t groups,
                             RandomStream& rng)
    : norm1(in, nn::pick_groups(in, groups), rng),
      norm2(out, nn::pick_groups(out, groups), rng),
      conv1(in, out, 3, 1, 1, Init::FanIn, rng),
      conv2(out, out, 3, 1, 1, Init::Zeros, rng),
      temb_proj(embed_dim, out, Init::TruncatedNormal, rng),
      has_shortcut(in != out) {
    if (has_shortcut) shortcut = nn::Conv2d(in, out, 1, 1, 0, Init::FanIn, rng);
}

Var ResidualBlock::operator()(const Var& x, const Var& temb_act) const {
    Var h = conv1(nn::gelu(norm1(x)));
    h = nn::add_channel_bias(h, temb_proj(temb_act));
    h = conv2(nn::gelu(norm2(h)));
    return nn::add(has_shortcut ? shortcut(x) : x, h);
}

void ResidualBlock::collect(nn::ParameterList& out, const std::string& prefix) const {
    norm1.collect(out, prefix + ".norm1");
    conv1.collect(out, prefix + ".conv1");
    temb_proj.collect(out, prefix + ".temb_proj");
    norm2.collect(out, prefix + ".norm2");
    conv2.collect(out, prefix + ".conv2");
    if (has_shortcut) shortcut.collect(out, prefix + ".shortcut");
}

namespace {

// Residual self-attention over the pixels of one resolution level, with a fixed
// 2-D sinusoidal position code added before the projections.
struct SpatialAttention {
    SpatialAttention(std::size_t channels, std::size_t size, std::size_t heads_, std::size_t groups, RandomStream& rng)
        : norm(channels, nn::pick_groups(channels, groups), rng),
          qkv(channels, 3 * channels, Init::TruncatedNormal, rng),
          proj(channels, channels, Init::Zeros, rng),
          position(nn::sinusoidal_grid_encoding(channels, size, size)),
          heads(heads_) {}

    Var operator()(const Var& x) const {
        const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
        Tensor pos({B, C, H, W});
        for (std::size_t b = 0; b < B; ++b) std::copy_n(position.data(), position.size(), pos.data() + b * position.size());
        Var h = nn::add(norm(x), Var(std::move(pos)));
        Var tokens = nn::patchify(h, 1);
        Var attended = proj(nn::attention(qkv(tokens), heads));
        return nn::add(x, nn::unpatchify(attended, C, H, W, 1));
    }

    void collect(nn::ParameterList& out, const std::string& prefix) const {
        norm.collect(out, prefix + ".norm");
        qkv.collect(out, prefix + ".qkv");
        proj.collect(out, prefix + ".proj");
    }

    nn::GroupNorm norm;
    nn::Linear qkv;
    nn::Linear proj;
    Tensor position;
    std::size_t heads;
};

// Transformer block with adaptive layer norm: (shift, scale, gate) x 2 from the
// conditioning signal; the modulation projection starts at zero.
struct DitBlock {
    DitBlock(std::size_t width, std::size_t embed, std::size_t heads_, std::size_t mlp_ratio, RandomStream& rng)
        : modulation(embed, 6 * width, Init::Zeros, rng),
          qkv(width, 3 * width, Init::TruncatedNormal, rng),
          proj(width, width, Init::TruncatedNormal, rng),
          fc1(width, mlp_ratio * width, Init::TruncatedNormal, rng),
          fc2(mlp_ratio * width, width, Init::TruncatedNormal, rng),
          width_(width),
          heads(heads_) {}

    Var operator()(const Var& x, const Var& cond_act) const {
        const Var mod = modulation(cond_act);
        auto chunk = [&](std::size_t i) { return nn::slice_columns(mod, i * width_, width_); };
        Var h = nn::modulate(nn::layer_norm(x), chunk(0), chunk(1));
        Var y = nn::gated_residual(x, chunk(2), proj(nn::attention(qkv(h), heads)));
        Var h2 = nn::modulate(nn::layer_norm(y), chunk(3), chunk(4));
        return nn::gated_residual(y, chunk(5), fc2(nn::gelu(fc1(h2))));
    }

    void collect(nn::ParameterList& out, const std::string& prefix) const {
        modulation.collect(out, prefix + ".modulation");
        qkv.collect(out, prefix + ".qkv");
        proj.collect(out, prefix + ".proj");
        fc1.collect(out, prefix + ".fc1");
        fc2.collect(out, prefix + ".fc2");
    }

    nn::Linear modulation, qkv, proj, fc1, fc2;
    std::size_t width_;
    std::size_t heads;
};

}  // namespace

struct Denoiser::Impl {
    // Embeddings.
    nn::Linear time_fc1, time_fc2;
    nn::Linear cond_fc1, cond_fc2;

    // Encoder.
    nn::Conv2d stem;
    std::vector<ResidualBlock> enc_blocks;
    std::vector<std::optional<SpatialAttention>> enc_attn;
    std::vector<nn::Conv2d> downsample;

    // Latent transformer.
    nn::Linear patch_embed;
    Var position;
    std::vector<DitBlock> blocks;
    std::vector<nn::Linear> uvit_skip;
    nn::Linear final_modulation, final_proj;
    // UnetMid replacement.
    std::vector<ResidualBlock> mid_blocks;

    // Decoder.
    std::vector<nn::ConvTranspose2x2> upsample;
    std::vector<ResidualBlock> dec_blocks;
    std::vector<std::optional<SpatialAttention>> dec_attn;
    nn::GroupNorm out_norm;
    nn::Conv2d out_conv;
};

Denoiser::Denoiser(DenoiserConfig config, std::uint64_t seed) : config_(std::move(config)), impl_(std::make_unique<Impl>()) {
    config_.validate();
    RandomStream rng(seed);
    const auto& c = config_;
    Impl& m = *impl_;
    const std::size_t E = c.embed_dim;

    m.time_fc1 = nn::Linear(c.time_embed_dim, E, Init::TruncatedNormal, rng);
    m.time_fc2 = nn::Linear(E, E, Init::TruncatedNormal, rng);
    m.cond_fc1 = nn::Linear(DenoiserConfig::kTargetChannels, E, Init::FanIn, rng);
    m.cond_fc2 = nn::Linear(E, E, Init::TruncatedNormal, rng);

    m.stem = nn::Conv2d(c.input_channels, c.level_channels(0), 3, 1, 1, Init::FanIn, rng);
    for (std::size_t l = 0; l < c.depth; ++l) {
        const std::size_t ch = c.level_channels(l), size = c.image_size >> l;
        m.enc_blocks.emplace_back(ch, ch, E, c.norm_groups, rng);
        m.enc_attn.emplace_back(c.has_attention(l) ? std::optional<SpatialAttention>(std::in_place, ch, size,
                                                                                      c.latent_heads, c.norm_groups, rng)
                                                   : std::nullopt);
        m.downsample.emplace_back(ch, c.level_channels(l + 1), 2, 2, 0, Init::FanIn, rng);
    }

    const std::size_t cz = c.latent_channels(), token_width = cz * c.patch_size * c.patch_size;
    if (c.latent_kind == LatentKind::UnetMid) {
        for (int i = 0; i < 2; ++i) m.mid_blocks.emplace_back(cz, cz, E, c.norm_groups, rng);
    } else {
        m.patch_embed = nn::Linear(token_width, E, Init::TruncatedNormal, rng);
        m.position = nn::make_parameter({c.token_count(), E}, Init::TruncatedNormal, rng);
        for (std::size_t i = 0; i < c.latent_blocks; ++i)
            m.blocks.emplace_back(E, E, c.latent_heads, c.mlp_ratio, rng);
        if (c.latent_kind == LatentKind::Uvit)
            for (std::size_t i = 0; i < c.latent_blocks / 2; ++i)
                m.uvit_skip.emplace_back(2 * E, E, Init::TruncatedNormal, rng);
        m.final_modulation = nn::Linear(E, 2 * E, Init::Zeros, rng);
        m.final_proj = nn::Linear(E, token_width, Init::Zeros, rng);
    }

    m.upsample.resize(c.depth);
    m.dec_blocks.resize(c.depth);
    m.dec_attn.resize(c.depth);
    for (std::size_t l = c.depth; l-- > 0;) {
        const std::size_t ch = c.level_channels(l), size = c.image_size >> l;
        m.upsample[l] = nn::ConvTranspose2x2(c.level_channels(l + 1), ch, rng);
        m.dec_blocks[l] = ResidualBlock(ch, ch, E, c.norm_groups, rng);
        if (c.has_attention(l)) m.dec_attn[l].emplace(ch, size, c.latent_heads, c.norm_groups, rng);
    }
    m.out_norm = nn::GroupNorm(c.level_channels(0), nn::pick_groups(c.level_channels(0), c.norm_groups), rng);
    m.out_conv = nn::Conv2d(c.level_channels(0), DenoiserConfig::kTargetChannels, 3, 1, 1, Init::Zeros, rng);
}

Denoiser::~Denoiser() = default;
Denoiser::Denoiser(Denoiser&&) noexcept = default;
Denoiser& Denoiser::operator=(Denoiser&&) noexcept = default;

Var Denoiser::time_embedding(std::span<const Timestep> ts) const {
    std::vector<double> positions(ts.begin(), ts.end());
    Var s(nn::sinusoidal_embedding(positions, config_.time_embed_dim));
    return impl_->time_fc2(nn::silu(impl_->time_fc1(s)));
}

Var Denoiser::condition_embedding(const Var& condition) const {
    return impl_->cond_fc2(nn::silu(impl_->cond_fc1(nn::spatial_mean(condition))));
}

Denoiser::Encoded Denoiser::encode(const Var& x, const Var& t_embed) const {
    const auto& c = config_;
    require(x.value().rank() == 4 && x.dim(1) == c.input_channels && x.dim(2) == c.image_size &&
                x.dim(3) == c.image_size,
            ErrorKind::Config,
            "encoder input " + shape_string(x.shape()) + " does not match configured [B, " +
                std::to_string(c.input_channels) + ", " + std::to_string(c.image_size) + ", " +
                std::to_string(c.image_size) + "]");
    const Impl& m = *impl_;
    const Var temb_act = nn::silu(t_embed);
    Encoded out;
    Var h = m.stem(x);
    for (std::size_t l = 0; l < c.depth; ++l) {
        h = m.enc_blocks[l](h, temb_act);
        if (m.enc_attn[l]) h = (*m.enc_attn[l])(h);
        out.skips.push_back(h);
        h = m.downsample[l](h);
    }
    out.latent = h;
    return out;
}

Var Denoiser::latent_transform(const Var& z, const Var& cond_embed, const Var& t_embed) const {
    const auto& c = config_;
    const Impl& m = *impl_;
    require(z.value().rank() == 4 && z.dim(1) == c.latent_channels() && z.dim(2) == c.latent_size() &&
                z.dim(3) == c.latent_size(),
            ErrorKind::Config, "latent " + shape_string(z.shape()) + " does not match the configured bottleneck");
    if (c.latent_kind == LatentKind::UnetMid) {
        const Var temb_act = nn::silu(t_embed);
        Var h = z;
        for (const auto& block : m.mid_blocks) h = block(h, temb_act);
        return h;
    }

    const Var cond_act = nn::silu(nn::add(cond_embed, t_embed));
    Var x = nn::add_row_embedding(m.patch_embed(nn::patchify(z, c.patch_size)), m.position);
    if (c.latent_kind == LatentKind::Uvit) {
        const std::size_t half = m.blocks.size() / 2;
        std::vector<Var> stack;
        for (std::size_t i = 0; i < half; ++i) {
            x = m.blocks[i](x, cond_act);
            stack.push_back(x);
        }
        if (m.blocks.size() % 2 == 1) x = m.blocks[half](x, cond_act);
        for (std::size_t j = 0; j < half; ++j) {
            x = m.uvit_skip[j](nn::concat_last(x, stack.back()));
            stack.pop_back();
            x = m.blocks[m.blocks.size() - half + j](x, cond_act);
        }
    } else {
        for (const auto& block : m.blocks) x = block(x, cond_act);
    }
    const Var mod = m.final_modulation(cond_act);
    const std::size_t E = c.embed_dim;
    x = nn::modulate(nn::layer_norm(x), nn::slice_columns(mod, 0, E), nn::slice_columns(mod, E, E));
    const Var delta = nn::unpatchify(m.final_proj(x), c.latent_channels(), c.latent_size(), c.latent_size(), c.patch_size);
    return nn::add(z, delta);
}

Var Denoiser::decode(const Var& z, const std::vector<Var>& skips, const Var& t_embed) const {
    const auto& c = config_;
    const Impl& m = *impl_;
    const bool skipless = c.latent_kind == LatentKind::SkiplessDit;
    require(skipless ? skips.empty() : skips.size() == c.depth, ErrorKind::Inference,
            "decoder expected " + std::to_string(skipless ? 0 : c.depth) + " skips, got " +
                std::to_string(skips.size()));
    const Var temb_act = nn::silu(t_embed);
    Var h = z;
    for (std::size_t l = c.depth; l-- > 0;) {
        h = m.upsample[l](h);
        if (!skipless) {
            require(skips[l].shape() == h.shape(), ErrorKind::Inference,
                    "skip " + std::to_string(l) + " has shape " + shape_string(skips[l].shape()) + ", expected " +
                        shape_string(h.shape()));
            h = nn::add(h, skips[l]);
        }
        h = m.dec_blocks[l](h, temb_act);
        if (m.dec_attn[l]) h = (*m.dec_attn[l])(h);
    }
    return m.out_conv(nn::gelu(m.out_norm(h)));
}

namespace {
void check_stage(const Var& v, const char* stage) {
    require(v.value().all_finite(), ErrorKind::Numerical, std::string("non-finite activations in stage '") + stage + "'");
}
}  // namespace

Var Denoiser::forward(const Var& x_t, const Var& condition, std::span<const Timestep> ts) const {
    require(x_t.value().rank() == 4 && x_t.shape() == condition.shape() &&
                x_t.dim(1) == DenoiserConfig::kTargetChannels && ts.size() == x_t.dim(0),
            ErrorKind::Inference,
            "predict_noise: x_t " + shape_string(x_t.shape()) + ", condition " + shape_string(condition.shape()) +
                ", " + std::to_string(ts.size()) + " timesteps");
    const Var t_embed = time_embedding(ts);
    const Var cond_embed = condition_embedding(condition);
    check_stage(t_embed, "embedding");
    Encoded enc = encode(nn::concat_channels(x_t, condition), t_embed);
    check_stage(enc.latent, "encoder");
    const Var z = latent_transform(enc.latent, cond_embed, t_embed);
    check_stage(z, "latent");
    if (config_.latent_kind == LatentKind::SkiplessDit) enc.skips.clear();
    Var out = decode(z, enc.skips, t_embed);
    check_stage(out, "decoder");
    return out;
}

Tensor Denoiser::predict(const Tensor& x_t, const Tensor& condition, std::span<const Timestep> ts) const {
    nn::NoGradGuard guard;
    return forward(Var(x_t), Var(condition), ts).value();
}

nn::ParameterList Denoiser::parameters() const {
    const auto& c = config_;
    const Impl& m = *impl_;
    nn::ParameterList out;
    m.time_fc1.collect(out, "time_embed.fc1");
    m.time_fc2.collect(out, "time_embed.fc2");
    m.cond_fc1.collect(out, "cond_embed.fc1");
    m.cond_fc2.collect(out, "cond_embed.fc2");
    m.stem.collect(out, "encoder.stem");
    for (std::size_t l = 0; l < c.depth; ++l) {
        const std::string p = "encoder.level" + std::to_string(l);
        m.enc_blocks[l].collect(out, p + ".block");
        if (m.enc_attn[l]) m.enc_attn[l]->collect(out, p + ".attn");
        m.downsample[l].collect(out, p + ".down");
    }
    if (c.latent_kind == LatentKind::UnetMid) {
        for (std::size_t i = 0; i < m.mid_blocks.size(); ++i) m.mid_blocks[i].collect(out, "latent.mid" + std::to_string(i));
    } else {
        m.patch_embed.collect(out, "latent.patch_embed");
        out.push_back({"latent.position", m.position});
        for (std::size_t i = 0; i < m.blocks.size(); ++i) m.blocks[i].collect(out, "latent.block" + std::to_string(i));
        for (std::size_t i = 0; i < m.uvit_skip.size(); ++i) m.uvit_skip[i].collect(out, "latent.skip" + std::to_string(i));
        m.final_modulation.collect(out, "latent.final_modulation");
        m.final_proj.collect(out, "latent.final_proj");
    }
    for (std::size_t l = c.depth; l-- > 0;) {
        const std::string p = "decoder.level" + std::to_string(l);
        m.upsample[l].collect(out, p + ".up");
        m.dec_blocks[l].collect(out, p + ".block");
        if (m.dec_attn[l]) m.dec_attn[l]->collect(out, p + ".attn");
    }
    m.out_norm.collect(out, "decoder.out_norm");
    m.out_conv.collect(out, "decoder.out_conv");
    return out;
}

std::size_t Denoiser::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.var.value().size();
    return n;
}

std::vector<StageSummary> Denoiser::summary() const {
    const auto& c = config_;
    std::vector<StageSummary> out;
    out.push_back({"input", c.input_channels, c.image_size, c.image_size});
    for (std::size_t l = 0; l < c.depth; ++l)
        out.push_back({"encoder.level" + std::to_string(l), c.level_channels(l), c.image_size >> l, c.image_size >> l});
    out.push_back({"latent." + to_string(c.latent_kind), c.latent_channels(), c.latent_size(), c.latent_size()});
    for (std::size_t l = c.depth; l-- > 0;)
        out.push_back({"decoder.level" + std::to_string(l), c.level_channels(l), c.image_size >> l, c.image_size >> l});
    out.push_back({"output", DenoiserConfig::kTargetChannels, c.image_size, c.image_size});
    return out;
}

void Denoiser::perturb_parameters(RandomStream& rng, double scale) {
    for (auto& p : parameters()) {
        Var v = p.var;
        for (double& x : v.value_mut().values()) x += scale * rng.normal();
        nn::round_to_float(v.value_mut());
    }
}

}  // namespace aerodiff
