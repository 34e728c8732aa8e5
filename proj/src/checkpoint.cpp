#include "aerodiff/checkpoint.hpp"

#include <algorithm>

#include "aerodiff/error.hpp"
#include "aerodiff/sample_io.hpp"
#include "bytes.hpp"

namespace aerodiff {

namespace fs = std::filesystem;
using nlohmann::json;

json to_json(const DenoiserConfig& c) {
    return json{{"image_size", c.image_size},       {"input_channels", c.input_channels},
                {"base_width", c.base_width},       {"depth", c.depth},
                {"attn_levels", c.attn_levels},     {"latent_kind", to_string(c.latent_kind)},
                {"latent_blocks", c.latent_blocks}, {"latent_heads", c.latent_heads},
                {"embed_dim", c.embed_dim},         {"patch_size", c.patch_size},
                {"time_embed_dim", c.time_embed_dim}, {"norm_groups", c.norm_groups},
                {"mlp_ratio", c.mlp_ratio}};
}

namespace {

std::size_t positive_size(const json& v, const std::string& path) {
    require(v.is_number_integer() && v.get<long long>() >= 0, ErrorKind::Config,
            path + ": expected a non-negative integer, got " + v.dump());
    return v.get<std::size_t>();
}

}  // namespace

DenoiserConfig denoiser_config_from_json(const json& j, const std::string& path) {
    require(j.is_object(), ErrorKind::Config, path + ": expected an object");
    DenoiserConfig c;
    std::map<std::string, std::size_t*> sizes{
        {"image_size", &c.image_size},       {"input_channels", &c.input_channels}, {"base_width", &c.base_width},
        {"depth", &c.depth},                 {"latent_blocks", &c.latent_blocks},   {"latent_heads", &c.latent_heads},
        {"embed_dim", &c.embed_dim},         {"patch_size", &c.patch_size},         {"time_embed_dim", &c.time_embed_dim},
        {"norm_groups", &c.norm_groups},     {"mlp_ratio", &c.mlp_ratio}};
    for (const auto& [key, value] : j.items()) {
        const std::string where = path + "." + key;
        if (auto it = sizes.find(key); it != sizes.end()) {
            *it->second = positive_size(value, where);
        } else if (key == "latent_kind") {
            require(value.is_string(), ErrorKind::Config, where + ": expected a string");
            try {
                c.latent_kind = latent_kind_from_string(value.get<std::string>());
            } catch (const Error& e) {
                fail(ErrorKind::Config, where + ": " + e.what());
            }
        } else if (key == "attn_levels") {
            require(value.is_array(), ErrorKind::Config, where + ": expected a list of level indices");
            c.attn_levels.clear();
            for (const auto& level : value) c.attn_levels.push_back(positive_size(level, where));
        } else {
            fail(ErrorKind::Config, where + ": unknown key");
        }
    }
    try {
        c.validate();
    } catch (const Error& e) {
        fail(ErrorKind::Config, path + ": " + e.what());
    }
    return c;
}

namespace {
constexpr char kMagic[8] = {'A', 'D', 'C', 'K', 'P', 'T', '\0', '\0'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

void write_checkpoint(const fs::path& path, const CheckpointData& data) {
    detail::ByteWriter w;
    w.raw(std::span(reinterpret_cast<const std::uint8_t*>(kMagic), 8));
    w.u32(kVersion);
    w.u32(0);
    w.text(json{{"model", to_json(data.config)}, {"meta", data.meta}}.dump());
    w.u64(data.arrays.size());
    for (const auto& [name, t] : data.arrays) {
        w.text(name);
        w.u32(static_cast<std::uint32_t>(t.rank()));
        for (std::size_t d : t.shape()) w.u64(d);
        for (double v : t.values()) w.f32(static_cast<float>(v));
    }
    // Write to a sibling file first so an interrupted save never clobbers the last good checkpoint.
    fs::path tmp = path;
    tmp += ".tmp";
    write_file_bytes(tmp, w.bytes);
    fs::rename(tmp, path);
}

CheckpointData read_checkpoint(const fs::path& path) {
    const auto bytes = read_file_bytes(path);
    detail::ByteReader r(bytes, path.string(), ErrorKind::Parse);
    const auto magic = r.raw(8, "magic");
    if (!std::equal(magic.begin(), magic.end(), reinterpret_cast<const std::uint8_t*>(kMagic)))
        r.error("field 'magic' does not identify a checkpoint");
    if (const auto v = r.u32("version"); v != kVersion) r.error("unsupported checkpoint version " + std::to_string(v));
    r.u32("reserved");
    CheckpointData data;
    json header;
    try {
        header = json::parse(r.text("config"));
    } catch (const json::exception& e) {
        r.error(std::string("config record is not valid JSON: ") + e.what());
    }
    require(header.is_object() && header.contains("model"), ErrorKind::Parse, path.string() + ": config lacks 'model'");
    data.config = denoiser_config_from_json(header["model"]);
    if (header.contains("meta")) data.meta = header["meta"];
    const std::uint64_t count = r.u64("array count");
    for (std::uint64_t k = 0; k < count; ++k) {
        std::string name = r.text("array name", 4096);
        const std::uint32_t rank = r.u32("array rank");
        if (rank > 8) r.error("array '" + name + "' has implausible rank " + std::to_string(rank));
        Shape shape;
        std::size_t n = 1;
        for (std::uint32_t i = 0; i < rank; ++i) {
            shape.push_back(r.u64("array dims"));
            n *= shape.back();
        }
        if (n * 4 > r.remaining()) r.error("array '" + name + "' is truncated");
        Tensor t(shape);
        for (double& v : t.values()) v = r.f32("array values");
        require(data.arrays.emplace(std::move(name), std::move(t)).second, ErrorKind::Parse,
                path.string() + ": duplicate array name");
    }
    if (r.remaining() != 0) r.error("trailing bytes after the last array");
    return data;
}

void save_checkpoint(const fs::path& path, const Denoiser& model, const json& meta,
                     const std::map<std::string, Tensor>& extra_arrays) {
    CheckpointData data;
    data.config = model.config();
    data.meta = meta;
    for (const auto& p : model.parameters()) data.arrays.emplace(p.name, p.var.value());
    for (const auto& [name, t] : extra_arrays)
        require(data.arrays.emplace(name, t).second, ErrorKind::Config, "extra array '" + name + "' shadows a parameter");
    write_checkpoint(path, data);
}

LoadedModel load_checkpoint(const fs::path& path) {
    CheckpointData data = read_checkpoint(path);
    LoadedModel out{Denoiser(data.config, 0), data.meta, {}};
    for (auto& p : out.model.parameters()) {
        auto it = data.arrays.find(p.name);
        require(it != data.arrays.end(), ErrorKind::Parse, path.string() + ": missing parameter '" + p.name + "'");
        require(it->second.shape() == p.var.shape(), ErrorKind::Parse,
                path.string() + ": parameter '" + p.name + "' has shape " + shape_string(it->second.shape()) +
                    ", model expects " + shape_string(p.var.shape()));
        p.var.value_mut() = std::move(it->second);
        data.arrays.erase(it);
    }
    out.extra_arrays = std::move(data.arrays);
    return out;
}

}  // namespace aerodiff
