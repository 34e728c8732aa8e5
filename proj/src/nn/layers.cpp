#include "aerodiff/nn/layers.hpp"

#include <cmath>

#include "aerodiff/error.hpp"
#include "aerodiff/nn/ops.hpp"
#include "aerodiff/random.hpp"

namespace aerodiff::nn {

void round_to_float(Tensor& t) noexcept {
    for (double& v : t.values()) v = static_cast<double>(static_cast<float>(v));
}

Var make_parameter(Shape shape, Init init, RandomStream& rng, std::size_t fan_in) {
    Tensor t(std::move(shape));
    switch (init) {
        case Init::TruncatedNormal:
            for (double& v : t.values()) {
                double z = rng.normal();
                while (std::abs(z) > 2.0) z = rng.normal();
                v = 0.02 * z;
            }
            break;
        case Init::FanIn: {
            const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
            for (double& v : t.values()) v = bound * (2.0 * rng.uniform() - 1.0);
            break;
        }
        case Init::Zeros: break;
        case Init::Ones: t.fill(1.0); break;
    }
    round_to_float(t);
    return Var(std::move(t), true);
}

Linear::Linear(std::size_t in, std::size_t out, Init weight_init, RandomStream& rng)
    : weight(make_parameter({out, in}, weight_init, rng, in)), bias(make_parameter({out}, Init::Zeros, rng)) {}

Var Linear::operator()(const Var& x) const { return linear(x, weight, bias); }

void Linear::collect(ParameterList& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
}

Conv2d::Conv2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride_, std::size_t padding_,
               Init weight_init, RandomStream& rng)
    : weight(make_parameter({out, in, kernel, kernel}, weight_init, rng, in * kernel * kernel)),
      bias(make_parameter({out}, weight_init == Init::Zeros ? Init::Zeros : Init::FanIn, rng, in * kernel * kernel)),
      stride(stride_),
      padding(padding_) {}

Var Conv2d::operator()(const Var& x) const { return conv2d(x, weight, bias, stride, padding); }

void Conv2d::collect(ParameterList& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
}

ConvTranspose2x2::ConvTranspose2x2(std::size_t in, std::size_t out, RandomStream& rng)
    : weight(make_parameter({in, out, 2, 2}, Init::FanIn, rng, in * 4)),
      bias(make_parameter({out}, Init::FanIn, rng, in * 4)) {}

Var ConvTranspose2x2::operator()(const Var& x) const { return conv_transpose2x2(x, weight, bias); }

void ConvTranspose2x2::collect(ParameterList& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
}

GroupNorm::GroupNorm(std::size_t channels, std::size_t groups_, RandomStream& rng)
    : groups(groups_), gamma(make_parameter({channels}, Init::Ones, rng)), beta(make_parameter({channels}, Init::Zeros, rng)) {}

Var GroupNorm::operator()(const Var& x) const { return group_norm(x, groups, gamma, beta); }

void GroupNorm::collect(ParameterList& out, const std::string& prefix) const {
    out.push_back({prefix + ".gamma", gamma});
    out.push_back({prefix + ".beta", beta});
}

std::size_t pick_groups(std::size_t channels, std::size_t preferred) {
    for (std::size_t g = std::min(preferred, channels); g > 1; --g)
        if (channels % g == 0) return g;
    return 1;
}

Tensor sinusoidal_embedding(std::span<const double> positions, std::size_t dim) {
    require(dim >= 2 && dim % 2 == 0, ErrorKind::Config, "sinusoidal embedding dimension must be even");
    const std::size_t half = dim / 2;
    Tensor out({positions.size(), dim});
    for (std::size_t i = 0; i < positions.size(); ++i)
        for (std::size_t k = 0; k < half; ++k) {
            const double freq = std::exp(-std::log(10000.0) * static_cast<double>(k) / static_cast<double>(half));
            out[i * dim + k] = std::sin(positions[i] * freq);
            out[i * dim + half + k] = std::cos(positions[i] * freq);
        }
    return out;
}

Tensor sinusoidal_grid_encoding(std::size_t channels, std::size_t height, std::size_t width) {
    // Half the channels encode the row, half the column; odd leftovers stay zero.
    const std::size_t per_axis = (channels / 4) * 2;
    Tensor out({channels, height, width});
    if (per_axis == 0) return out;
    std::vector<double> rows(height), cols(width);
    for (std::size_t i = 0; i < height; ++i) rows[i] = static_cast<double>(i);
    for (std::size_t j = 0; j < width; ++j) cols[j] = static_cast<double>(j);
    const Tensor er = sinusoidal_embedding(rows, per_axis);
    const Tensor ec = sinusoidal_embedding(cols, per_axis);
    for (std::size_t c = 0; c < per_axis; ++c)
        for (std::size_t i = 0; i < height; ++i)
            for (std::size_t j = 0; j < width; ++j) {
                out[(c * height + i) * width + j] = er[i * per_axis + c];
                out[((per_axis + c) * height + i) * width + j] = ec[j * per_axis + c];
            }
    return out;
}

}  // namespace aerodiff::nn
