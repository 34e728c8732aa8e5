#pragma once

#include <span>
#include <string>
#include <vector>

#include "aerodiff/nn/autograd.hpp"

namespace aerodiff {
class RandomStream;
}

namespace aerodiff::nn {

struct NamedParameter {
    std::string name;
    Var var;
};
using ParameterList = std::vector<NamedParameter>;

enum class Init { TruncatedNormal, FanIn, Zeros, Ones };

// Parameters are held at float32 precision (the checkpoint precision); the
// arithmetic around them runs in double.
Var make_parameter(Shape shape, Init init, RandomStream& rng, std::size_t fan_in = 1);
void round_to_float(Tensor& t) noexcept;

struct Linear {
    Linear() = default;
    Linear(std::size_t in, std::size_t out, Init weight_init, RandomStream& rng);

    Var operator()(const Var& x) const;
    void collect(ParameterList& out, const std::string& prefix) const;

    Var weight;
    Var bias;
};

struct Conv2d {
    Conv2d() = default;
    Conv2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, std::size_t padding, Init weight_init,
           RandomStream& rng);

    Var operator()(const Var& x) const;
    void collect(ParameterList& out, const std::string& prefix) const;

    Var weight;
    Var bias;
    std::size_t stride = 1;
    std::size_t padding = 0;
};

struct ConvTranspose2x2 {
    ConvTranspose2x2() = default;
    ConvTranspose2x2(std::size_t in, std::size_t out, RandomStream& rng);

    Var operator()(const Var& x) const;
    void collect(ParameterList& out, const std::string& prefix) const;

    Var weight;
    Var bias;
};

struct GroupNorm {
    GroupNorm() = default;
    GroupNorm(std::size_t channels, std::size_t groups, RandomStream& rng);

    Var operator()(const Var& x) const;
    void collect(ParameterList& out, const std::string& prefix) const;

    std::size_t groups = 1;
    Var gamma;
    Var beta;
};

// Largest group count <= preferred that divides channels.
std::size_t pick_groups(std::size_t channels, std::size_t preferred);

// Fixed sinusoidal embedding of scalar positions, [count, dim].
Tensor sinusoidal_embedding(std::span<const double> positions, std::size_t dim);
// Fixed 2-D sinusoidal encoding laid out as [channels, H, W].
Tensor sinusoidal_grid_encoding(std::size_t channels, std::size_t height, std::size_t width);

}  // namespace aerodiff::nn
