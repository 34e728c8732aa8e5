#pragma once

#include <cstdint>
#include <vector>

#include "aerodiff/data.hpp"

namespace aerodiff {

class RandomStream;

// Desk-scale stand-in for the CFD dataset: inviscid flow past an ellipse
// (Joukowski map of a circle) plus a Reynolds-dependent wake deficit. Lengths
// are in units of the semi-major axis; the grid spans [-half_width, half_width]^2.
struct SynthGeometry {
    double half_width = 4.0;
    double semi_major = 1.0;
    double semi_minor = 0.4;
};

// [H, W], 1 where the cell centre lies inside the ellipse.
Tensor synthetic_mask(std::size_t height, std::size_t width, const SynthGeometry& g = {});

// Noise-free normalized target [3, H, W] for (Re, alpha).
Tensor synthetic_mean_field(std::size_t height, std::size_t width, double reynolds, double alpha_deg,
                            const SynthGeometry& g = {});

// [H, W] weight of the replicate noise: positive in the near wake, exactly 0 elsewhere.
Tensor synthetic_noise_envelope(std::size_t height, std::size_t width, double reynolds, double alpha_deg,
                                const SynthGeometry& g = {});

// Replicates = mean field + noise_scale * envelope * N(0, 1) per cell and channel.
// Values are rounded to float32 so they survive the sample format unchanged.
std::vector<FieldSample> generate_synthetic_case(std::size_t height, std::size_t width, double reynolds,
                                                 double alpha_deg, double noise_scale, std::size_t replicates,
                                                 RandomStream& rng, std::uint32_t case_id, double re_max,
                                                 const SynthGeometry& g = {});

// The eleven-case reference layout: Re = 0.5e6 + 1e6 * id, cases 0-4 low and
// 5-10 high uncertainty, training cases {1, 3, 5, 6, 8}. Returns the first `count`.
std::vector<CaseInfo> reference_case_layout(std::size_t count = 11);

struct SynthDatasetSpec {
    std::size_t size = 32;
    std::size_t replicates = 20;
    double alpha_deg = 20.0;
    double noise_low = 0.2;
    double noise_high = 0.6;
    std::vector<CaseInfo> cases = reference_case_layout();
    std::uint64_t seed = 0;
    SynthGeometry geometry;
};

Dataset make_synthetic_dataset(const SynthDatasetSpec& spec);

}  // namespace aerodiff
