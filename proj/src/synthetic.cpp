#include "aerodiff/synthetic.hpp"

#include <cmath>
#include <complex>
#include <numbers>

#include "aerodiff/error.hpp"
#include "aerodiff/random.hpp"

namespace aerodiff {

namespace {

using cplx = std::complex<double>;

double cell_centre(std::size_t i, std::size_t n, double half_width) {
    return -half_width + (static_cast<double>(i) + 0.5) * (2.0 * half_width / static_cast<double>(n));
}

// Row 0 is the top of the domain (largest y).
cplx cell_position(std::size_t row, std::size_t col, std::size_t height, std::size_t width, const SynthGeometry& g) {
    return {cell_centre(col, width, g.half_width), -cell_centre(row, height, g.half_width)};
}

bool inside(cplx z, const SynthGeometry& g) {
    const double x = z.real() / g.semi_major, y = z.imag() / g.semi_minor;
    return x * x + y * y <= 1.0;
}

// Unit-speed potential flow at angle alpha past the ellipse, via the map
// z = zeta + c^2 / zeta of a circle of radius r.
cplx potential_velocity(cplx z, double alpha, const SynthGeometry& g) {
    const double r = 0.5 * (g.semi_major + g.semi_minor);
    const double c2 = r * (g.semi_major - r);
    const cplx root = std::sqrt(z * z - 4.0 * c2);
    cplx zeta = 0.5 * (z + root);
    const cplx other = 0.5 * (z - root);
    if (std::abs(other) > std::abs(zeta)) zeta = other;
    const cplx dw = std::polar(1.0, -alpha) - r * r * std::polar(1.0, alpha) / (zeta * zeta);
    const cplx conj_velocity = dw / (1.0 - c2 / (zeta * zeta));
    return std::conj(conj_velocity);
}

struct Wake {
    double amplitude, width;
};

Wake wake_for(double reynolds) {
    const double re = reynolds / 1e6;
    return {0.3 * std::pow(1.5 / re, 0.2), 0.25 + 0.35 * std::pow(1.0 / re, 0.3)};
}

// Streamwise and normal coordinates relative to the trailing region.
void wake_coords(cplx z, double alpha, const SynthGeometry& g, double& s, double& n) {
    s = z.real() * std::cos(alpha) + z.imag() * std::sin(alpha) - 0.8 * g.semi_major;
    n = -z.real() * std::sin(alpha) + z.imag() * std::cos(alpha);
}

double wake_profile(double s, double n, const Wake& w) {
    if (s <= 0.0) return 0.0;
    const double q = n / w.width;
    return w.amplitude * std::exp(-0.5 * q * q) * (1.0 - std::exp(-s / 0.3)) * std::exp(-s / 0.8);
}

double round_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace

Tensor synthetic_mask(std::size_t height, std::size_t width, const SynthGeometry& g) {
    Tensor m({height, width});
    for (std::size_t r = 0; r < height; ++r)
        for (std::size_t c = 0; c < width; ++c) m[r * width + c] = inside(cell_position(r, c, height, width, g), g);
    return m;
}

Tensor synthetic_mean_field(std::size_t height, std::size_t width, double reynolds, double alpha_deg,
                            const SynthGeometry& g) {
    require(reynolds > 0.0 && std::isfinite(alpha_deg), ErrorKind::Data, "synthetic case needs Re > 0");
    const double alpha = alpha_deg * std::numbers::pi / 180.0;
    const Wake wake = wake_for(reynolds);
    const std::size_t plane = height * width;
    Tensor out({kTargetChannels, height, width});
    for (std::size_t r = 0; r < height; ++r)
        for (std::size_t c = 0; c < width; ++c) {
            const cplx z = cell_position(r, c, height, width, g);
            if (inside(z, g)) continue;
            cplx u = potential_velocity(z, alpha, g);
            double s, n;
            wake_coords(z, alpha, g, s, n);
            u -= wake_profile(s, n, wake) * std::polar(1.0, alpha);
            const std::size_t i = r * width + c;
            out[i] = 0.5 * (1.0 - std::norm(u));  // Bernoulli, already divided by |u_f|^2
            out[plane + i] = u.real();
            out[2 * plane + i] = u.imag();
        }
    return out;
}

Tensor synthetic_noise_envelope(std::size_t height, std::size_t width, double reynolds, double alpha_deg,
                                const SynthGeometry& g) {
    const double alpha = alpha_deg * std::numbers::pi / 180.0;
    const Wake wake = wake_for(reynolds);
    Tensor e({height, width});
    for (std::size_t r = 0; r < height; ++r)
        for (std::size_t c = 0; c < width; ++c) {
            const cplx z = cell_position(r, c, height, width, g);
            if (inside(z, g)) continue;
            double s, n;
            wake_coords(z, alpha, g, s, n);
            s += 0.3 * g.semi_major;
            if (s <= 0.0) continue;
            const double q = n / (1.5 * wake.width);
            const double v = std::exp(-0.5 * q * q) * std::exp(-s / 2.0);
            if (v >= 0.05) e[r * width + c] = v;
        }
    return e;
}

std::vector<FieldSample> generate_synthetic_case(std::size_t height, std::size_t width, double reynolds,
                                                 double alpha_deg, double noise_scale, std::size_t replicates,
                                                 RandomStream& rng, std::uint32_t case_id, double re_max,
                                                 const SynthGeometry& g) {
    require(noise_scale >= 0.0 && std::isfinite(noise_scale), ErrorKind::Data, "noise scale must be >= 0");
    require(height >= 1 && width >= 1, ErrorKind::Data, "grid must be non-empty");
    const Tensor mask = synthetic_mask(height, width, g);
    const Tensor condition = encode_condition(mask, reynolds, alpha_deg, re_max);
    const Tensor mean = synthetic_mean_field(height, width, reynolds, alpha_deg, g);
    const Tensor envelope = synthetic_noise_envelope(height, width, reynolds, alpha_deg, g);
    const std::size_t plane = height * width;

    std::vector<FieldSample> out;
    for (std::size_t k = 0; k < replicates; ++k) {
        RandomStream stream = rng.split(k);
        FieldSample s;
        s.meta = {case_id, reynolds, alpha_deg, static_cast<std::uint32_t>(k)};
        s.condition = condition;
        s.target = mean;
        for (std::size_t ch = 0; ch < kTargetChannels; ++ch)
            for (std::size_t i = 0; i < plane; ++i) {
                double& v = s.target[ch * plane + i];
                if (envelope[i] > 0.0) v += noise_scale * envelope[i] * stream.normal();
                v = round_f32(v);
            }
        for (double& v : s.condition.values()) v = round_f32(v);
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<CaseInfo> reference_case_layout(std::size_t count) {
    require(count <= 11, ErrorKind::Data, "the reference layout has 11 cases");
    std::vector<CaseInfo> cases;
    for (std::uint32_t id = 0; id < count; ++id) {
        CaseInfo c;
        c.id = id;
        c.reynolds = 0.5e6 + 1e6 * id;
        c.subset = (id == 1 || id == 3 || id == 5 || id == 6 || id == 8) ? Subset::Training : Subset::Test;
        c.category = id <= 4 ? Category::Low : Category::High;
        cases.push_back(c);
    }
    return cases;
}

Dataset make_synthetic_dataset(const SynthDatasetSpec& spec) {
    require(spec.size >= 2, ErrorKind::Data, "synthetic grid size must be >= 2");
    Dataset d;
    for (const auto& c : spec.cases) {
        require(d.split.cases.emplace(c.id, c).second, ErrorKind::Data, "duplicate case " + std::to_string(c.id));
        d.split.re_max = std::max(d.split.re_max, c.reynolds);
    }
    assign_regions(d.split);
    RandomStream root(spec.seed);
    for (const auto& [id, c] : d.split.cases) {
        RandomStream stream = root.split(id);
        const double noise = c.category == Category::Low ? spec.noise_low : spec.noise_high;
        auto reps = generate_synthetic_case(spec.size, spec.size, c.reynolds, spec.alpha_deg, noise, spec.replicates,
                                            stream, id, d.split.re_max, spec.geometry);
        for (auto& s : reps) d.samples.push_back(std::move(s));
    }
    return d;
}

}  // namespace aerodiff
