#include "aerodiff/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "aerodiff/error.hpp"

namespace aerodiff {

Tensor FieldSample::mask() const {
    const std::size_t h = condition.dim(1), w = condition.dim(2);
    return Tensor({h, w}, std::vector<double>(condition.data(), condition.data() + h * w));
}

void validate_sample(const FieldSample& s, const std::string& origin) {
    auto need = [&](bool ok, const std::string& what) { require(ok, ErrorKind::Validation, origin + ": " + what); };
    need(s.condition.rank() == 3 && s.condition.dim(0) == kConditionChannels, "condition must be [3, H, W]");
    need(s.target.rank() == 3 && s.target.dim(0) == kTargetChannels, "target must be [3, H, W]");
    need(s.condition.dim(1) == s.target.dim(1) && s.condition.dim(2) == s.target.dim(2),
         "condition and target spatial dims differ");
    need(s.condition.all_finite() && s.target.all_finite(), "non-finite values");
    need(std::isfinite(s.meta.reynolds) && s.meta.reynolds > 0.0, "Reynolds number must be positive");
    const std::size_t plane = s.height() * s.width();
    for (std::size_t i = 0; i < plane; ++i) {
        const double m = s.condition[i];
        need(m == 0.0 || m == 1.0, "mask value " + std::to_string(m) + " is not 0 or 1");
        need(s.condition[plane + i] == s.condition[plane] && s.condition[2 * plane + i] == s.condition[2 * plane],
             "parametric condition channels are not spatially constant");
        if (m == 1.0)
            for (std::size_t c = 0; c < kTargetChannels; ++c)
                need(s.target[c * plane + i] == 0.0, "target is nonzero under the mask");
    }
}

std::string to_string(Subset s) { return s == Subset::Training ? "training" : "test"; }
std::string to_string(Category c) { return c == Category::Low ? "low" : "high"; }
std::string to_string(Region r) { return r == Region::Interpolation ? "interpolation" : "extrapolation"; }

Subset subset_from_string(const std::string& s) {
    if (s == "training") return Subset::Training;
    if (s == "test") return Subset::Test;
    fail(ErrorKind::Parse, "unknown subset '" + s + "'");
}

Category category_from_string(const std::string& s) {
    if (s == "low") return Category::Low;
    if (s == "high") return Category::High;
    fail(ErrorKind::Parse, "unknown uncertainty category '" + s + "'");
}

Region region_from_string(const std::string& s) {
    if (s == "interpolation") return Region::Interpolation;
    if (s == "extrapolation") return Region::Extrapolation;
    fail(ErrorKind::Parse, "unknown region '" + s + "'");
}

const CaseInfo& CaseSplit::at(std::uint32_t id) const {
    const auto it = cases.find(id);
    require(it != cases.end(), ErrorKind::Data, "case " + std::to_string(id) + " is not in the split");
    return it->second;
}

std::vector<std::uint32_t> CaseSplit::ids(Subset subset) const {
    std::vector<std::uint32_t> out;
    for (const auto& [id, info] : cases)
        if (info.subset == subset) out.push_back(id);
    return out;
}

void assign_regions(CaseSplit& split) {
    double lo = INFINITY, hi = -INFINITY;
    for (const auto& [id, c] : split.cases)
        if (c.subset == Subset::Training) {
            lo = std::min(lo, c.reynolds);
            hi = std::max(hi, c.reynolds);
        }
    for (auto& [id, c] : split.cases)
        c.region = c.subset == Subset::Training || (c.reynolds >= lo && c.reynolds <= hi) ? Region::Interpolation
                                                                                          : Region::Extrapolation;
}

namespace {

void require_plane(const Tensor& t, const Shape& shape, const char* what) {
    require(t.shape() == shape, ErrorKind::Normalization,
            std::string(what) + " has shape " + shape_string(t.shape()) + ", expected " + shape_string(shape));
}

}  // namespace

Tensor normalize_raw_case(const Tensor& pressure, const Tensor& u_x, const Tensor& u_y, double freestream_speed,
                          double freestream_pressure, const Tensor& mask) {
    require(std::isfinite(freestream_speed) && freestream_speed > 0.0, ErrorKind::Normalization,
            "freestream speed must be positive, got " + std::to_string(freestream_speed));
    require(pressure.rank() == 2, ErrorKind::Normalization, "raw pressure must be [H, W]");
    require_plane(u_x, pressure.shape(), "u_x");
    require_plane(u_y, pressure.shape(), "u_y");
    if (!mask.empty()) require_plane(mask, pressure.shape(), "mask");
    const std::size_t h = pressure.dim(0), w = pressure.dim(1), plane = h * w;
    const double q = freestream_speed * freestream_speed;
    Tensor out({kTargetChannels, h, w});
    for (std::size_t i = 0; i < plane; ++i) {
        if (!mask.empty() && mask[i] >= 0.5) continue;
        out[i] = (pressure[i] - freestream_pressure) / q;
        out[plane + i] = u_x[i] / freestream_speed;
        out[2 * plane + i] = u_y[i] / freestream_speed;
    }
    return out;
}

RawFields denormalize_case(const Tensor& target, double freestream_speed, double freestream_pressure) {
    require(std::isfinite(freestream_speed) && freestream_speed > 0.0, ErrorKind::Normalization,
            "freestream speed must be positive");
    require(target.rank() == 3 && target.dim(0) == kTargetChannels, ErrorKind::Normalization,
            "target must be [3, H, W]");
    const std::size_t h = target.dim(1), w = target.dim(2), plane = h * w;
    RawFields raw{Tensor({h, w}), Tensor({h, w}), Tensor({h, w})};
    const double q = freestream_speed * freestream_speed;
    for (std::size_t i = 0; i < plane; ++i) {
        raw.pressure[i] = target[i] * q + freestream_pressure;
        raw.u_x[i] = target[plane + i] * freestream_speed;
        raw.u_y[i] = target[2 * plane + i] * freestream_speed;
    }
    return raw;
}

Tensor encode_condition(const Tensor& mask, double reynolds, double alpha_deg, double re_max) {
    require(std::isfinite(reynolds) && reynolds > 0.0, ErrorKind::Condition,
            "Reynolds number must be positive, got " + std::to_string(reynolds));
    require(std::isfinite(re_max) && re_max >= reynolds, ErrorKind::Condition,
            "re_max " + std::to_string(re_max) + " is below Re " + std::to_string(reynolds));
    require(std::isfinite(alpha_deg), ErrorKind::Condition, "angle of attack must be finite");
    require(mask.rank() == 2, ErrorKind::Condition, "mask must be [H, W]");
    const std::size_t h = mask.dim(0), w = mask.dim(1), plane = h * w;
    const double a = alpha_deg * std::numbers::pi / 180.0;
    const double cx = reynolds * std::cos(a) / re_max, cy = reynolds * std::sin(a) / re_max;
    Tensor out({kConditionChannels, h, w});
    for (std::size_t i = 0; i < plane; ++i) {
        out[i] = mask[i] >= 0.5 ? 1.0 : 0.0;
        out[plane + i] = cx;
        out[2 * plane + i] = cy;
    }
    return out;
}

CaseStatistics compute_case_statistics(std::span<const Tensor> replicates) {
    require(replicates.size() >= 2, ErrorKind::Statistics,
            "case statistics need at least 2 replicates, got " + std::to_string(replicates.size()));
    const Shape& shape = replicates.front().shape();
    for (const auto& r : replicates)
        require(r.shape() == shape, ErrorKind::Statistics,
                "replicate shapes differ: " + shape_string(r.shape()) + " vs " + shape_string(shape));
    const double n = static_cast<double>(replicates.size());
    CaseStatistics s{Tensor(shape), Tensor(shape), replicates.size()};
    // Deviations from the first replicate, so identical replicates give exactly zero spread.
    const Tensor& ref = replicates.front();
    for (std::size_t i = 0; i < s.mean.size(); ++i) {
        double sum = 0.0;
        for (const auto& r : replicates) sum += r[i] - ref[i];
        const double shift = sum / n;
        double ss = 0.0;
        for (const auto& r : replicates) ss += (r[i] - ref[i] - shift) * (r[i] - ref[i] - shift);
        s.mean[i] = ref[i] + shift;
        s.sd[i] = std::sqrt(ss / n);
    }
    return s;
}

std::vector<const FieldSample*> Dataset::samples_of(std::uint32_t case_id) const {
    std::vector<const FieldSample*> out;
    for (const auto& s : samples)
        if (s.meta.case_id == case_id) out.push_back(&s);
    return out;
}

std::vector<const FieldSample*> Dataset::samples_in(Subset subset) const {
    std::vector<const FieldSample*> out;
    for (const auto& s : samples)
        if (split.at(s.meta.case_id).subset == subset) out.push_back(&s);
    return out;
}

CaseStatistics Dataset::statistics(std::uint32_t case_id) const {
    std::vector<Tensor> targets;
    for (const FieldSample* s : samples_of(case_id)) targets.push_back(s->target);
    require(targets.size() >= 2, ErrorKind::Evaluation,
            "case " + std::to_string(case_id) + " has " + std::to_string(targets.size()) +
                " replicates; reference statistics need at least 2");
    return compute_case_statistics(targets);
}

}  // namespace aerodiff
