#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "aerodiff/tensor.hpp"

namespace aerodiff {

// Channel order of the 6-plane sample: condition (mask, Re cos a, Re sin a)
// followed by target (pressure, u_x, u_y).
inline constexpr std::size_t kConditionChannels = 3;
inline constexpr std::size_t kTargetChannels = 3;

struct SampleMeta {
    std::uint32_t case_id = 0;
    double reynolds = 0.0;
    double alpha_deg = 0.0;
    std::uint32_t replicate = 0;
};

// condition and target are [3, H, W]. Mask is 1 inside the body, 0 in fluid.
struct FieldSample {
    Tensor condition;
    Tensor target;
    SampleMeta meta;

    std::size_t height() const { return target.dim(1); }
    std::size_t width() const { return target.dim(2); }
    // [H, W] view of the mask channel.
    Tensor mask() const;
};

// Checks shapes, finiteness, binary mask and zero target under the mask.
void validate_sample(const FieldSample& sample, const std::string& origin);

enum class Subset { Training, Test };
enum class Category { Low, High };
enum class Region { Interpolation, Extrapolation };

std::string to_string(Subset s);
std::string to_string(Category c);
std::string to_string(Region r);
Subset subset_from_string(const std::string& s);
Category category_from_string(const std::string& s);
Region region_from_string(const std::string& s);

struct CaseInfo {
    std::uint32_t id = 0;
    double reynolds = 0.0;
    Subset subset = Subset::Training;
    Category category = Category::Low;
    Region region = Region::Interpolation;
};

struct CaseSplit {
    std::map<std::uint32_t, CaseInfo> cases;
    double re_max = 0.0;  // scale applied to the parametric condition channels

    const CaseInfo& at(std::uint32_t id) const;
    std::vector<std::uint32_t> ids(Subset subset) const;
};

// A test case is interpolation when its Re lies within the closed span of the
// training Re values, extrapolation otherwise. Training cases are interpolation.
void assign_regions(CaseSplit& split);

// Pressure (p - p_inf) / |u_f|^2 and velocity u / |u_f|, zero under the mask.
// Raw fields are [H, W]; mask may be empty (no body).
Tensor normalize_raw_case(const Tensor& pressure, const Tensor& u_x, const Tensor& u_y, double freestream_speed,
                          double freestream_pressure, const Tensor& mask = {});

struct RawFields {
    Tensor pressure, u_x, u_y;
};
RawFields denormalize_case(const Tensor& target, double freestream_speed, double freestream_pressure);

// [3, H, W]: mask thresholded at 0.5, then Re cos(a) / re_max and Re sin(a) / re_max.
Tensor encode_condition(const Tensor& mask, double reynolds, double alpha_deg, double re_max);

struct CaseStatistics {
    Tensor mean;  // [3, H, W]
    Tensor sd;    // population standard deviation
    std::size_t replicates = 0;
};

CaseStatistics compute_case_statistics(std::span<const Tensor> replicates);

struct Dataset {
    std::vector<FieldSample> samples;
    CaseSplit split;
    std::vector<std::string> warnings;

    std::vector<const FieldSample*> samples_of(std::uint32_t case_id) const;
    std::vector<const FieldSample*> samples_in(Subset subset) const;
    CaseStatistics statistics(std::uint32_t case_id) const;
};

}  // namespace aerodiff
