#pragma once

#include <span>
#include <vector>

namespace aerodiff {

// Timestep index in 1..T. Storage below is 0-based: step t lives at [t - 1].
// This is the only place the mapping happens; everything else speaks 1-based.
using Timestep = int;

// Immutable linear beta schedule with 64-bit cumulative products.
class NoiseSchedule {
public:
    int num_steps() const noexcept { return static_cast<int>(betas_.size()); }

    double beta(Timestep t) const;
    // Cumulative signal retention prod_{i<=t} (1 - beta_i).
    double alpha_cum(Timestep t) const;

    std::span<const double> betas() const noexcept { return betas_; }
    std::span<const double> alphas_cum() const noexcept { return alphas_cum_; }

    double beta_start() const noexcept { return betas_.front(); }
    double beta_end() const noexcept { return betas_.back(); }

    friend NoiseSchedule make_linear_schedule(int num_steps, double beta_start, double beta_end);

private:
    NoiseSchedule() = default;
    std::size_t index(Timestep t) const;

    std::vector<double> betas_;
    std::vector<double> alphas_cum_;
};

NoiseSchedule make_linear_schedule(int num_steps, double beta_start, double beta_end);

double alpha_cum_at(const NoiseSchedule& schedule, Timestep t);

}  // namespace aerodiff
