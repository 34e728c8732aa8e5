#include "aerodiff/schedule.hpp"

#include <cmath>
#include <string>

#include "aerodiff/error.hpp"

namespace aerodiff {

NoiseSchedule make_linear_schedule(int num_steps, double beta_start, double beta_end) {
    require(num_steps >= 1, ErrorKind::Schedule, "num_steps must be >= 1, got " + std::to_string(num_steps));
    require(std::isfinite(beta_start) && std::isfinite(beta_end) && beta_start > 0.0 && beta_end < 1.0 &&
                beta_start < beta_end,
            ErrorKind::Schedule,
            "need 0 < beta_start < beta_end < 1, got (" + std::to_string(beta_start) + ", " +
                std::to_string(beta_end) + ")");

    NoiseSchedule s;
    s.betas_.resize(static_cast<std::size_t>(num_steps));
    s.alphas_cum_.resize(s.betas_.size());
    double running = 1.0;
    for (int i = 0; i < num_steps; ++i) {
        const double frac = num_steps == 1 ? 0.0 : static_cast<double>(i) / (num_steps - 1);
        const double beta = beta_start + (beta_end - beta_start) * frac;
        running *= 1.0 - beta;
        s.betas_[static_cast<std::size_t>(i)] = beta;
        s.alphas_cum_[static_cast<std::size_t>(i)] = running;
    }
    return s;
}

std::size_t NoiseSchedule::index(Timestep t) const {
    require(t >= 1 && t <= num_steps(), ErrorKind::Index,
            "timestep " + std::to_string(t) + " outside 1.." + std::to_string(num_steps()));
    return static_cast<std::size_t>(t - 1);
}

double NoiseSchedule::beta(Timestep t) const { return betas_[index(t)]; }

double NoiseSchedule::alpha_cum(Timestep t) const { return alphas_cum_[index(t)]; }

double alpha_cum_at(const NoiseSchedule& schedule, Timestep t) { return schedule.alpha_cum(t); }

}  // namespace aerodiff
