#pragma once

#include <span>
#include <vector>

#include "aerodiff/schedule.hpp"
#include "aerodiff/tensor.hpp"

namespace aerodiff {

class RandomStream;

// Anything that maps (x_t, condition, t) to a noise estimate. x_t and condition
// are [B, C, H, W]; ts holds one timestep per batch row.
class NoisePredictor {
public:
    virtual ~NoisePredictor() = default;
    virtual Tensor predict(const Tensor& x_t, const Tensor& condition, std::span<const Timestep> ts) const = 0;
};

enum class SamplerKind { DdpmFull, Ddim };

struct SigmaRule {
    enum class Kind { DdpmEquivalent, DeterministicZero, Eta };
    Kind kind = Kind::DeterministicZero;
    double eta = 0.0;

    static SigmaRule ddpm_equivalent() { return {Kind::DdpmEquivalent, 1.0}; }
    static SigmaRule deterministic() { return {Kind::DeterministicZero, 0.0}; }
    static SigmaRule with_eta(double eta) { return {Kind::Eta, eta}; }
};

struct SamplerPlan {
    SamplerKind kind = SamplerKind::Ddim;
    std::vector<Timestep> timesteps;  // strictly increasing, within 1..T
    SigmaRule sigma;

    static SamplerPlan ddpm_full(int num_steps);
    static SamplerPlan ddim(int num_steps, int stride, SigmaRule sigma = SigmaRule::deterministic());

    std::size_t model_calls_per_sample() const noexcept { return timesteps.size(); }
    bool deterministic() const noexcept;
    void validate(const NoiseSchedule& schedule) const;
};

// (1, 1 + n, 1 + 2n, ..., 1 + kn) with k maximal such that 1 + kn <= T.
std::vector<Timestep> strided_subset(int num_steps, int stride);

double ddim_sigma(double alpha_prev, double alpha_cur, const SigmaRule& rule);

// One generalized DDIM transition t_cur -> t_prev. t_prev == 0 denotes the clean
// state (alpha = 1), which turns the step into the x0 reconstruction. With sigma == 0
// no random numbers are consumed.
Tensor ddim_step(const Tensor& x_t, const Tensor& eps_hat, Timestep t_cur, Timestep t_prev, double sigma,
                 const NoiseSchedule& schedule, RandomStream& rng);

// Posterior standard deviation used by the ancestral step at t (0 at t = 1).
double ddpm_posterior_sigma(const NoiseSchedule& schedule, Timestep t);

// Ancestral DDPM step t -> t - 1 with the standard posterior mean and variance.
Tensor ddpm_ancestral_step(const Tensor& x_t, const Tensor& eps_hat, Timestep t, const NoiseSchedule& schedule,
                           RandomStream& rng);

// Draws x_T ~ N(0, I) shaped like the target (condition with 3 channels) and runs the plan.
Tensor generate(const NoisePredictor& model, const Tensor& condition, const SamplerPlan& plan,
                const NoiseSchedule& schedule, RandomStream& rng);

// Runs the plan from a caller-supplied starting state.
Tensor generate_from(const NoisePredictor& model, const Tensor& condition, Tensor x_start, const SamplerPlan& plan,
                     const NoiseSchedule& schedule, RandomStream& rng);

}  // namespace aerodiff
