#pragma once

#include <span>

#include "aerodiff/schedule.hpp"
#include "aerodiff/tensor.hpp"

namespace aerodiff {

class RandomStream;

struct NoisedPair {
    Tensor x_t;
    Tensor epsilon;
    Timestep t = 1;
};

// Closed-form q(x_t | x_0): x_t = sqrt(a_t) x0 + sqrt(1 - a_t) eps, eps ~ N(0, I).
NoisedPair q_sample(const Tensor& x0, Timestep t, const NoiseSchedule& schedule, RandomStream& rng);

// Same construction with a caller-supplied noise tensor.
Tensor q_sample_with_noise(const Tensor& x0, const Tensor& epsilon, Timestep t, const NoiseSchedule& schedule);

// Batched variant: x0 is [B, ...] and each batch row gets its own timestep.
// Row b draws its noise from rng.split(b), so a row is reproducible on its own.
struct NoisedBatch {
    Tensor x_t;
    Tensor epsilon;
};
NoisedBatch q_sample_batch(const Tensor& x0, std::span<const Timestep> ts, const NoiseSchedule& schedule,
                           const RandomStream& rng);

// x0 reconstruction implied by the closed form: (x_t - sqrt(1 - a_t) eps_hat) / sqrt(a_t).
Tensor predict_x0_from_eps(const Tensor& x_t, const Tensor& eps_hat, Timestep t, const NoiseSchedule& schedule);

}  // namespace aerodiff
