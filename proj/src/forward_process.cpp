#include "aerodiff/forward_process.hpp"

#include <cmath>

#include "aerodiff/error.hpp"
#include "aerodiff/random.hpp"

namespace aerodiff {

Tensor q_sample_with_noise(const Tensor& x0, const Tensor& epsilon, Timestep t, const NoiseSchedule& schedule) {
    require_same_shape(x0, epsilon, "q_sample");
    const double a = schedule.alpha_cum(t);
    const double signal = std::sqrt(a);
    const double noise = std::sqrt(1.0 - a);
    Tensor x_t(x0.shape());
    for (std::size_t i = 0; i < x0.size(); ++i) x_t[i] = signal * x0[i] + noise * epsilon[i];
    return x_t;
}

NoisedPair q_sample(const Tensor& x0, Timestep t, const NoiseSchedule& schedule, RandomStream& rng) {
    require(x0.all_finite(), ErrorKind::Data, "q_sample: x0 contains non-finite values");
    NoisedPair pair;
    pair.t = t;
    schedule.alpha_cum(t);  // range check before drawing
    pair.epsilon = Tensor::randn(x0.shape(), rng);
    pair.x_t = q_sample_with_noise(x0, pair.epsilon, t, schedule);
    return pair;
}

NoisedBatch q_sample_batch(const Tensor& x0, std::span<const Timestep> ts, const NoiseSchedule& schedule,
                           const RandomStream& rng) {
    require(x0.rank() >= 1 && x0.dim(0) == ts.size(), ErrorKind::Data,
            "q_sample_batch: batch size does not match timestep count");
    require(x0.all_finite(), ErrorKind::Data, "q_sample_batch: x0 contains non-finite values");
    NoisedBatch out{Tensor(x0.shape()), Tensor(x0.shape())};
    const std::size_t row = x0.size() / ts.size();
    for (std::size_t b = 0; b < ts.size(); ++b) {
        const double a = schedule.alpha_cum(ts[b]);
        const double signal = std::sqrt(a), noise = std::sqrt(1.0 - a);
        RandomStream stream = rng.split(b);
        for (std::size_t i = b * row; i < (b + 1) * row; ++i) {
            const double e = stream.normal();
            out.epsilon[i] = e;
            out.x_t[i] = signal * x0[i] + noise * e;
        }
    }
    return out;
}

Tensor predict_x0_from_eps(const Tensor& x_t, const Tensor& eps_hat, Timestep t, const NoiseSchedule& schedule) {
    require_same_shape(x_t, eps_hat, "predict_x0_from_eps");
    const double a = schedule.alpha_cum(t);
    const double inv_signal = 1.0 / std::sqrt(a);
    const double noise = std::sqrt(1.0 - a);
    Tensor x0(x_t.shape());
    for (std::size_t i = 0; i < x_t.size(); ++i) x0[i] = (x_t[i] - noise * eps_hat[i]) * inv_signal;
    return x0;
}

}  // namespace aerodiff
