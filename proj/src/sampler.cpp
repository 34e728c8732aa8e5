#include "aerodiff/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "aerodiff/error.hpp"
#include "aerodiff/forward_process.hpp"
#include "aerodiff/random.hpp"

namespace aerodiff {

std::vector<Timestep> strided_subset(int num_steps, int stride) {
    require(stride >= 1 && stride <= num_steps, ErrorKind::Plan,
            "stride " + std::to_string(stride) + " outside 1.." + std::to_string(num_steps));
    std::vector<Timestep> steps;
    for (int s = 1; s <= num_steps; s += stride) steps.push_back(s);
    return steps;
}

SamplerPlan SamplerPlan::ddpm_full(int num_steps) {
    SamplerPlan plan;
    plan.kind = SamplerKind::DdpmFull;
    plan.timesteps = strided_subset(num_steps, 1);
    plan.sigma = SigmaRule::ddpm_equivalent();
    return plan;
}

SamplerPlan SamplerPlan::ddim(int num_steps, int stride, SigmaRule sigma) {
    SamplerPlan plan;
    plan.kind = SamplerKind::Ddim;
    plan.timesteps = strided_subset(num_steps, stride);
    plan.sigma = sigma;
    return plan;
}

bool SamplerPlan::deterministic() const noexcept {
    if (kind == SamplerKind::DdpmFull) return timesteps.size() <= 1;
    return sigma.kind == SigmaRule::Kind::DeterministicZero ||
           (sigma.kind == SigmaRule::Kind::Eta && sigma.eta == 0.0);
}

void SamplerPlan::validate(const NoiseSchedule& schedule) const {
    require(!timesteps.empty(), ErrorKind::Plan, "plan has no timesteps");
    require(timesteps.front() >= 1 && timesteps.back() <= schedule.num_steps(), ErrorKind::Plan,
            "plan timesteps must lie in 1.." + std::to_string(schedule.num_steps()));
    require(std::adjacent_find(timesteps.begin(), timesteps.end(), std::greater_equal<>()) == timesteps.end(),
            ErrorKind::Plan, "plan timesteps must be strictly increasing");
    require(sigma.kind != SigmaRule::Kind::Eta || (std::isfinite(sigma.eta) && sigma.eta >= 0.0), ErrorKind::Plan,
            "eta must be a finite value >= 0");
    if (kind == SamplerKind::DdpmFull) {
        require(static_cast<int>(timesteps.size()) == schedule.num_steps(), ErrorKind::Plan,
                "full DDPM plan must visit every timestep 1..T");
        require(sigma.kind == SigmaRule::Kind::DdpmEquivalent, ErrorKind::Plan,
                "full DDPM plan requires the DDPM-equivalent sigma rule");
    }
}

double ddim_sigma(double alpha_prev, double alpha_cur, const SigmaRule& rule) {
    if (rule.kind == SigmaRule::Kind::DeterministicZero) return 0.0;
    const double ddpm = std::sqrt((1.0 - alpha_prev) / (1.0 - alpha_cur)) * std::sqrt(1.0 - alpha_cur / alpha_prev);
    return rule.kind == SigmaRule::Kind::Eta ? rule.eta * ddpm : ddpm;
}

namespace {

double alpha_or_clean(const NoiseSchedule& schedule, Timestep t) { return t == 0 ? 1.0 : schedule.alpha_cum(t); }

}  // namespace

Tensor ddim_step(const Tensor& x_t, const Tensor& eps_hat, Timestep t_cur, Timestep t_prev, double sigma,
                 const NoiseSchedule& schedule, RandomStream& rng) {
    require_same_shape(x_t, eps_hat, "ddim_step");
    require(t_prev >= 0 && t_prev < t_cur, ErrorKind::Plan,
            "ddim_step needs 0 <= t_prev < t_cur, got " + std::to_string(t_prev) + " -> " + std::to_string(t_cur));
    const double a_cur = schedule.alpha_cum(t_cur);
    const double a_prev = alpha_or_clean(schedule, t_prev);
    double direction = 1.0 - a_prev - sigma * sigma;
    if (direction < 0.0 && direction > -1e-14) direction = 0.0;
    require(direction >= 0.0 && sigma >= 0.0, ErrorKind::Plan,
            "sigma " + std::to_string(sigma) + " too large for step " + std::to_string(t_cur) + " -> " +
                std::to_string(t_prev));

    const double inv_signal = 1.0 / std::sqrt(a_cur);
    const double noise_cur = std::sqrt(1.0 - a_cur);
    const double signal_prev = std::sqrt(a_prev);
    const double dir_coef = std::sqrt(direction);

    Tensor out(x_t.shape());
    for (std::size_t i = 0; i < x_t.size(); ++i) {
        const double x0_hat = (x_t[i] - noise_cur * eps_hat[i]) * inv_signal;
        out[i] = signal_prev * x0_hat + dir_coef * eps_hat[i];
    }
    if (sigma > 0.0)
        for (double& v : out.values()) v += sigma * rng.normal();
    return out;
}

double ddpm_posterior_sigma(const NoiseSchedule& schedule, Timestep t) {
    if (t <= 1) return 0.0;
    const double beta = schedule.beta(t);
    return std::sqrt(beta * (1.0 - schedule.alpha_cum(t - 1)) / (1.0 - schedule.alpha_cum(t)));
}

Tensor ddpm_ancestral_step(const Tensor& x_t, const Tensor& eps_hat, Timestep t, const NoiseSchedule& schedule,
                           RandomStream& rng) {
    require_same_shape(x_t, eps_hat, "ddpm_ancestral_step");
    const double beta = schedule.beta(t);
    const double a = schedule.alpha_cum(t);
    const double scale = 1.0 / std::sqrt(1.0 - beta);
    const double eps_coef = beta / std::sqrt(1.0 - a);
    const double sigma = ddpm_posterior_sigma(schedule, t);

    Tensor out(x_t.shape());
    for (std::size_t i = 0; i < x_t.size(); ++i) out[i] = scale * (x_t[i] - eps_coef * eps_hat[i]);
    if (sigma > 0.0)
        for (double& v : out.values()) v += sigma * rng.normal();
    return out;
}

Tensor generate(const NoisePredictor& model, const Tensor& condition, const SamplerPlan& plan,
                const NoiseSchedule& schedule, RandomStream& rng) {
    Tensor x_start = Tensor::randn(condition.shape(), rng);
    return generate_from(model, condition, std::move(x_start), plan, schedule, rng);
}

Tensor generate_from(const NoisePredictor& model, const Tensor& condition, Tensor x_start, const SamplerPlan& plan,
                     const NoiseSchedule& schedule, RandomStream& rng) {
    plan.validate(schedule);
    require(condition.rank() == 3 || condition.rank() == 4, ErrorKind::Inference,
            "condition must be [C,H,W] or [B,C,H,W], got " + shape_string(condition.shape()));
    require(x_start.shape() == condition.shape(), ErrorKind::Inference,
            "starting state " + shape_string(x_start.shape()) + " does not match condition " +
                shape_string(condition.shape()));

    const bool unbatched = condition.rank() == 3;
    const Tensor cond = unbatched ? condition.reshaped({1, condition.dim(0), condition.dim(1), condition.dim(2)})
                                  : condition;
    Tensor x = unbatched ? x_start.reshaped(cond.shape()) : std::move(x_start);
    const std::size_t batch = cond.dim(0);

    auto eps_at = [&](Timestep t) {
        const std::vector<Timestep> ts(batch, t);
        Tensor eps = model.predict(x, cond, ts);
        require(eps.shape() == x.shape(), ErrorKind::Inference,
                "model output " + shape_string(eps.shape()) + " does not match state " + shape_string(x.shape()));
        return eps;
    };

    const auto& steps = plan.timesteps;
    if (plan.kind == SamplerKind::DdpmFull) {
        for (auto it = steps.rbegin(); it != steps.rend(); ++it) x = ddpm_ancestral_step(x, eps_at(*it), *it, schedule, rng);
    } else {
        for (std::size_t k = steps.size() - 1; k > 0; --k) {
            const Timestep cur = steps[k], prev = steps[k - 1];
            const double sigma = ddim_sigma(schedule.alpha_cum(prev), schedule.alpha_cum(cur), plan.sigma);
            x = ddim_step(x, eps_at(cur), cur, prev, sigma, schedule, rng);
        }
        // Closing reconstruction below the smallest selected timestep.
        x = ddim_step(x, eps_at(steps.front()), steps.front(), 0, 0.0, schedule, rng);
    }
    return unbatched ? x.reshaped(condition.shape()) : x;
}

}  // namespace aerodiff
