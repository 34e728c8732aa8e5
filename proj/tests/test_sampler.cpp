#include <gtest/gtest.h>

#include <cmath>

#include "aerodiff/error.hpp"
#include "aerodiff/forward_process.hpp"
#include "aerodiff/random.hpp"
#include "aerodiff/sampler.hpp"
#include "oracles.hpp"

using namespace aerodiff;

namespace {

void expect_plan_error(auto&& fn) {
    try {
        fn();
        ADD_FAILURE() << "expected a plan error";
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Plan);
    }
}

double sample_mean(const Tensor& t) {
    double s = 0.0;
    for (double v : t.values()) s += v;
    return s / t.size();
}

double sample_sd(const Tensor& t) {
    const double m = sample_mean(t);
    double s = 0.0;
    for (double v : t.values()) s += (v - m) * (v - m);
    return std::sqrt(s / t.size());
}

}  // namespace

TEST(StridedSubset, Examples) {
    const auto a = strided_subset(1000, 100);
    ASSERT_EQ(a.size(), 10u);
    EXPECT_EQ(a.front(), 1);
    EXPECT_EQ(a.back(), 901);
    EXPECT_EQ(strided_subset(7, 3), (std::vector<Timestep>{1, 4, 7}));
    EXPECT_EQ(strided_subset(10, 1), (std::vector<Timestep>{1, 2, 3, 4, 5, 6, 7, 8, 9, 10}));
    EXPECT_EQ(strided_subset(1000, 20).size(), 50u);
    expect_plan_error([] { strided_subset(10, 0); });
    expect_plan_error([] { strided_subset(10, 11); });
}

TEST(StridedSubset, LawHoldsForRandomHorizons) {
    RandomStream rng(31);
    for (int trial = 0; trial < 500; ++trial) {
        const int T = static_cast<int>(rng.uniform_int(1, 2000));
        const int n = static_cast<int>(rng.uniform_int(1, T));
        const auto s = strided_subset(T, n);
        ASSERT_FALSE(s.empty());
        EXPECT_EQ(s.front(), 1);
        for (std::size_t i = 1; i < s.size(); ++i) EXPECT_EQ(s[i] - s[i - 1], n);
        EXPECT_LE(s.back(), T);
        EXPECT_GT(s.back() + n, T);
        EXPECT_EQ(s.size(), static_cast<std::size_t>((T + n - 1) / n));
    }
}

TEST(DdimSigma, RulesAndHandValue) {
    // sqrt(0.1 / 0.28) * sqrt(1 - 0.72 / 0.9) = sqrt(1 / 14)
    EXPECT_NEAR(ddim_sigma(0.9, 0.72, SigmaRule::ddpm_equivalent()), std::sqrt(1.0 / 14.0), 1e-15);
    EXPECT_NEAR(ddim_sigma(0.9, 0.72, SigmaRule::ddpm_equivalent()), 0.2673, 1e-4);
    RandomStream rng(2);
    for (int i = 0; i < 100; ++i) {
        const double cur = 0.01 + 0.9 * rng.uniform();
        const double prev = cur + (0.999 - cur) * rng.uniform();
        EXPECT_EQ(ddim_sigma(prev, cur, SigmaRule::deterministic()), 0.0);
        EXPECT_EQ(ddim_sigma(prev, cur, SigmaRule::with_eta(1.0)), ddim_sigma(prev, cur, SigmaRule::ddpm_equivalent()));
        EXPECT_NEAR(ddim_sigma(prev, cur, SigmaRule::with_eta(0.3)),
                    0.3 * ddim_sigma(prev, cur, SigmaRule::ddpm_equivalent()), 1e-15);
    }
}

TEST(DdimStep, DeterministicWithoutNoiseConsumption) {
    const auto s = make_linear_schedule(100, 1e-4, 0.02);
    RandomStream data(3);
    const Tensor x = Tensor::randn({3, 8, 8}, data), eps = Tensor::randn({3, 8, 8}, data);
    RandomStream rng(4);
    const Tensor a = ddim_step(x, eps, 60, 40, 0.0, s, rng);
    const Tensor b = ddim_step(x, eps, 60, 40, 0.0, s, rng);
    EXPECT_EQ(a, b);
    EXPECT_EQ(rng.position(), 0u);
}

TEST(DdimStep, PerfectNoiseLandsOnClosedFormNoising) {
    const auto s = make_linear_schedule(1000, 1e-4, 0.02);
    RandomStream data(5);
    const Tensor x0 = Tensor::randn({3, 8, 8}, data), eps = Tensor::randn({3, 8, 8}, data);
    RandomStream rng(6);
    for (auto [cur, prev] : {std::pair{1000, 900}, {500, 499}, {981, 961}, {21, 1}, {2, 1}}) {
        const Tensor x_cur = q_sample_with_noise(x0, eps, cur, s);
        const Tensor expect = q_sample_with_noise(x0, eps, prev, s);
        const Tensor got = ddim_step(x_cur, eps, cur, prev, 0.0, s, rng);
        EXPECT_LE(max_abs(got - expect), 1e-5) << cur << "->" << prev;
    }
    // Terminal reconstruction: the clean state at t_prev = 0.
    const Tensor x_cur = q_sample_with_noise(x0, eps, 1, s);
    EXPECT_LE(max_abs(ddim_step(x_cur, eps, 1, 0, 0.0, s, rng) - x0), 1e-12);
}

TEST(DdimStep, RejectsOversizedSigmaAndBadOrder) {
    const auto s = make_linear_schedule(100, 1e-4, 0.02);
    const Tensor x({3, 2, 2}, 0.0);
    RandomStream rng(7);
    expect_plan_error([&] { ddim_step(x, x, 50, 40, 1.0, s, rng); });
    expect_plan_error([&] { ddim_step(x, x, 40, 40, 0.0, s, rng); });
    EXPECT_THROW(ddim_step(x, Tensor({3, 2, 3}), 50, 40, 0.0, s, rng), Error);
}

TEST(Ancestral, FinalStepIsDeterministic) {
    const auto s = make_linear_schedule(100, 1e-4, 0.02);
    RandomStream data(8);
    const Tensor x = Tensor::randn({3, 4, 4}, data), eps = Tensor::randn({3, 4, 4}, data);
    RandomStream r1(1), r2(2);
    EXPECT_EQ(ddpm_ancestral_step(x, eps, 1, s, r1), ddpm_ancestral_step(x, eps, 1, s, r2));
    EXPECT_EQ(ddpm_posterior_sigma(s, 1), 0.0);
}

TEST(Ancestral, ZeroInputGivesPosteriorNoise) {
    const auto s = make_linear_schedule(100, 1e-3, 0.05);
    const Tensor zero({1, 64, 64}, 0.0);
    RandomStream rng(9);
    const Tensor out = ddpm_ancestral_step(zero, zero, 50, s, rng);
    const double sigma = std::sqrt(s.beta(50) * (1.0 - s.alpha_cum(49)) / (1.0 - s.alpha_cum(50)));
    EXPECT_NEAR(ddpm_posterior_sigma(s, 50), sigma, 1e-15);
    EXPECT_NEAR(sample_mean(out), 0.0, 4.0 * sigma / 64.0);
    EXPECT_NEAR(sample_sd(out), sigma, 0.03 * sigma);
}

TEST(Ancestral, MatchesConsecutiveDdimUnderDdpmSigma) {
    const auto r = oracle::ddim_ddpm_equivalence(100, 2024);
    EXPECT_EQ(r.configs, 100u);
    EXPECT_LE(r.worst_mean_rel, 1e-6);
    EXPECT_LE(r.worst_sigma_rel, 1e-6);
}

TEST(Plan, ValidationAndCounts) {
    const auto s = make_linear_schedule(1000, 1e-4, 0.02);
    const auto full = SamplerPlan::ddpm_full(1000);
    full.validate(s);
    EXPECT_EQ(full.model_calls_per_sample(), 1000u);
    EXPECT_FALSE(full.deterministic());
    const auto ddim = SamplerPlan::ddim(1000, 20);
    ddim.validate(s);
    EXPECT_EQ(ddim.model_calls_per_sample(), 50u);
    EXPECT_TRUE(ddim.deterministic());

    auto bad = ddim;
    bad.timesteps = {1, 5, 5};
    expect_plan_error([&] { bad.validate(s); });
    bad.timesteps = {0, 5};
    expect_plan_error([&] { bad.validate(s); });
    auto short_full = SamplerPlan::ddpm_full(10);
    expect_plan_error([&] { short_full.validate(s); });
    auto eta = SamplerPlan::ddim(1000, 10, SigmaRule::with_eta(-1.0));
    expect_plan_error([&] { eta.validate(s); });
}

TEST(Generate, EvaluationCountEqualsPlanLength) {
    const auto s = make_linear_schedule(1000, 1e-4, 0.02);
    oracle::GaussianDataModel model(s, 0.0, 1.0);
    const Tensor cond({3, 4, 4}, 0.0);
    for (int stride : {1, 20, 100, 333, 1000}) {
        model.calls = 0;
        RandomStream rng(10);
        generate(model, cond, SamplerPlan::ddim(1000, stride), s, rng);
        EXPECT_EQ(model.calls, static_cast<std::size_t>((1000 + stride - 1) / stride));
    }
    model.calls = 0;
    RandomStream rng(11);
    generate(model, cond, SamplerPlan::ddpm_full(1000), s, rng);
    EXPECT_EQ(model.calls, 1000u);
}

TEST(Generate, DeterministicPlansAreBitReproducible) {
    const auto s = make_linear_schedule(200, 1e-4, 0.04);
    oracle::GaussianDataModel model(s, 0.3, 0.5);
    const Tensor cond({2, 3, 4, 4}, 0.0);
    RandomStream seed(12);
    const Tensor x_start = Tensor::randn(cond.shape(), seed);
    for (int stride : {1, 7, 50}) {
        RandomStream r1(1), r2(999);
        const auto plan = SamplerPlan::ddim(200, stride);
        EXPECT_EQ(generate_from(model, cond, x_start, plan, s, r1), generate_from(model, cond, x_start, plan, s, r2));
    }
    RandomStream r1(5), r2(5);
    const auto plan = SamplerPlan::ddim(200, 10);
    EXPECT_EQ(generate(model, cond, plan, s, r1), generate(model, cond, plan, s, r2));
}

// With the exact noise predictor for Gaussian data, both samplers must return
// draws from that Gaussian. Stochastic DDIM is only exact at stride 1: large
// ancestral jumps drop the posterior spread of x0 and under-disperse.
TEST(Generate, ExactModelRecoversDataDistribution) {
    const auto s = make_linear_schedule(1000, 1e-4, 0.02);
    const double m = 0.7, sd = 0.4;
    oracle::GaussianDataModel model(s, m, sd);
    const Tensor cond({3, 48, 48}, 0.0);
    const std::size_t n = cond.size();
    const struct {
        SamplerPlan plan;
        double mean_tol, sd_tol;
    } cases[] = {
        {SamplerPlan::ddpm_full(1000), 4.0 * sd / std::sqrt(n), 0.03},
        {SamplerPlan::ddim(1000, 20), 4.0 * sd / std::sqrt(n), 0.03},
        {SamplerPlan::ddim(1000, 1, SigmaRule::ddpm_equivalent()), 4.0 * sd / std::sqrt(n), 0.03},
    };
    for (const auto& c : cases) {
        RandomStream rng(13);
        const Tensor out = generate(model, cond, c.plan, s, rng);
        ASSERT_TRUE(out.all_finite());
        EXPECT_NEAR(sample_mean(out), m, c.mean_tol + 0.01);
        EXPECT_NEAR(sample_sd(out), sd, c.sd_tol) << c.plan.timesteps.size() << " steps, eta " << c.plan.sigma.eta;
    }
}

TEST(Generate, ShapeMismatchIsInferenceError) {
    const auto s = make_linear_schedule(10, 1e-3, 0.05);
    oracle::GaussianDataModel model(s, 0.0, 1.0);
    RandomStream rng(14);
    try {
        generate_from(model, Tensor({3, 4, 4}), Tensor({3, 4, 5}), SamplerPlan::ddim(10, 2), s, rng);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Inference);
    }
}
