#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <tuple>

#include "aerodiff/error.hpp"
#include "aerodiff/schedule.hpp"

using namespace aerodiff;

TEST(Schedule, ThreeStepHandProduct) {
    const auto s = make_linear_schedule(3, 0.1, 0.3);
    ASSERT_EQ(s.num_steps(), 3);
    EXPECT_NEAR(s.beta(1), 0.1, 1e-15);
    EXPECT_NEAR(s.beta(2), 0.2, 1e-15);
    EXPECT_NEAR(s.beta(3), 0.3, 1e-15);
    EXPECT_NEAR(s.alpha_cum(1), 0.9, 1e-15);
    EXPECT_NEAR(s.alpha_cum(2), 0.72, 1e-15);
    EXPECT_NEAR(s.alpha_cum(3), 0.504, 1e-15);
    EXPECT_DOUBLE_EQ(alpha_cum_at(s, 1), 0.9);
}

TEST(Schedule, DefaultHorizonEndsInNoise) {
    const auto s = make_linear_schedule(1000, 1e-4, 0.02);
    double running = 1.0;
    for (int t = 1; t <= 1000; ++t) running *= 1.0 - s.beta(t);
    EXPECT_LT(running, 1e-4);
    EXPECT_NEAR(s.alpha_cum(1000), running, 1e-12 * running + 1e-300);
    EXPECT_GT(s.alpha_cum(1000), 0.0);
    EXPECT_EQ(alpha_cum_at(s, 1000), *std::min_element(s.alphas_cum().begin(), s.alphas_cum().end()));
}

TEST(Schedule, RejectsBadEndpoints) {
    for (auto [n, a, b] : {std::tuple{1, 0.5, 0.5}, {10, 0.3, 0.1}, {10, 0.0, 0.1}, {10, 0.1, 1.0}, {0, 0.1, 0.2},
                           {10, -0.1, 0.2}, {10, std::nan(""), 0.2}}) {
        try {
            make_linear_schedule(n, a, b);
            ADD_FAILURE() << "accepted (" << n << ", " << a << ", " << b << ")";
        } catch (const Error& e) {
            EXPECT_EQ(e.kind(), ErrorKind::Schedule);
        }
    }
}

TEST(Schedule, OutOfRangeTimestepIsIndexError) {
    const auto s = make_linear_schedule(3, 0.1, 0.3);
    for (int t : {0, 4, -1}) {
        try {
            alpha_cum_at(s, t);
            ADD_FAILURE() << "accepted t=" << t;
        } catch (const Error& e) {
            EXPECT_EQ(e.kind(), ErrorKind::Index);
        }
    }
}

TEST(Schedule, TinyBetasApproachIdentity) {
    const auto s = make_linear_schedule(50, 1e-12, 2e-12);
    for (int t = 1; t <= 50; ++t) EXPECT_NEAR(alpha_cum_at(s, t), 1.0, 1e-9);
}

TEST(Schedule, MonotoneAndProductIdentity) {
    for (auto [n, a, b] : {std::tuple{5, 0.05, 0.5}, {1000, 1e-4, 0.02}, {200, 1e-3, 0.05}, {2, 0.4, 0.6}}) {
        const auto s = make_linear_schedule(n, a, b);
        EXPECT_NEAR(s.beta(1), a, 1e-15);
        EXPECT_NEAR(s.beta(n), b, 1e-15);
        for (int t = 1; t <= n; ++t) {
            EXPECT_GT(s.alpha_cum(t), 0.0);
            EXPECT_LT(s.alpha_cum(t), 1.0);
            if (t == 1) continue;
            EXPECT_LT(s.beta(t - 1), s.beta(t));
            EXPECT_GT(s.alpha_cum(t - 1), s.alpha_cum(t));
            const double ratio = s.alpha_cum(t) / s.alpha_cum(t - 1);
            EXPECT_LE(std::abs(ratio - (1.0 - s.beta(t))) / (1.0 - s.beta(t)), 1e-9) << "t=" << t;
            EXPECT_NEAR(s.beta(t) - s.beta(t - 1), (b - a) / (n - 1), 1e-12);
        }
    }
}
