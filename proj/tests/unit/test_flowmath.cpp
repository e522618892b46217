// Copyright (C) 2026 The pixdec Authors
// SPDX-License-Identifier: Apache-2.0

#include "pixdec/errors.hpp"
#include "pixdec/flowmath.hpp"

#include <gtest/gtest.h>

using namespace pixdec;
using namespace pixdec::flow;

namespace {

torch::Tensor randn(Rng& rng, at::IntArrayRef shape)
{
    return rng.normal(shape, torch::kDouble);
}

} // namespace

TEST(Interpolate, Endpoints)
{
    Rng rng(1);
    auto x0 = randn(rng, {2, 3, 4});
    auto eps = randn(rng, {2, 3, 4});
    EXPECT_TRUE(torch::equal(interpolate(x0, eps, 1.0).x_t, x0));
    EXPECT_TRUE(torch::equal(interpolate(x0, eps, 0.0).x_t, eps));
}

TEST(Interpolate, LinearFormula)
{
    auto x0 = torch::full({4, 4}, 2.0, torch::kDouble);
    auto eps = torch::zeros({4, 4}, torch::kDouble);
    auto s = interpolate(x0, eps, 0.25);
    EXPECT_DOUBLE_EQ(s.t, 0.25);
    EXPECT_TRUE(torch::allclose(s.x_t, torch::full({4, 4}, 0.5, torch::kDouble)));
}

TEST(Interpolate, RejectsBadInputs)
{
    auto a = torch::zeros({2, 2});
    EXPECT_THROW(interpolate(a, torch::zeros({2, 3}), 0.5), ShapeError);
    EXPECT_THROW(interpolate(a, a, 1.5), DomainError);
    EXPECT_THROW(interpolate(a, a, -0.1), DomainError);
}

TEST(Interpolate, PerSampleTimes)
{
    Rng rng(2);
    auto x0 = randn(rng, {3, 2, 2});
    auto eps = randn(rng, {3, 2, 2});
    auto t = torch::tensor({0.0, 0.5, 1.0}, torch::kDouble);
    auto xt = interpolate(x0, eps, t);
    for (int64_t b = 0; b < 3; ++b)
        EXPECT_TRUE(torch::allclose(xt[b], interpolate(x0[b], eps[b], t[b].item<double>()).x_t));
}

TEST(Interpolate, ScalesLinearly)
{
    Rng rng(3);
    for (int k = 0; k < 50; ++k) {
        auto x0 = randn(rng, {8});
        auto eps = randn(rng, {8});
        const double a = rng.uniform_scalar(-3, 3);
        const double t = rng.uniform_scalar();
        EXPECT_TRUE(torch::allclose(interpolate(a * x0, a * eps, t).x_t, a * interpolate(x0, eps, t).x_t, 1e-12,
                                    1e-12));
    }
}

TEST(VelocityTarget, Examples)
{
    auto x = torch::ones({3});
    EXPECT_TRUE(torch::equal(velocity_target(x, x), torch::zeros({3})));
    EXPECT_TRUE(torch::equal(velocity_target(torch::ones({2}), -torch::ones({2})), torch::full({2}, 2.0)));
    EXPECT_THROW(velocity_target(torch::ones({2}), torch::ones({3})), ShapeError);
}

TEST(VelocityTarget, TelescopingIdentity)
{
    Rng rng(4);
    for (int k = 0; k < 200; ++k) {
        auto x0 = randn(rng, {5});
        auto eps = randn(rng, {5});
        const double t1 = rng.uniform_scalar();
        const double t2 = rng.uniform_scalar();
        auto lhs = interpolate(x0, eps, t1).x_t - interpolate(x0, eps, t2).x_t;
        auto rhs = (t1 - t2) * velocity_target(x0, eps);
        EXPECT_LT((lhs - rhs).abs().max().item<double>(), 1e-14);
    }
}

TEST(ShiftTime, FixedPointsAndValue)
{
    EXPECT_DOUBLE_EQ(shift_time(0.0, 6.0), 0.0);
    EXPECT_DOUBLE_EQ(shift_time(1.0, 6.0), 1.0);
    EXPECT_NEAR(shift_time(0.5, 6.0), 6.0 / 7.0, 1e-15);
    EXPECT_DOUBLE_EQ(shift_time(0.3, 1.0), 0.3);
}

TEST(ShiftTime, RejectsShiftBelowOne)
{
    EXPECT_THROW(shift_time(0.5, 0.5), DomainError);
    EXPECT_THROW(shift_time(1.5, 2.0), DomainError);
}

TEST(ShiftTime, MonotoneAndInvertible)
{
    Rng rng(5);
    for (int k = 0; k < 500; ++k) {
        const double s = rng.uniform_scalar(1.0, 10.0);
        const double a = rng.uniform_scalar();
        const double b = rng.uniform_scalar();
        if (a < b)
            EXPECT_LT(shift_time(a, s), shift_time(b, s));
        EXPECT_NEAR(unshift_time(shift_time(a, s), s), a, 1e-12);
        const double ts = shift_time(a, s);
        EXPECT_NEAR(a, ts / (s - (s - 1.0) * ts), 1e-12);
    }
}

TEST(ShiftTime, TensorMatchesScalar)
{
    auto t = torch::linspace(0, 1, 11, torch::kDouble);
    auto shifted = shift_time(t, 3.0);
    for (int64_t i = 0; i < 11; ++i)
        EXPECT_NEAR(shifted[i].item<double>(), shift_time(t[i].item<double>(), 3.0), 1e-15);
}

TEST(CorruptLatent, ZeroSigmaIsIdentity)
{
    Rng rng(6);
    LatentGrid z{randn(rng, {1, 4, 2, 2}), {}};
    auto out = corrupt_latent(z, 0.0, randn(rng, {1, 4, 2, 2}));
    EXPECT_TRUE(torch::equal(out.latent.values, z.values));
    EXPECT_EQ(out.sigma, 0.0);
}

TEST(CorruptLatent, ZeroLatent)
{
    Rng rng(7);
    auto xi = randn(rng, {1, 4, 2, 2});
    LatentGrid z{torch::zeros({1, 4, 2, 2}, torch::kDouble), {}};
    auto out = corrupt_latent(z, 0.8, xi);
    EXPECT_TRUE(torch::allclose(out.latent.values, 0.8 * xi));
    EXPECT_DOUBLE_EQ(out.sigma, 0.8);
    EXPECT_THROW(corrupt_latent(z, 0.5, torch::zeros({1, 4, 2, 3})), ShapeError);
}

TEST(CorruptLatent, PerSampleSigmaZeroRowsExact)
{
    Rng rng(8);
    auto z = randn(rng, {3, 2, 2, 2});
    auto out = corrupt_latent(z, torch::tensor({0.0, 0.5, 0.0}, torch::kDouble), randn(rng, {3, 2, 2, 2}));
    EXPECT_TRUE(torch::equal(out[0], z[0]));
    EXPECT_TRUE(torch::equal(out[2], z[2]));
}

TEST(CorruptLatent, VarianceAtHalf)
{
    Rng rng(9);
    const int64_t n = 100000;
    auto z = randn(rng, {n});
    auto xi = randn(rng, {n});
    auto out = corrupt_latent(z, torch::full({n}, 0.5, torch::kDouble), xi);
    EXPECT_NEAR(out.var().item<double>(), 0.5, 0.02);
}

TEST(SampleTrainingSigma, RangeAndMean)
{
    Rng rng(10);
    auto s = sample_training_sigma(rng, 100000, 0.8);
    EXPECT_GE(s.min().item<double>(), 0.0);
    EXPECT_LE(s.max().item<double>(), 0.8);
    EXPECT_NEAR(s.mean().item<double>(), 0.4, 0.01);
    for (int k = 0; k < 100; ++k) {
        const double v = sample_training_sigma(rng, 0.8);
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 0.8);
    }
}

TEST(SampleTrainingSigma, DegenerateMax)
{
    Rng rng(11);
    EXPECT_EQ(sample_training_sigma(rng, 0.0), 0.0);
    EXPECT_EQ(sample_training_sigma(rng, 16, 0.0).abs().max().item<double>(), 0.0);
}

TEST(CfgCombine, Examples)
{
    auto c = torch::full({3}, 2.0);
    auto u = torch::zeros({3});
    EXPECT_TRUE(torch::equal(cfg_combine(c, u, 1.0), c));
    EXPECT_TRUE(torch::equal(cfg_combine(c, u, 0.0), u));
    EXPECT_TRUE(torch::allclose(cfg_combine(c, u, 1.5), torch::full({3}, 3.0)));
    EXPECT_THROW(cfg_combine(c, torch::zeros({2}), 1.0), ShapeError);
}

TEST(SigmaSchedule, FourStepTimes)
{
    auto s = SigmaSchedule::four_step();
    const std::vector<double> expected{0.001, 0.134, 0.366, 0.658, 1.0};
    auto times = s.times();
    ASSERT_EQ(times.size(), expected.size());
    for (size_t i = 0; i < times.size(); ++i)
        EXPECT_NEAR(times[i], expected[i], 1e-12);
}

TEST(SigmaSchedule, RejectsInvalid)
{
    EXPECT_THROW(SigmaSchedule({0.5, 0.6}), ConfigError);
    EXPECT_THROW(SigmaSchedule({0.5, 0.0}), ConfigError);
    EXPECT_THROW(SigmaSchedule({1.5, 0.5}), ConfigError);
    EXPECT_THROW(SigmaSchedule({}), ConfigError);
}

TEST(ShiftedTimes, Endpoints)
{
    auto t = shifted_times(14, 3.0);
    ASSERT_EQ(t.size(), 15u);
    EXPECT_EQ(t.front(), 0.0);
    EXPECT_EQ(t.back(), 1.0);
    for (size_t i = 1; i < t.size(); ++i)
        EXPECT_GT(t[i], t[i - 1]);
}

TEST(EulerIntegrate, ConstantFieldExact)
{
    Rng rng(12);
    auto eps = randn(rng, {6});
    auto c = randn(rng, {6});
    for (int steps : {1, 3, 17}) {
        std::vector<double> times;
        for (int k = 0; k <= steps; ++k)
            times.push_back(static_cast<double>(k) / steps);
        auto out = euler_integrate({eps, 0.0}, [&](const torch::Tensor&, double) { return c; }, times);
        EXPECT_LT((out - (eps + c)).abs().max().item<double>(), 1e-14);
    }
}

TEST(EulerIntegrate, StraightPathReproducesData)
{
    Rng rng(13);
    auto x0 = randn(rng, {4, 3});
    auto eps = randn(rng, {4, 3});
    auto v = velocity_target(x0, eps);
    auto times = SigmaSchedule::four_step().times();
    auto start = interpolate(x0, eps, times.front());
    auto out = euler_integrate(start, [&](const torch::Tensor&, double) { return v; }, times);
    EXPECT_LT((out - x0).abs().max().item<double>(), 1e-14);
}

TEST(EulerIntegrate, RejectsBadTimes)
{
    auto x = torch::zeros({2});
    auto f = [](const torch::Tensor& y, double) { return y; };
    const std::vector<double> decreasing{0.0, 0.6, 0.4, 1.0};
    const std::vector<double> short_of_one{0.0, 0.5};
    const std::vector<double> wrong_start{0.2, 1.0};
    EXPECT_THROW(euler_integrate({x, 0.0}, f, decreasing), DomainError);
    EXPECT_THROW(euler_integrate({x, 0.0}, f, short_of_one), DomainError);
    EXPECT_THROW(euler_integrate({x, 0.0}, f, wrong_start), DomainError);
}

TEST(EulerAdvance, PartialThenRestEqualsFull)
{
    Rng rng(14);
    auto eps = randn(rng, {3});
    auto f = [](const torch::Tensor& y, double t) { return -y * t + 1.0; };
    auto times = shifted_times(8, 2.0);
    auto full = euler_integrate({eps, 0.0}, f, times);
    std::vector<double> head(times.begin(), times.begin() + 4);
    std::vector<double> tail(times.begin() + 3, times.end());
    auto mid = euler_advance({eps, 0.0}, f, head);
    auto rest = euler_integrate({mid, tail.front()}, f, tail);
    EXPECT_TRUE(torch::equal(full, rest));
}
