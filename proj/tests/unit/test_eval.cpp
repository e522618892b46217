// Copyright (C) 2026 The pixdec Authors
// SPDX-License-Identifier: Apache-2.0

#include "pixdec/errors.hpp"
#include "pixdec/eval.hpp"
#include "pixdec/rng.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace pixdec;
using namespace pixdec::eval;

namespace {

// Analytic image pair shared with the reference computation.
std::pair<torch::Tensor, torch::Tensor> wave_pair()
{
    auto h = torch::arange(20, torch::kDouble).view({1, 20, 1});
    auto w = torch::arange(24, torch::kDouble).view({1, 1, 24});
    auto c = torch::arange(3, torch::kDouble).view({3, 1, 1});
    auto a = torch::sin(0.3 * h + 0.7 * w + c);
    auto b = (a + 0.2 * torch::cos(1.1 * h - 0.4 * w + 2 * c)).clamp(-1, 1);
    return {a, b};
}

std::pair<torch::Tensor, torch::Tensor> point_sets()
{
    auto i = torch::arange(40, torch::kDouble);
    auto x = torch::stack({torch::sin(i), torch::cos(2 * i)}, 1);
    auto y = torch::stack({torch::sin(i + 0.5) + 0.3, torch::cos(3 * i)}, 1).slice(0, 0, 30);
    return {x, y};
}

} // namespace

TEST(Psnr, KnownValueAndCap)
{
    auto a = torch::zeros({1, 3, 4, 4});
    auto b = torch::full({1, 3, 4, 4}, 0.2);
    // mse 0.04, range 2: 10 log10(4 / 0.04) = 20
    EXPECT_NEAR(psnr(a, b), 20.0, 1e-6);
    EXPECT_DOUBLE_EQ(psnr(a, a), kPsnrCap);
    EXPECT_THROW(psnr(a, torch::zeros({1, 3, 4, 5})), ShapeError);
}

TEST(Psnr, PerSample)
{
    auto a = torch::zeros({2, 1, 2, 2});
    auto b = a.clone();
    b[1].fill_(0.2);
    auto v = psnr_per_sample(a, b);
    ASSERT_EQ(v.size(), 2u);
    EXPECT_DOUBLE_EQ(v[0], kPsnrCap);
    EXPECT_NEAR(v[1], 20.0, 1e-6);
}

TEST(Ssim, MatchesReferenceImplementation)
{
    auto [a, b] = wave_pair();
    // skimage structural_similarity(win_size=7, data_range=2, channel_axis=0)
    EXPECT_NEAR(ssim(a, b), 0.951845508845, 1e-9);
    EXPECT_NEAR(ssim(a, a), 1.0, 1e-12);
    EXPECT_NEAR(ssim(a.unsqueeze(0), b.unsqueeze(0)), ssim(a, b), 1e-12);
    EXPECT_THROW(ssim(torch::zeros({3, 5, 5}), torch::zeros({3, 5, 5})), DomainError);
}

TEST(EnergyDistance, ReferenceValues)
{
    auto [x, y] = point_sets();
    EXPECT_NEAR(energy_distance(x, y, Statistic::V), 0.134862402509, 1e-8);
    EXPECT_NEAR(energy_distance(x, y, Statistic::U), 0.058279299339, 1e-8);
}

TEST(EnergyDistance, SymmetricAndZeroOnSelf)
{
    auto [x, y] = point_sets();
    EXPECT_NEAR(energy_distance(x, y), energy_distance(y, x), 1e-12);
    EXPECT_NEAR(energy_distance(x, x, Statistic::V), 0.0, 1e-12);
    EXPECT_THROW(energy_distance(x, torch::zeros({3, 3})), ShapeError);
    EXPECT_THROW(energy_distance(x.slice(0, 0, 1), y), DomainError);
}

TEST(EnergyDistance, SeparatesShiftedGaussians)
{
    Rng rng(3);
    auto a = rng.normal({500, 2}, torch::kDouble);
    auto b = rng.normal({500, 2}, torch::kDouble);
    auto c = rng.normal({500, 2}, torch::kDouble) + 1.0;
    EXPECT_LT(std::abs(energy_distance(a, b)), 0.02);
    EXPECT_GT(energy_distance(a, c), 0.3);
}

TEST(GaussianOracle, EndpointsAndMonteCarlo)
{
    auto xt = torch::linspace(-2, 2, 9, torch::kDouble);
    // t = 1: x_t is the data point, so E[x0|x_t] = x_t and E[eps|x_t] = 0
    EXPECT_TRUE(torch::allclose(gaussian_flow_oracle(0.5, 2.0, 1.0, xt), xt));
    // t = 0: x_t is pure noise, velocity = mu - x_t
    EXPECT_TRUE(torch::allclose(gaussian_flow_oracle(0.5, 2.0, 0.0, xt), 0.5 - xt));

    Rng rng(5);
    const double mu = 0.3, var = 0.5, t = 0.4;
    auto x0 = mu + std::sqrt(var) * rng.normal({200000}, torch::kDouble);
    auto eps = rng.normal({200000}, torch::kDouble);
    auto x_t = t * x0 + (1 - t) * eps;
    auto v = x0 - eps;
    // The conditional expectation is the L2-optimal linear predictor here.
    auto pred = gaussian_flow_oracle(mu, var, t, x_t);
    auto resid = v - pred;
    EXPECT_NEAR(resid.mean().item<double>(), 0.0, 0.01);
    EXPECT_NEAR((resid * x_t).mean().item<double>(), 0.0, 0.01);
    EXPECT_THROW(gaussian_flow_oracle(0, 0, 0.5, xt), DomainError);
    EXPECT_THROW(gaussian_flow_oracle(0, 1, 1.5, xt), DomainError);
}

TEST(KsUniform, ReferenceValues)
{
    auto u = torch::fmod(torch::arange(50, torch::kDouble) * 0.61803398875, 1.0).pow(1.3);
    auto [d, p] = ks_uniform(u, 0.0, 1.0);
    EXPECT_NEAR(d, 0.13457735001209706, 1e-12);
    // Reference p uses the exact small-sample distribution; ours is asymptotic.
    EXPECT_NEAR(p, 0.29811240718293675, 0.02);
}

TEST(KsUniform, DetectsWrongRange)
{
    Rng rng(1);
    auto s = rng.uniform({5000}, 0.0, 1.0, torch::kDouble);
    EXPECT_GT(ks_uniform(s, 0.0, 1.0).second, 0.01);
    EXPECT_LT(ks_uniform(s, 0.0, 1.2).second, 1e-6);
    EXPECT_THROW(ks_uniform(s, 1.0, 1.0), DomainError);
}

TEST(ChiSquare, ReferenceValue)
{
    EXPECT_NEAR(chi_square_uniform_pvalue({30, 25, 41, 28}), 0.19433286378254216, 1e-10);
    EXPECT_NEAR(chi_square_uniform_pvalue({10, 10, 10}), 1.0, 1e-12);
}

TEST(Bootstrap, IntervalCoversMean)
{
    std::vector<double> v;
    for (int i = 0; i < 100; ++i)
        v.push_back(static_cast<double>(i % 10));
    Rng rng(7);
    auto ci = bootstrap_mean(v, 0.95, 2000, rng);
    EXPECT_DOUBLE_EQ(ci.mean, 4.5);
    EXPECT_LT(ci.lo, 4.5);
    EXPECT_GT(ci.hi, 4.5);
    // standard error is about 0.287, so the 95% half width is near 0.56
    EXPECT_NEAR(ci.hi - ci.lo, 2 * 1.96 * std::sqrt(8.25 / 100), 0.15);

    Rng r1(3), r2(3);
    auto a = bootstrap_mean(v, 0.9, 500, r1);
    auto b = bootstrap_mean(v, 0.9, 500, r2);
    EXPECT_EQ(a.lo, b.lo);
    EXPECT_EQ(a.hi, b.hi);
}
