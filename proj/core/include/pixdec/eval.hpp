// Copyright (C) 2026 The pixdec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Reference metrics and statistical oracles.

#include "pixdec/rng.hpp"

#include <torch/torch.h>

#include <utility>
#include <vector>

namespace pixdec::eval {

inline constexpr double kPsnrCap = 99.0;

/// 10 log10(range^2 / MSE) over all elements; identical inputs return kPsnrCap.
double psnr(const torch::Tensor& a, const torch::Tensor& b, double data_range = 2.0);

/// Per-sample PSNR for [B, ...] batches.
std::vector<double> psnr_per_sample(const torch::Tensor& a, const torch::Tensor& b, double data_range = 2.0);

/// Windowed structural similarity: 7x7 uniform window over the valid region,
/// k1 = 0.01, k2 = 0.03, sample covariance, averaged over channels and batch.
/// Accepts [C,H,W] or [B,C,H,W].
double ssim(const torch::Tensor& a, const torch::Tensor& b, double data_range = 2.0);

enum class Statistic { U, V };

/// 2E|A-B| - E|A-A'| - E|B-B'| for sample sets [n, d] and [m, d]. The U form
/// drops self-pairs from the within-set means; the V form keeps them.
double energy_distance(const torch::Tensor& a, const torch::Tensor& b, Statistic stat = Statistic::U);

/// E[x0 - eps | x_t] for x0 ~ N(mu, var) elementwise and x_t = t x0 + (1-t) eps.
torch::Tensor gaussian_flow_oracle(double mu, double var, double t, const torch::Tensor& x_t);
torch::Tensor gaussian_flow_oracle(double mu, double var, const torch::Tensor& t, const torch::Tensor& x_t);

/// One-sample Kolmogorov-Smirnov test against U(lo, hi). Returns (D, p-value).
std::pair<double, double> ks_uniform(const torch::Tensor& samples, double lo, double hi);

/// Pearson chi-square goodness of fit against equal expected counts; p-value.
double chi_square_uniform_pvalue(const std::vector<int64_t>& counts);

struct BootstrapInterval {
    double mean = 0.0;
    double lo = 0.0;
    double hi = 0.0;
};

/// Percentile bootstrap interval for the mean.
BootstrapInterval bootstrap_mean(const std::vector<double>& values, double level, int64_t resamples, Rng& rng);

} // namespace pixdec::eval
