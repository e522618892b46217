// Copyright (C) 2026 The pixdec Authors
// SPDX-License-Identifier: Apache-2.0

#include "pixdec/eval.hpp"

#include "pixdec/errors.hpp"

#include <boost/math/distributions/chi_squared.hpp>

#include <algorithm>
#include <cmath>

namespace pixdec::eval {

namespace {

void require_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what)
{
    if (a.sizes() != b.sizes())
        throw ShapeError(std::string(what) + ": shape mismatch");
}

double psnr_from_mse(double mse, double range)
{
    if (mse <= 0.0)
        return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(range * range / mse));
}

// Sum over all pairs of Euclidean distances, computed in row chunks.
double pair_distance_sum(const torch::Tensor& a, const torch::Tensor& b)
{
    constexpr int64_t kChunk = 1024;
    double total = 0.0;
    for (int64_t i = 0; i < a.size(0); i += kChunk) {
        auto rows = a.slice(0, i, std::min(a.size(0), i + kChunk));
        total += torch::cdist(rows, b).sum().item<double>();
    }
    return total;
}

} // namespace

double psnr(const torch::Tensor& a, const torch::Tensor& b, double data_range)
{
    require_same_shape(a, b, "psnr");
    const double mse = (a.to(torch::kDouble) - b.to(torch::kDouble)).pow(2).mean().item<double>();
    return psnr_from_mse(mse, data_range);
}

std::vector<double> psnr_per_sample(const torch::Tensor& a, const torch::Tensor& b, double data_range)
{
    require_same_shape(a, b, "psnr");
    if (a.dim() < 2)
        throw ShapeError("psnr_per_sample: expected a batch");
    auto mse = (a.to(torch::kDouble) - b.to(torch::kDouble)).pow(2).flatten(1).mean(1);
    std::vector<double> out;
    for (int64_t i = 0; i < mse.size(0); ++i)
        out.push_back(psnr_from_mse(mse[i].item<double>(), data_range));
    return out;
}

double ssim(const torch::Tensor& a, const torch::Tensor& b, double data_range)
{
    require_same_shape(a, b, "ssim");
    constexpr int64_t win = 7;
    auto x = a.to(torch::kDouble);
    auto y = b.to(torch::kDouble);
    if (x.dim() == 3) {
        x = x.unsqueeze(0);
        y = y.unsqueeze(0);
    }
    if (x.dim() != 4)
        throw ShapeError("ssim: expected [C,H,W] or [B,C,H,W]");
    if (x.size(2) < win || x.size(3) < win)
        throw DomainError("ssim: image smaller than the 7x7 window");

    const double c1 = std::pow(0.01 * data_range, 2);
    const double c2 = std::pow(0.03 * data_range, 2);
    const double np = static_cast<double>(win * win);
    const double cov_norm = np / (np - 1.0);
    auto filt = [](const torch::Tensor& v) { return torch::avg_pool2d(v, {win, win}, {1, 1}); };

    auto ux = filt(x), uy = filt(y);
    auto vx = cov_norm * (filt(x * x) - ux * ux);
    auto vy = cov_norm * (filt(y * y) - uy * uy);
    auto vxy = cov_norm * (filt(x * y) - ux * uy);
    auto s = ((2 * ux * uy + c1) * (2 * vxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
    return s.mean().item<double>();
}

double energy_distance(const torch::Tensor& a, const torch::Tensor& b, Statistic stat)
{
    if (a.dim() != 2 || b.dim() != 2 || a.size(1) != b.size(1))
        throw ShapeError("energy_distance: expected [n,d] and [m,d] with equal d");
    const auto n = a.size(0), m = b.size(0);
    if (n == 0 || m == 0)
        throw DomainError("energy_distance: empty sample set");
    auto x = a.to(torch::kDouble), y = b.to(torch::kDouble);

    const double ab = pair_distance_sum(x, y) / static_cast<double>(n * m);
    const double aa_sum = pair_distance_sum(x, x);
    const double bb_sum = pair_distance_sum(y, y);
    double aa, bb;
    if (stat == Statistic::U) {
        if (n < 2 || m < 2)
            throw DomainError("energy_distance: U statistic needs two samples per set");
        aa = aa_sum / static_cast<double>(n * (n - 1));
        bb = bb_sum / static_cast<double>(m * (m - 1));
    } else {
        aa = aa_sum / static_cast<double>(n * n);
        bb = bb_sum / static_cast<double>(m * m);
    }
    return 2.0 * ab - aa - bb;
}

torch::Tensor gaussian_flow_oracle(double mu, double var, const torch::Tensor& t, const torch::Tensor& x_t)
{
    if (!(var > 0.0))
        throw DomainError("gaussian_flow_oracle: variance must be positive");
    auto tt = t.to(x_t.scalar_type());
    while (tt.dim() < x_t.dim())
        tt = tt.unsqueeze(-1);
    auto s2 = tt * tt * var + (1 - tt) * (1 - tt);
    return mu + (tt * var - (1 - tt)) / s2 * (x_t - tt * mu);
}

torch::Tensor gaussian_flow_oracle(double mu, double var, double t, const torch::Tensor& x_t)
{
    if (t < 0.0 || t > 1.0)
        throw DomainError("gaussian_flow_oracle: t outside [0,1]");
    return gaussian_flow_oracle(mu, var, torch::full({}, t, x_t.options()), x_t);
}

std::pair<double, double> ks_uniform(const torch::Tensor& samples, double lo, double hi)
{
    if (!(hi > lo))
        throw DomainError("ks_uniform: empty interval");
    auto u = ((samples.to(torch::kDouble).flatten() - lo) / (hi - lo)).clamp(0.0, 1.0);
    auto sorted = std::get<0>(u.sort());
    const auto n = sorted.size(0);
    if (n == 0)
        throw DomainError("ks_uniform: no samples");
    auto i = torch::arange(1, n + 1, torch::kDouble);
    const double d_plus = (i / n - sorted).max().item<double>();
    const double d_minus = (sorted - (i - 1) / n).max().item<double>();
    const double d = std::max(d_plus, d_minus);

    // Asymptotic Kolmogorov distribution with the Stephens small-sample correction.
    const double sn = std::sqrt(static_cast<double>(n));
    const double lambda = (sn + 0.12 + 0.11 / sn) * d;
    double q = 0.0;
    for (int k = 1; k <= 100; ++k) {
        const double term = std::exp(-2.0 * k * k * lambda * lambda);
        q += (k % 2 == 1 ? 2.0 : -2.0) * term;
        if (term < 1e-16)
            break;
    }
    return {d, std::clamp(q, 0.0, 1.0)};
}

double chi_square_uniform_pvalue(const std::vector<int64_t>& counts)
{
    if (counts.size() < 2)
        throw DomainError("chi_square_uniform_pvalue: need at least two cells");
    double total = 0.0;
    for (auto c : counts)
        total += static_cast<double>(c);
    if (total <= 0.0)
        throw DomainError("chi_square_uniform_pvalue: no observations");
    const double expected = total / static_cast<double>(counts.size());
    double stat = 0.0;
    for (auto c : counts)
        stat += std::pow(static_cast<double>(c) - expected, 2) / expected;
    boost::math::chi_squared dist(static_cast<double>(counts.size() - 1));
    return boost::math::cdf(boost::math::complement(dist, stat));
}

BootstrapInterval bootstrap_mean(const std::vector<double>& values, double level, int64_t resamples, Rng& rng)
{
    if (values.empty())
        throw DomainError("bootstrap_mean: no values");
    if (!(level > 0.0 && level < 1.0) || resamples < 1)
        throw DomainError("bootstrap_mean: bad level or resample count");
    auto v = torch::tensor(values, torch::kDouble);
    const auto n = v.size(0);
    auto idx = rng.randint(n, {resamples, n});
    auto means = v.index({idx}).mean(1);
    auto sorted = std::get<0>(means.sort()).contiguous();
    const double alpha = (1.0 - level) / 2.0;
    auto at = [&](double q) {
        const auto k = std::clamp<int64_t>(static_cast<int64_t>(std::floor(q * (resamples - 1))), 0, resamples - 1);
        return sorted[k].item<double>();
    };
    return {v.mean().item<double>(), at(alpha), at(1.0 - alpha)};
}

} // namespace pixdec::eval
