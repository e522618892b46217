// Copyright (C) 2026 The pixdec Authors
// SPDX-License-Identifier: Apache-2.0

#include "pixdec/flowmath.hpp"

#include "pixdec/errors.hpp"

#include <cmath>
#include <sstream>

namespace pixdec::flow {

namespace {

constexpr double kScheduleTolerance = 1e-9;

void require_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what)
{
    if (a.sizes() != b.sizes()) {
        std::ostringstream os;
        os << what << ": shape mismatch " << a.sizes() << " vs " << b.sizes();
        throw ShapeError(os.str());
    }
}

void require_unit_interval(double v, const char* what)
{
    if (!(v >= 0.0 && v <= 1.0))
        throw DomainError(std::string(what) + " must lie in [0, 1], got " + std::to_string(v));
}

} // namespace

SigmaSchedule::SigmaSchedule(std::vector<double> sigmas) : sigmas_(std::move(sigmas))
{
    if (sigmas_.empty())
        throw ConfigError("sigma schedule is empty");
    if (sigmas_.front() > 1.0 + kScheduleTolerance)
        throw ConfigError("sigma schedule must start at or below 1");
    if (!(sigmas_.back() > 0.0))
        throw ConfigError("sigma schedule must end above 0");
    for (size_t i = 1; i < sigmas_.size(); ++i) {
        if (!(sigmas_[i] < sigmas_[i - 1]))
            throw ConfigError("sigma schedule must be strictly decreasing");
    }
}

SigmaSchedule SigmaSchedule::four_step()
{
    return SigmaSchedule({0.999, 0.866, 0.634, 0.342});
}

std::vector<double> SigmaSchedule::times() const
{
    std::vector<double> t;
    t.reserve(sigmas_.size() + 1);
    for (double s : sigmas_)
        t.push_back(std::max(0.0, 1.0 - s));
    t.push_back(1.0);
    return t;
}

FlowState interpolate(const torch::Tensor& x0, const torch::Tensor& eps, double t)
{
    require_same_shape(x0, eps, "interpolate");
    require_unit_interval(t, "t");
    return {t * x0 + (1.0 - t) * eps, t};
}

torch::Tensor interpolate(const torch::Tensor& x0, const torch::Tensor& eps, const torch::Tensor& t)
{
    require_same_shape(x0, eps, "interpolate");
    auto tt = expand_like(t, x0);
    return tt * x0 + (1.0 - tt) * eps;
}

torch::Tensor velocity_target(const torch::Tensor& x0, const torch::Tensor& eps)
{
    require_same_shape(x0, eps, "velocity_target");
    return x0 - eps;
}

double shift_time(double t, double shift)
{
    require_unit_interval(t, "t");
    if (!(shift >= 1.0))
        throw DomainError("time shift must be >= 1, got " + std::to_string(shift));
    return shift * t / (1.0 + (shift - 1.0) * t);
}

torch::Tensor shift_time(const torch::Tensor& t, double shift)
{
    if (!(shift >= 1.0))
        throw DomainError("time shift must be >= 1, got " + std::to_string(shift));
    return shift * t / (1.0 + (shift - 1.0) * t);
}

double unshift_time(double t_shifted, double shift)
{
    require_unit_interval(t_shifted, "t");
    if (!(shift >= 1.0))
        throw DomainError("time shift must be >= 1, got " + std::to_string(shift));
    return t_shifted / (shift - (shift - 1.0) * t_shifted);
}

SigmaNoisedLatent corrupt_latent(const LatentGrid& z, double sigma, const torch::Tensor& noise)
{
    require_same_shape(z.values, noise, "corrupt_latent");
    require_unit_interval(sigma, "sigma");
    if (sigma == 0.0)
        return {z, 0.0};
    return {{(1.0 - sigma) * z.values + sigma * noise, z.encoder}, sigma};
}

torch::Tensor corrupt_latent(const torch::Tensor& z, const torch::Tensor& sigma, const torch::Tensor& noise)
{
    require_same_shape(z, noise, "corrupt_latent");
    auto s = expand_like(sigma, z);
    return (1.0 - s) * z + s * noise;
}

double sample_training_sigma(Rng& rng, double sigma_max)
{
    if (sigma_max <= 0.0)
        return 0.0;
    return rng.uniform_scalar(0.0, sigma_max);
}

torch::Tensor sample_training_sigma(Rng& rng, int64_t n, double sigma_max)
{
    if (sigma_max <= 0.0)
        return torch::zeros({n});
    return rng.uniform({n}, 0.0, sigma_max);
}

torch::Tensor sample_training_time(Rng& rng, int64_t n, double shift)
{
    return shift_time(rng.uniform({n}), shift);
}

torch::Tensor cfg_combine(const torch::Tensor& v_cond, const torch::Tensor& v_uncond, double w)
{
    require_same_shape(v_cond, v_uncond, "cfg_combine");
    return v_uncond + w * (v_cond - v_uncond);
}

std::vector<double> shifted_times(int64_t steps, double shift)
{
    if (steps < 1)
        throw DomainError("step count must be >= 1");
    std::vector<double> t(static_cast<size_t>(steps) + 1);
    for (int64_t k = 0; k <= steps; ++k)
        t[k] = shift_time(static_cast<double>(k) / static_cast<double>(steps), shift);
    t.back() = 1.0;
    return t;
}

torch::Tensor euler_advance(const FlowState& state, const VelocityFn& velocity,
                            std::span<const double> times)
{
    if (times.empty())
        throw DomainError("euler: empty time grid");
    if (std::abs(times.front() - state.t) > kScheduleTolerance)
        throw DomainError("euler: time grid must start at the state's time");
    for (size_t k = 1; k < times.size(); ++k) {
        if (!(times[k] > times[k - 1]))
            throw DomainError("euler: time grid must be strictly increasing");
    }
    if (times.back() > 1.0 + kScheduleTolerance)
        throw DomainError("euler: time grid must end at or before 1");

    auto x = state.x_t;
    for (size_t k = 0; k + 1 < times.size(); ++k)
        x = x + (times[k + 1] - times[k]) * velocity(x, times[k]);
    return x;
}

torch::Tensor euler_integrate(const FlowState& state, const VelocityFn& velocity,
                              std::span<const double> times)
{
    if (times.empty() || std::abs(times.back() - 1.0) > kScheduleTolerance)
        throw DomainError("euler: time grid must end at t = 1");
    return euler_advance(state, velocity, times);
}

torch::Tensor expand_like(const torch::Tensor& per_sample, const torch::Tensor& like)
{
    std::vector<int64_t> shape(static_cast<size_t>(like.dim()), 1);
    shape[0] = per_sample.numel() == 1 ? 1 : like.size(0);
    return per_sample.to(like.scalar_type()).reshape(shape);
}

} // namespace pixdec::flow
