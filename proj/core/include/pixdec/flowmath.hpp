// Copyright (C) 2026 The pixdec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Rectified-flow schedule and interpolation math.
//
// Convention: x_t = t * x0 + (1 - t) * eps, so t = 1 is clean data and t = 0
// is pure noise. Noise level and time share one axis via sigma = 1 - t.

#include "pixdec/rng.hpp"
#include "pixdec/types.hpp"

#include <torch/torch.h>

#include <functional>
#include <span>
#include <vector>

namespace pixdec::flow {

struct FlowState {
    torch::Tensor x_t;
    double t = 0.0;
};

/// Strictly decreasing noise levels in (0, 1] at which a few-step sampler
/// evaluates its model. The last step integrates to t = 1.
class SigmaSchedule {
public:
    explicit SigmaSchedule(std::vector<double> sigmas);

    /// {0.999, 0.866, 0.634, 0.342}: the four-step student schedule.
    static SigmaSchedule four_step();

    const std::vector<double>& sigmas() const { return sigmas_; }
    size_t size() const { return sigmas_.size(); }

    /// Integration grid: 1 - sigma_k for every entry, then 1.
    std::vector<double> times() const;

    bool operator==(const SigmaSchedule&) const = default;

private:
    std::vector<double> sigmas_;
};

FlowState interpolate(const torch::Tensor& x0, const torch::Tensor& eps, double t);

/// Per-sample times; `t` has shape [B] and broadcasts over the trailing dims.
torch::Tensor interpolate(const torch::Tensor& x0, const torch::Tensor& eps, const torch::Tensor& t);

torch::Tensor velocity_target(const torch::Tensor& x0, const torch::Tensor& eps);

/// Resolution shift s*t / (1 + (s-1)*t). Requires shift >= 1.
double shift_time(double t, double shift);
torch::Tensor shift_time(const torch::Tensor& t, double shift);

/// Inverse of shift_time.
double unshift_time(double t_shifted, double shift);

/// (1 - sigma) * z + sigma * noise. sigma == 0 returns z unchanged.
SigmaNoisedLatent corrupt_latent(const LatentGrid& z, double sigma, const torch::Tensor& noise);
torch::Tensor corrupt_latent(const torch::Tensor& z, const torch::Tensor& sigma, const torch::Tensor& noise);

/// sigma ~ U(0, sigma_max).
double sample_training_sigma(Rng& rng, double sigma_max);
torch::Tensor sample_training_sigma(Rng& rng, int64_t n, double sigma_max);

/// t ~ U(0, 1) passed through shift_time.
torch::Tensor sample_training_time(Rng& rng, int64_t n, double shift);

/// v_uncond + w * (v_cond - v_uncond).
torch::Tensor cfg_combine(const torch::Tensor& v_cond, const torch::Tensor& v_uncond, double w);

/// N + 1 grid points shift_time(k / N, shift), k = 0..N; first is 0, last is 1.
std::vector<double> shifted_times(int64_t steps, double shift);

using VelocityFn = std::function<torch::Tensor(const torch::Tensor& x, double t)>;

/// Explicit Euler from state.t along `times` (strictly increasing, starting at
/// state.t, ending at 1).
torch::Tensor euler_integrate(const FlowState& state, const VelocityFn& velocity,
                              std::span<const double> times);

/// Same update without the end-at-1 requirement; used for partial trajectories.
torch::Tensor euler_advance(const FlowState& state, const VelocityFn& velocity,
                            std::span<const double> times);

/// Reshape [B] to [B,1,...] so it broadcasts against `like`.
torch::Tensor expand_like(const torch::Tensor& per_sample, const torch::Tensor& like);

} // namespace pixdec::flow
