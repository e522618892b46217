// Copyright (C) 2026 The pixdec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Latent-conditioning pathway: nearest-neighbor resize onto the patch grid, a
// small convolutional residual extractor, one zero-initialized head per
// injection point, and the sigma-aware gate
//
//     g = sigmoid(W [h, l] + b - alpha * sigma),   h <- h + g * l.

#include "pixdec/backbone.hpp"

#include <torch/torch.h>

#include <vector>

#include "json.hpp"

namespace pixdec {

struct AdapterConfig {
    int64_t latent_channels = 8;
    int64_t adapter_width = 64;
    int64_t num_resblocks = 4;
    int64_t group_count = 4;
    int64_t injection_every = 2;
    int64_t sigma_embed_dim = 32;
    double gate_alpha_init = 5.0;
    double gate_bias_init = 2.0;

    void validate(const BackboneConfig& backbone) const;
    int64_t num_points(int64_t num_blocks) const { return num_blocks / injection_every; }

    bool operator==(const AdapterConfig&) const = default;
};

void to_json(nlohmann::json& j, const AdapterConfig& c);
void from_json(const nlohmann::json& j, AdapterConfig& c);

/// Nearest-neighbor resize of [B,C,h,w] onto a (grid_h, grid_w) grid.
/// Throws DomainError when the latent is larger than the grid.
torch::Tensor nearest_resize(const torch::Tensor& z, int64_t grid_h, int64_t grid_w);

class AdapterResBlockImpl : public torch::nn::Module {
public:
    AdapterResBlockImpl(int64_t width, int64_t groups);
    torch::Tensor forward(const torch::Tensor& x);

private:
    torch::nn::GroupNorm norm1_{nullptr}, norm2_{nullptr};
    torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr};
};
TORCH_MODULE(AdapterResBlock);

class LatentAdapterImpl : public torch::nn::Module {
public:
    LatentAdapterImpl(AdapterConfig config, int64_t hidden_dim, int64_t num_points, uint64_t seed = 0);

    /// Injection tokens l_i [B, grid_h*grid_w, D] for every point. `keep` [B]
    /// (optional) zeroes the tokens of dropped samples and swaps their sigma
    /// embedding for the learned null embedding.
    std::vector<torch::Tensor> project(const torch::Tensor& z_sigma, const torch::Tensor& sigma, int64_t grid_h,
                                       int64_t grid_w, const torch::Tensor& keep = {});

    /// Gate values in (0, 1), shape of h.
    torch::Tensor gate(int64_t point, const torch::Tensor& h, const torch::Tensor& l, const torch::Tensor& sigma);

    /// h + gate * l.
    torch::Tensor inject(int64_t point, const torch::Tensor& h, const torch::Tensor& l, const torch::Tensor& sigma);

    /// alpha = softplus(raw); always positive.
    torch::Tensor alpha() const;

    int64_t num_points() const { return num_points_; }
    const AdapterConfig& config() const { return config_; }

    /// Test hook: overwrite every gate bias (e.g. a large value forces g -> 1).
    void set_gate_bias(double value);

private:
    AdapterConfig config_;
    int64_t hidden_dim_;
    int64_t num_points_;
    torch::nn::Conv2d stem_{nullptr};
    torch::nn::Linear sigma_embed_{nullptr};
    torch::Tensor null_sigma_;
    std::vector<AdapterResBlock> res_;
    std::vector<torch::nn::Linear> heads_;
    std::vector<torch::nn::Linear> gates_;
    torch::Tensor alpha_raw_;
};
TORCH_MODULE(LatentAdapter);

} // namespace pixdec
