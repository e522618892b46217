// Copyright (C) 2026 The pixdec Authors
// SPDX-License-Identifier: Apache-2.0

#include "pixdec/adapter.hpp"

#include "nn_util.hpp"
#include "pixdec/errors.hpp"
#include "pixdec/rng.hpp"

#include <cmath>

namespace pixdec {

namespace F = torch::nn::functional;

void AdapterConfig::validate(const BackboneConfig& backbone) const
{
    if (latent_channels < 1 || adapter_width < 1 || num_resblocks < 0 || sigma_embed_dim < 2)
        throw ConfigError("adapter: sizes must be positive");
    if (group_count < 1 || adapter_width % group_count != 0)
        throw ConfigError("adapter: adapter_width must be divisible by group_count");
    if (injection_every < 1)
        throw ConfigError("adapter: injection_every must be >= 1");
    if (backbone.num_blocks % injection_every != 0)
        throw ConfigError("adapter: num_blocks must be a multiple of injection_every");
    if (!(gate_alpha_init > 0.0))
        throw ConfigError("adapter: gate alpha must be positive");
}

void to_json(nlohmann::json& j, const AdapterConfig& c)
{
    j = nlohmann::json{{"latent_channels", c.latent_channels}, {"adapter_width", c.adapter_width},
                       {"num_resblocks", c.num_resblocks},     {"group_count", c.group_count},
                       {"injection_every", c.injection_every}, {"sigma_embed_dim", c.sigma_embed_dim},
                       {"gate_alpha_init", c.gate_alpha_init}, {"gate_bias_init", c.gate_bias_init}};
}

void from_json(const nlohmann::json& j, AdapterConfig& c)
{
    j.at("latent_channels").get_to(c.latent_channels);
    j.at("adapter_width").get_to(c.adapter_width);
    j.at("num_resblocks").get_to(c.num_resblocks);
    j.at("group_count").get_to(c.group_count);
    j.at("injection_every").get_to(c.injection_every);
    j.at("sigma_embed_dim").get_to(c.sigma_embed_dim);
    j.at("gate_alpha_init").get_to(c.gate_alpha_init);
    j.at("gate_bias_init").get_to(c.gate_bias_init);
}

torch::Tensor nearest_resize(const torch::Tensor& z, int64_t grid_h, int64_t grid_w)
{
    if (z.dim() != 4)
        throw ShapeError("nearest_resize: expected [B,C,h,w]");
    if (z.size(2) > grid_h || z.size(3) > grid_w)
        throw DomainError("latent " + std::to_string(z.size(2)) + "x" + std::to_string(z.size(3)) +
                          " is larger than the token grid " + std::to_string(grid_h) + "x" +
                          std::to_string(grid_w));
    if (z.size(2) == grid_h && z.size(3) == grid_w)
        return z;
    return F::interpolate(z, F::InterpolateFuncOptions()
                                 .size(std::vector<int64_t>{grid_h, grid_w})
                                 .mode(torch::kNearest));
}

AdapterResBlockImpl::AdapterResBlockImpl(int64_t width, int64_t groups)
{
    norm1_ = register_module("norm1", torch::nn::GroupNorm(groups, width));
    conv1_ = register_module("conv1", torch::nn::Conv2d(torch::nn::Conv2dOptions(width, width, 3).padding(1)));
    norm2_ = register_module("norm2", torch::nn::GroupNorm(groups, width));
    conv2_ = register_module("conv2", torch::nn::Conv2d(torch::nn::Conv2dOptions(width, width, 3).padding(1)));
}

torch::Tensor AdapterResBlockImpl::forward(const torch::Tensor& x)
{
    auto h = conv1_(torch::silu(norm1_(x)));
    h = conv2_(torch::silu(norm2_(h)));
    return x + h;
}

LatentAdapterImpl::LatentAdapterImpl(AdapterConfig config, int64_t hidden_dim, int64_t num_points, uint64_t seed)
    : config_(std::move(config)), hidden_dim_(hidden_dim), num_points_(num_points)
{
    const auto W = config_.adapter_width;
    stem_ = register_module(
        "stem", torch::nn::Conv2d(torch::nn::Conv2dOptions(config_.latent_channels, W, 3).padding(1)));
    sigma_embed_ = register_module("sigma_embed", torch::nn::Linear(config_.sigma_embed_dim, W));
    null_sigma_ = register_parameter("null_sigma", torch::zeros({W}));
    for (int64_t k = 0; k < config_.num_resblocks; ++k)
        res_.push_back(register_module("res" + std::to_string(k), AdapterResBlock(W, config_.group_count)));
    for (int64_t i = 0; i < num_points_; ++i) {
        heads_.push_back(register_module("head" + std::to_string(i), torch::nn::Linear(W, hidden_dim)));
        gates_.push_back(register_module("gate" + std::to_string(i), torch::nn::Linear(2 * hidden_dim, hidden_dim)));
    }
    // Stored unconstrained; alpha() applies softplus.
    alpha_raw_ = register_parameter("alpha",
                                    torch::full({1}, std::log(std::expm1(config_.gate_alpha_init)), torch::kFloat));

    Rng rng(mix_seed(seed, "adapter"));
    detail::init_module(*this, rng);
    torch::NoGradGuard no_grad;
    for (auto& h : heads_)
        detail::zero_linear(h);
    for (auto& g : gates_) {
        g->weight.zero_();
        g->bias.fill_(config_.gate_bias_init);
    }
}

std::vector<torch::Tensor> LatentAdapterImpl::project(const torch::Tensor& z_sigma, const torch::Tensor& sigma,
                                                      int64_t grid_h, int64_t grid_w, const torch::Tensor& keep)
{
    if (z_sigma.dim() != 4 || z_sigma.size(1) != config_.latent_channels)
        throw ShapeError("adapter: expected latent [B," + std::to_string(config_.latent_channels) + ",h,w]");
    const auto B = z_sigma.size(0);
    if (sigma.numel() != B)
        throw ShapeError("adapter: one sigma per sample expected");

    auto x = stem_(nearest_resize(z_sigma, grid_h, grid_w));
    const auto dtype = x.scalar_type();
    auto s = sigma.to(dtype).reshape({B});
    auto emb = sigma_embed_(sinusoidal_embedding(s * 1000.0, config_.sigma_embed_dim));
    torch::Tensor keep_mask;
    if (keep.defined()) {
        keep_mask = keep.to(dtype).reshape({B, 1});
        emb = keep_mask * emb + (1.0 - keep_mask) * null_sigma_.unsqueeze(0);
    }
    x = x + emb.unsqueeze(-1).unsqueeze(-1);
    for (auto& r : res_)
        x = r->forward(x);
    auto feats = x.flatten(2).transpose(1, 2); // [B, N, W]

    std::vector<torch::Tensor> tokens;
    tokens.reserve(heads_.size());
    for (auto& head : heads_) {
        auto l = head(feats);
        if (keep_mask.defined())
            l = l * keep_mask.unsqueeze(-1);
        tokens.push_back(l);
    }
    return tokens;
}

torch::Tensor LatentAdapterImpl::gate(int64_t point, const torch::Tensor& h, const torch::Tensor& l,
                                      const torch::Tensor& sigma)
{
    if (point < 0 || point >= num_points_)
        throw DomainError("adapter: injection point out of range");
    if (h.sizes() != l.sizes())
        throw ShapeError("adapter: hidden and injection tokens differ in shape");
    if (sigma.numel() != h.size(0))
        throw ShapeError("adapter: one sigma per sample expected");
    if (sigma.numel() > 0 && (sigma.min().item<double>() < 0.0 || sigma.max().item<double>() > 1.0))
        throw DomainError("adapter: sigma must lie in [0, 1]");
    auto s = sigma.to(h.scalar_type()).reshape({-1, 1, 1});
    return torch::sigmoid(gates_[point](torch::cat({h, l}, -1)) - alpha() * s);
}

torch::Tensor LatentAdapterImpl::inject(int64_t point, const torch::Tensor& h, const torch::Tensor& l,
                                        const torch::Tensor& sigma)
{
    return h + gate(point, h, l, sigma) * l;
}

torch::Tensor LatentAdapterImpl::alpha() const
{
    return torch::softplus(alpha_raw_);
}

void LatentAdapterImpl::set_gate_bias(double value)
{
    torch::NoGradGuard no_grad;
    for (auto& g : gates_)
        g->bias.fill_(value);
}

} // namespace pixdec
