// Copyright (C) 2026 The pixdec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Latent producers and the decode-then-upsample baseline.

#include "pixdec/rng.hpp"
#include "pixdec/types.hpp"

#include <torch/torch.h>

#include <functional>

#include "json.hpp"

namespace pixdec {

struct VaeConfig {
    int64_t in_channels = 3;
    int64_t latent_channels = 8;
    int64_t base_width = 32;
    int64_t levels = 3; // downsample factor 2^levels
    double kl_weight = 1e-4;

    int64_t downsample_factor() const { return int64_t{1} << levels; }
    void validate() const;

    bool operator==(const VaeConfig&) const = default;
};

void to_json(nlohmann::json& j, const VaeConfig& c);
void from_json(const nlohmann::json& j, VaeConfig& c);

/// Small convolutional VAE. Latents handed out by encode() are multiplied by
/// latent_scale so that the training corpus has roughly unit variance.
class VaeImpl : public torch::nn::Module {
public:
    explicit VaeImpl(VaeConfig config, uint64_t seed = 0);

    /// Posterior mean and log-variance, unscaled.
    std::pair<torch::Tensor, torch::Tensor> encode_dist(const torch::Tensor& img);

    /// Scaled posterior mean.
    torch::Tensor encode(const torch::Tensor& img);

    /// Reparameterized draw from the (unscaled) posterior using `rng` only.
    static torch::Tensor sample(const torch::Tensor& mean, const torch::Tensor& logvar, Rng& rng);

    /// KL(N(mean, exp(logvar)) || N(0, 1)), averaged over elements.
    static torch::Tensor kl(const torch::Tensor& mean, const torch::Tensor& logvar);

    /// Image in [-1, 1] from a scaled latent.
    torch::Tensor decode(const torch::Tensor& z);

    /// Decode an unscaled latent (used during training).
    torch::Tensor decode_unscaled(const torch::Tensor& z);

    double latent_scale() const { return latent_scale_.item<double>(); }
    void set_latent_scale(double s);

    EncoderSpec spec() const;
    const VaeConfig& config() const { return config_; }

private:
    void check_sides(const torch::Tensor& img) const;

    VaeConfig config_;
    torch::nn::Sequential encoder_{nullptr};
    torch::nn::Sequential decoder_{nullptr};
    torch::Tensor latent_scale_;
};
TORCH_MODULE(Vae);

/// Frozen random convolutional pyramid standing in for a representation
/// encoder. Never trained; output normalized per location over channels.
class SemanticEncoder {
public:
    SemanticEncoder(uint64_t seed, int64_t latent_channels = 8);

    torch::Tensor encode(const torch::Tensor& img) const;
    EncoderSpec spec() const;
    uint64_t seed() const { return seed_; }

private:
    uint64_t seed_;
    int64_t latent_channels_;
    mutable torch::nn::Sequential net_{nullptr};
    std::string id_hash_;
};

/// Type-erased latent producer used by training and pipelines.
struct LatentEncoder {
    std::function<torch::Tensor(const torch::Tensor&)> encode; // [B,3,H,W] -> [B,C,H/f,W/f]
    EncoderSpec spec;
};

LatentEncoder make_latent_encoder(Vae vae);
LatentEncoder make_latent_encoder(const SemanticEncoder& encoder);

struct CascadeResult {
    ImageGrid x_dec; // base resolution
    ImageGrid x_up;  // s x base resolution
};

/// Decode at base resolution, then enlarge by s with bicubic interpolation.
/// s must be 2, 4 or 8; s == 1 is accepted as the identity.
CascadeResult cascade_upsample(Vae& vae, const torch::Tensor& z, int64_t s);

/// Bicubic s x enlargement of [B,C,H,W], clamped to [-1, 1].
torch::Tensor bicubic_upsample(const torch::Tensor& img, int64_t s);

/// Box-filter s x reduction of [B,C,H,W].
torch::Tensor area_downsample(const torch::Tensor& img, int64_t s);

} // namespace pixdec
