// Copyright (C) 2026 The pixdec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// The latent-conditioned pixel decoder: a pixel prior backbone plus the latent
// adapter, injected every `injection_every` blocks.

#include "pixdec/adapter.hpp"
#include "pixdec/backbone.hpp"

#include <torch/torch.h>

#include "json.hpp"

namespace pixdec {

struct DecoderConfig {
    BackboneConfig backbone;
    AdapterConfig adapter;

    void validate() const;
    static DecoderConfig desk();

    bool operator==(const DecoderConfig&) const = default;
};

void to_json(nlohmann::json& j, const DecoderConfig& c);
void from_json(const nlohmann::json& j, DecoderConfig& c);

/// Latent condition for a batch. `keep` [B] is optional; 0 drops the latent.
struct LatentInput {
    torch::Tensor values; // [B, C, h, w], already corrupted
    torch::Tensor sigma;  // [B]
    torch::Tensor keep;   // [B] or undefined
};

class PixelDecoderImpl : public torch::nn::Module {
public:
    explicit PixelDecoderImpl(DecoderConfig config, uint64_t seed = 0);

    /// Copies the prior's weights into the backbone; adapter stays fresh.
    static std::shared_ptr<PixelDecoderImpl> from_prior(const Backbone& prior, AdapterConfig adapter,
                                                        uint64_t seed = 0);

    /// Without a latent this is exactly the prior's forward.
    torch::Tensor forward(const torch::Tensor& x_t, const torch::Tensor& t, const torch::Tensor& text_ids,
                          const LatentInput* latent = nullptr);

    BackboneOutput forward_full(const torch::Tensor& x_t, const torch::Tensor& t, const torch::Tensor& text_ids,
                                const LatentInput* latent, bool want_features);

    Backbone& backbone() { return backbone_; }
    LatentAdapter& adapter() { return adapter_; }
    const DecoderConfig& config() const { return config_; }

    /// Freeze or unfreeze the backbone's parameters.
    void set_backbone_trainable(bool trainable);

    /// Network evaluations since construction or the last reset.
    int64_t forward_count() const { return forward_count_; }
    void reset_forward_count() { forward_count_ = 0; }

private:
    DecoderConfig config_;
    int64_t forward_count_ = 0;
    Backbone backbone_{nullptr};
    LatentAdapter adapter_{nullptr};
};
TORCH_MODULE(PixelDecoder);

/// Copy values of every same-named parameter and buffer from src to dst.
void copy_weights(const torch::nn::Module& src, torch::nn::Module& dst);

} // namespace pixdec
