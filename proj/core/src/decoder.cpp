// Copyright (C) 2026 The pixdec Authors
// SPDX-License-Identifier: Apache-2.0

#include "pixdec/decoder.hpp"

#include "pixdec/errors.hpp"

namespace pixdec {

void DecoderConfig::validate() const
{
    backbone.validate();
    adapter.validate(backbone);
}

DecoderConfig DecoderConfig::desk()
{
    return DecoderConfig{BackboneConfig::desk(), AdapterConfig{}};
}

void to_json(nlohmann::json& j, const DecoderConfig& c)
{
    j = nlohmann::json{{"backbone", c.backbone}, {"adapter", c.adapter}};
}

void from_json(const nlohmann::json& j, DecoderConfig& c)
{
    j.at("backbone").get_to(c.backbone);
    j.at("adapter").get_to(c.adapter);
}

PixelDecoderImpl::PixelDecoderImpl(DecoderConfig config, uint64_t seed) : config_(std::move(config))
{
    config_.validate();
    backbone_ = register_module("backbone", Backbone(config_.backbone, seed));
    adapter_ = register_module("adapter",
                               LatentAdapter(config_.adapter, config_.backbone.hidden_dim,
                                             config_.adapter.num_points(config_.backbone.num_blocks), seed));
}

std::shared_ptr<PixelDecoderImpl> PixelDecoderImpl::from_prior(const Backbone& prior, AdapterConfig adapter,
                                                               uint64_t seed)
{
    auto dec = std::make_shared<PixelDecoderImpl>(DecoderConfig{prior->config(), std::move(adapter)}, seed);
    copy_weights(*prior, *dec->backbone());
    return dec;
}

torch::Tensor PixelDecoderImpl::forward(const torch::Tensor& x_t, const torch::Tensor& t,
                                        const torch::Tensor& text_ids, const LatentInput* latent)
{
    return forward_full(x_t, t, text_ids, latent, false).velocity;
}

BackboneOutput PixelDecoderImpl::forward_full(const torch::Tensor& x_t, const torch::Tensor& t,
                                              const torch::Tensor& text_ids, const LatentInput* latent,
                                              bool want_features)
{
    ++forward_count_;
    if (!latent)
        return backbone_->forward_full(x_t, t, text_ids, nullptr, want_features);

    const auto p = config_.backbone.patch_size;
    if (x_t.dim() != 4 || x_t.size(2) % p != 0 || x_t.size(3) % p != 0)
        throw ShapeError("decoder: image sides must be divisible by the patch size");
    auto tokens = adapter_->project(latent->values, latent->sigma, x_t.size(2) / p, x_t.size(3) / p, latent->keep);
    InjectionHook hook;
    hook.every = config_.adapter.injection_every;
    hook.apply = [&](int64_t point, const TokenGrid& h) {
        return adapter_->inject(point, h.tokens, tokens[point], latent->sigma);
    };
    return backbone_->forward_full(x_t, t, text_ids, &hook, want_features);
}

void PixelDecoderImpl::set_backbone_trainable(bool trainable)
{
    for (auto& p : backbone_->parameters())
        p.set_requires_grad(trainable);
}

void copy_weights(const torch::nn::Module& src, torch::nn::Module& dst)
{
    torch::NoGradGuard no_grad;
    auto sp = src.named_parameters(true);
    for (auto& item : dst.named_parameters(true)) {
        const auto* v = sp.find(item.key());
        if (!v)
            throw ConfigError("copy_weights: source lacks parameter '" + item.key() + "'");
        if (v->sizes() != item.value().sizes())
            throw ShapeError("copy_weights: shape mismatch for '" + item.key() + "'");
        item.value().copy_(*v);
    }
    auto sb = src.named_buffers(true);
    for (auto& item : dst.named_buffers(true)) {
        if (const auto* v = sb.find(item.key()))
            item.value().copy_(*v);
    }
}

} // namespace pixdec
