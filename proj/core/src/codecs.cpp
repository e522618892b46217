// Copyright (C) 2026 The pixdec Authors
// SPDX-License-Identifier: Apache-2.0

#include "pixdec/codecs.hpp"

#include "nn_util.hpp"
#include "pixdec/digest.hpp"
#include "pixdec/errors.hpp"

namespace pixdec {

namespace F = torch::nn::functional;
namespace nn = torch::nn;

namespace {

nn::Conv2d conv(int64_t in, int64_t out, int64_t k, int64_t stride = 1)
{
    const int64_t pad = (k == 4) ? 1 : k / 2;
    return nn::Conv2d(nn::Conv2dOptions(in, out, k).stride(stride).padding(pad));
}

} // namespace

void VaeConfig::validate() const
{
    if (in_channels < 1 || latent_channels < 1 || base_width < 1 || levels < 1)
        throw ConfigError("vae: sizes must be positive");
    if (!(kl_weight >= 0.0))
        throw ConfigError("vae: kl_weight must be non-negative");
}

void to_json(nlohmann::json& j, const VaeConfig& c)
{
    j = nlohmann::json{{"in_channels", c.in_channels},
                       {"latent_channels", c.latent_channels},
                       {"base_width", c.base_width},
                       {"levels", c.levels},
                       {"kl_weight", c.kl_weight}};
}

void from_json(const nlohmann::json& j, VaeConfig& c)
{
    j.at("in_channels").get_to(c.in_channels);
    j.at("latent_channels").get_to(c.latent_channels);
    j.at("base_width").get_to(c.base_width);
    j.at("levels").get_to(c.levels);
    j.at("kl_weight").get_to(c.kl_weight);
}

VaeImpl::VaeImpl(VaeConfig config, uint64_t seed) : config_(std::move(config))
{
    config_.validate();
    const auto w0 = config_.base_width;
    auto width = [&](int64_t level) { return w0 * (level == 0 ? 1 : 2); };

    nn::Sequential enc;
    enc->push_back(conv(config_.in_channels, w0, 3));
    for (int64_t l = 0; l < config_.levels; ++l) {
        enc->push_back(nn::SiLU());
        enc->push_back(conv(width(l), width(l), 3));
        enc->push_back(nn::SiLU());
        enc->push_back(conv(width(l), width(l + 1), 4, 2));
    }
    enc->push_back(nn::SiLU());
    enc->push_back(conv(width(config_.levels), 2 * config_.latent_channels, 3));
    encoder_ = register_module("encoder", enc);

    nn::Sequential dec;
    dec->push_back(conv(config_.latent_channels, width(config_.levels), 3));
    for (int64_t l = config_.levels; l > 0; --l) {
        dec->push_back(nn::SiLU());
        dec->push_back(nn::Upsample(nn::UpsampleOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest)));
        dec->push_back(conv(width(l), width(l - 1), 3));
        dec->push_back(nn::SiLU());
        dec->push_back(conv(width(l - 1), width(l - 1), 3));
    }
    dec->push_back(nn::SiLU());
    dec->push_back(conv(w0, config_.in_channels, 3));
    decoder_ = register_module("decoder", dec);

    latent_scale_ = register_buffer("latent_scale", torch::ones({1}, torch::kDouble));

    Rng rng(mix_seed(seed, "vae"));
    detail::init_module(*this, rng);
}

void VaeImpl::check_sides(const torch::Tensor& img) const
{
    const auto f = config_.downsample_factor();
    if (img.dim() != 4 || img.size(1) != config_.in_channels)
        throw ShapeError("vae: expected [B," + std::to_string(config_.in_channels) + ",H,W]");
    if (img.size(2) % f != 0 || img.size(3) % f != 0)
        throw ShapeError("vae: image sides must be divisible by " + std::to_string(f));
}

std::pair<torch::Tensor, torch::Tensor> VaeImpl::encode_dist(const torch::Tensor& img)
{
    check_sides(img);
    auto h = encoder_->forward(img).chunk(2, 1);
    return {h[0], torch::clamp(h[1], -20.0, 10.0)};
}

torch::Tensor VaeImpl::encode(const torch::Tensor& img)
{
    return encode_dist(img).first * latent_scale();
}

torch::Tensor VaeImpl::sample(const torch::Tensor& mean, const torch::Tensor& logvar, Rng& rng)
{
    auto eps = rng.normal(mean.sizes(), mean.scalar_type());
    return mean + torch::exp(0.5 * logvar) * eps;
}

torch::Tensor VaeImpl::kl(const torch::Tensor& mean, const torch::Tensor& logvar)
{
    return 0.5 * (mean.pow(2) + torch::exp(logvar) - 1.0 - logvar).mean();
}

torch::Tensor VaeImpl::decode(const torch::Tensor& z)
{
    return decode_unscaled(z / latent_scale());
}

torch::Tensor VaeImpl::decode_unscaled(const torch::Tensor& z)
{
    if (z.dim() != 4 || z.size(1) != config_.latent_channels)
        throw ShapeError("vae: expected latent [B," + std::to_string(config_.latent_channels) + ",h,w]");
    return torch::tanh(decoder_->forward(z));
}

void VaeImpl::set_latent_scale(double s)
{
    torch::NoGradGuard no_grad;
    latent_scale_.fill_(s);
}

EncoderSpec VaeImpl::spec() const
{
    return EncoderSpec{EncoderKind::Vae, config_.downsample_factor(), config_.latent_channels,
                       digest_tensors(module_tensors(*this)), latent_scale()};
}

// ---------------------------------------------------------------------------

SemanticEncoder::SemanticEncoder(uint64_t seed, int64_t latent_channels)
    : seed_(seed), latent_channels_(latent_channels)
{
    net_ = nn::Sequential(conv(3, 32, 3), nn::GELU(), conv(32, 32, 4, 2), nn::GELU(), conv(32, 64, 4, 2), nn::GELU(),
                          conv(64, latent_channels, 3),
                          // patch pooling to the final factor of 8
                          nn::AvgPool2d(nn::AvgPool2dOptions(2).stride(2)));
    Rng rng(mix_seed(seed, "semantic"));
    detail::init_module(*net_, rng);
    for (auto& p : net_->parameters())
        p.set_requires_grad(false);
    id_hash_ = digest_tensors(module_tensors(*net_));
}

torch::Tensor SemanticEncoder::encode(const torch::Tensor& img) const
{
    if (img.dim() != 4 || img.size(1) != 3)
        throw ShapeError("semantic encoder: expected [B,3,H,W]");
    if (img.size(2) % 8 != 0 || img.size(3) % 8 != 0)
        throw ShapeError("semantic encoder: image sides must be divisible by 8");
    torch::NoGradGuard no_grad;
    auto h = net_->forward(img.to(torch::kFloat));
    auto mu = h.mean(1, true);
    auto sd = (h - mu).pow(2).mean(1, true).add(1e-6).sqrt();
    return (h - mu) / sd;
}

EncoderSpec SemanticEncoder::spec() const
{
    return EncoderSpec{EncoderKind::Semantic, 8, latent_channels_, id_hash_, 1.0};
}

// ---------------------------------------------------------------------------

torch::Tensor bicubic_upsample(const torch::Tensor& img, int64_t s)
{
    if (s == 1)
        return img;
    return F::interpolate(img, F::InterpolateFuncOptions()
                                   .size(std::vector<int64_t>{img.size(2) * s, img.size(3) * s})
                                   .mode(torch::kBicubic)
                                   .align_corners(false))
        .clamp(-1.0, 1.0);
}

torch::Tensor area_downsample(const torch::Tensor& img, int64_t s)
{
    if (s == 1)
        return img;
    if (img.size(2) % s != 0 || img.size(3) % s != 0)
        throw ShapeError("area_downsample: sides not divisible by " + std::to_string(s));
    return F::avg_pool2d(img, F::AvgPool2dFuncOptions(s).stride(s));
}

LatentEncoder make_latent_encoder(Vae vae)
{
    auto spec = vae->spec();
    return {[vae](const torch::Tensor& img) mutable {
                torch::NoGradGuard no_grad;
                return vae->encode(img);
            },
            spec};
}

LatentEncoder make_latent_encoder(const SemanticEncoder& encoder)
{
    return {[encoder](const torch::Tensor& img) { return encoder.encode(img); }, encoder.spec()};
}

CascadeResult cascade_upsample(Vae& vae, const torch::Tensor& z, int64_t s)
{
    if (s != 1 && s != 2 && s != 4 && s != 8)
        throw DomainError("cascade: scale must be 2, 4 or 8 (got " + std::to_string(s) + ")");
    torch::NoGradGuard no_grad;
    auto x_dec = vae->decode(z);
    return {x_dec, s == 1 ? x_dec : bicubic_upsample(x_dec, s)};
}

} // namespace pixdec
