// Copyright (C) 2026 The pixdec Authors
// SPDX-License-Identifier: Apache-2.0

#include "pixdec/base_ldm.hpp"

#include "pixdec/errors.hpp"
#include "pixdec/flowmath.hpp"

namespace pixdec {

void BaseLdmConfig::validate() const
{
    backbone.validate();
    if (backbone.patch_size != 1)
        throw ConfigError("base ldm: patch_size must be 1");
    if (backbone.pixel_head_blocks != 0)
        throw ConfigError("base ldm: pixel head is not used on latents");
    if (latent_side < 1)
        throw ConfigError("base ldm: latent_side must be >= 1");
}

BaseLdmConfig BaseLdmConfig::desk(int64_t latent_channels, int64_t latent_side)
{
    BaseLdmConfig c;
    c.backbone.in_channels = latent_channels;
    c.backbone.patch_size = 1;
    c.backbone.hidden_dim = 96;
    c.backbone.num_blocks = 4;
    c.backbone.num_heads = 4;
    c.backbone.pixel_head_blocks = 0;
    c.backbone.rope_reference_side = latent_side;
    c.backbone.time_shift = 3.0;
    c.latent_side = latent_side;
    return c;
}

void to_json(nlohmann::json& j, const BaseLdmConfig& c)
{
    j = {{"backbone", c.backbone}, {"latent_side", c.latent_side}};
}

void from_json(const nlohmann::json& j, BaseLdmConfig& c)
{
    j.at("backbone").get_to(c.backbone);
    j.at("latent_side").get_to(c.latent_side);
}

BaseLdm::BaseLdm(BaseLdmConfig config, EncoderSpec encoder, uint64_t seed)
    : BaseLdm(config, std::move(encoder), Backbone(config.backbone, seed))
{
}

BaseLdm::BaseLdm(BaseLdmConfig config, EncoderSpec encoder, Backbone model)
    : config_(std::move(config)), encoder_(std::move(encoder)), model_(std::move(model))
{
    config_.validate();
    if (config_.backbone.in_channels != encoder_.latent_channels)
        throw ConfigError("base ldm: channel count differs from the encoder's latent channels");
}

std::vector<double> BaseLdm::schedule(int64_t steps_total) const
{
    return flow::shifted_times(steps_total, config_.backbone.time_shift);
}

torch::Tensor BaseLdm::velocity(const torch::Tensor& x, double t, const torch::Tensor& text,
                                const torch::Tensor& null, double guidance)
{
    auto tt = torch::full({x.size(0)}, t, x.options());
    auto v = model_->forward(x, tt, text);
    if (guidance == 1.0)
        return v;
    return flow::cfg_combine(v, model_->forward(x, tt, null), guidance);
}

PartialLatent BaseLdm::sample(const std::vector<TextCondition>& texts, int64_t steps_total, int64_t stop_at,
                              Rng& rng, double guidance)
{
    if (steps_total < 1 || stop_at < 1 || stop_at > steps_total)
        throw DomainError("sample_latent: need 1 <= M <= N (M=" + std::to_string(stop_at) +
                          ", N=" + std::to_string(steps_total) + ")");
    const auto B = static_cast<int64_t>(texts.size());
    const auto dtype = model_->parameters().front().scalar_type();
    PartialLatent start;
    start.latent = {rng.normal({B, encoder_.latent_channels, config_.latent_side, config_.latent_side}, dtype),
                    encoder_};
    start.steps_taken = 0;
    start.steps_total = steps_total;
    start.residual_sigma = 1.0;
    return resume(start, texts, stop_at, guidance);
}

PartialLatent BaseLdm::resume(const PartialLatent& from, const std::vector<TextCondition>& texts, int64_t stop_at,
                              double guidance)
{
    const auto N = from.steps_total;
    if (stop_at < from.steps_taken || stop_at < 1 || stop_at > N)
        throw DomainError("sample_latent: stop step outside [max(1, M0), N]");
    torch::NoGradGuard no_grad;
    const auto times = schedule(N);
    auto text = model_->encode_text(texts);
    auto null = model_->null_text(static_cast<int64_t>(texts.size()));

    PartialLatent out = from;
    out.steps_taken = stop_at;
    out.residual_sigma = 1.0 - times[static_cast<size_t>(stop_at)];
    if (stop_at == from.steps_taken)
        return out;
    std::span<const double> grid(times.data() + from.steps_taken, static_cast<size_t>(stop_at - from.steps_taken + 1));
    out.latent.values = flow::euler_advance(
        {from.latent.values, grid.front()},
        [&](const torch::Tensor& x, double t) { return velocity(x, t, text, null, guidance); }, grid);
    return out;
}

BaseLdmTrainResult train_base_ldm(const LatentEncoder* encoder, const Corpus& corpus, const BaseLdmConfig& ldm,
                                  const TrainConfig& config, const StepCallback& on_step)
{
    if (encoder == nullptr || !encoder->encode)
        throw ConfigError("train_base_ldm: a trained codec is required");
    ldm.validate();
    config.validate();
    if (ldm.backbone.in_channels != encoder->spec.latent_channels)
        throw ConfigError("train_base_ldm: channel count differs from the encoder's latent channels");

    // Pre-encode the whole corpus once; latents are the training data.
    std::vector<torch::Tensor> latents;
    std::vector<TextCondition> captions;
    for (const auto& s : corpus) {
        auto pairs = make_decoder_pairs(s.image.unsqueeze(0), *encoder, config.scale);
        latents.push_back(pairs.latent.squeeze(0));
        captions.push_back(s.caption);
    }
    Corpus latent_corpus;
    for (size_t i = 0; i < latents.size(); ++i)
        latent_corpus.push_back({latents[i], captions[i], corpus[i].generator_class});

    TrainConfig c = config;
    c.time_shift = ldm.backbone.time_shift;
    auto prior = train_prior(Backbone(ldm.backbone, config.seed), latent_corpus, c, on_step);
    return {prior.model, prior.ema, prior.log};
}

} // namespace pixdec
