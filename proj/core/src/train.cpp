// Copyright (C) 2026 The pixdec Authors
// SPDX-License-Identifier: Apache-2.0

#include "pixdec/train.hpp"

#include "pixdec/errors.hpp"
#include "pixdec/flowmath.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace pixdec {

namespace {

void check_rate(double v, const char* name, bool allow_one)
{
    if (!(v >= 0.0 && (allow_one ? v <= 1.0 : v < 1.0)))
        throw ConfigError(std::string(name) + " must be in [0," + (allow_one ? "1]" : "1)"));
}

std::vector<torch::Tensor> trainable(torch::nn::Module& m)
{
    std::vector<torch::Tensor> out;
    for (auto& p : m.parameters())
        if (p.requires_grad())
            out.push_back(p);
    return out;
}

void check_finite(double loss, int64_t step, const char* stage)
{
    if (!std::isfinite(loss)) {
        std::ostringstream os;
        os << stage << ": non-finite loss " << loss << " at step " << step << "; aborting";
        throw DivergenceError(os.str());
    }
}

// Zero-filled grads keep the optimizer state machine identical across runs
// that differ only in which terms reach a parameter.
void optimizer_step(torch::optim::Optimizer& opt, const std::vector<torch::Tensor>& params, double clip)
{
    for (auto p : params)
        if (!p.grad().defined())
            p.mutable_grad() = torch::zeros_like(p);
    if (clip > 0.0)
        torch::nn::utils::clip_grad_norm_(params, clip);
    opt.step();
}

std::vector<TextCondition> drop_captions(const std::vector<TextCondition>& captions, const torch::Tensor& drop)
{
    std::vector<TextCondition> out = captions;
    for (size_t i = 0; i < out.size(); ++i)
        if (drop[static_cast<int64_t>(i)].item<bool>())
            out[i] = TextCondition{};
    return out;
}

} // namespace

void TrainConfig::validate() const
{
    if (batch_size < 1)
        throw ConfigError("batch_size must be >= 1");
    if (!(lr > 0.0))
        throw ConfigError("lr must be positive");
    if (steps < 0)
        throw ConfigError("steps must be >= 0");
    if (!(time_shift >= 1.0))
        throw ConfigError("time_shift must be >= 1");
    if (!(sigma_max > 0.0 && sigma_max <= 1.0))
        throw ConfigError("sigma_max must be in (0,1]");
    check_rate(caption_dropout, "caption_dropout", false);
    check_rate(latent_dropout, "latent_dropout", true);
    if (!(ema_decay >= 0.0 && ema_decay <= 1.0))
        throw ConfigError("ema_decay must be in [0,1]");
    if (weight_decay < 0.0 || grad_clip < 0.0)
        throw ConfigError("weight_decay and grad_clip must be >= 0");
    if (scale < 1)
        throw ConfigError("scale must be >= 1");
    (void)dtype();
}

torch::ScalarType TrainConfig::dtype() const
{
    if (precision == "f32")
        return torch::kFloat;
    if (precision == "f64")
        return torch::kDouble;
    throw ConfigError("precision must be f32 or f64");
}

void to_json(nlohmann::json& j, const TrainConfig& c)
{
    j = {{"batch_size", c.batch_size},         {"lr", c.lr},
         {"steps", c.steps},                   {"time_shift", c.time_shift},
         {"sigma_max", c.sigma_max},           {"caption_dropout", c.caption_dropout},
         {"latent_dropout", c.latent_dropout}, {"ema_decay", c.ema_decay},
         {"freeze_backbone", c.freeze_backbone}, {"seed", c.seed},
         {"weight_decay", c.weight_decay},     {"grad_clip", c.grad_clip},
         {"scale", c.scale},                   {"precision", c.precision}};
}

void from_json(const nlohmann::json& j, TrainConfig& c)
{
    TrainConfig d;
    c.batch_size = j.value("batch_size", d.batch_size);
    c.lr = j.value("lr", d.lr);
    c.steps = j.value("steps", d.steps);
    c.time_shift = j.value("time_shift", d.time_shift);
    c.sigma_max = j.value("sigma_max", d.sigma_max);
    c.caption_dropout = j.value("caption_dropout", d.caption_dropout);
    c.latent_dropout = j.value("latent_dropout", d.latent_dropout);
    c.ema_decay = j.value("ema_decay", d.ema_decay);
    c.freeze_backbone = j.value("freeze_backbone", d.freeze_backbone);
    c.seed = j.value("seed", d.seed);
    c.weight_decay = j.value("weight_decay", d.weight_decay);
    c.grad_clip = j.value("grad_clip", d.grad_clip);
    c.scale = j.value("scale", d.scale);
    c.precision = j.value("precision", d.precision);
}

std::string LossLog::to_csv() const
{
    std::ostringstream os;
    os.precision(10);
    os << "step,loss,lr,ema_decay\n";
    for (const auto& r : records)
        os << r.step << ',' << r.loss << ',' << r.lr << ',' << r.ema_decay << '\n';
    return os.str();
}

void LossLog::write_csv(const std::filesystem::path& path) const
{
    std::ofstream out(path);
    if (!out)
        throw std::runtime_error("cannot write " + path.string());
    out << to_csv();
}

void ema_update(NamedTensors& ema, const NamedTensors& raw, double decay)
{
    if (ema.size() != raw.size())
        throw CheckpointError("ema_update: tensor sets differ in size");
    std::map<std::string, const torch::Tensor*> by_name;
    for (const auto& [n, t] : raw)
        by_name[n] = &t;
    torch::NoGradGuard no_grad;
    for (auto& [n, e] : ema) {
        auto it = by_name.find(n);
        if (it == by_name.end())
            throw CheckpointError("ema_update: no raw tensor named '" + n + "'");
        if (!e.is_floating_point())
            continue;
        if (decay == 0.0)
            e.copy_(*it->second);
        else if (decay != 1.0)
            e.mul_(decay).add_(*it->second, 1.0 - decay);
    }
}

NamedTensors snapshot(const torch::nn::Module& module)
{
    NamedTensors out = module_tensors(module);
    for (auto& [n, t] : out)
        t = t.detach().clone();
    return out;
}

double fixed_flow_loss(FlowModel& model, const torch::Tensor& x0, const FlowCondition& cond, uint64_t seed,
                       double time_shift)
{
    torch::NoGradGuard no_grad;
    Rng rng(mix_seed(seed, "fixed_flow_loss"));
    auto t = flow::sample_training_time(rng, x0.size(0), time_shift).to(x0.scalar_type());
    auto eps = rng.normal(x0.sizes(), x0.scalar_type());
    auto x_t = flow::interpolate(x0, eps, t);
    auto v = model.velocity(x_t, t, cond);
    return torch::mse_loss(v, flow::velocity_target(x0, eps)).item<double>();
}

// ---------------------------------------------------------------------------

VaeTrainResult train_vae(const std::vector<torch::Tensor>& images, const VaeConfig& vae_config,
                         const TrainConfig& config, const StepCallback& on_step)
{
    config.validate();
    vae_config.validate();
    if (images.empty())
        throw ConfigError("train_vae: no images");
    const auto dtype = config.dtype();
    auto all = torch::stack(images).to(dtype);

    VaeTrainResult result;
    result.model = Vae(vae_config, config.seed);
    result.model->to(dtype);
    Rng rng(mix_seed(config.seed, "train_vae"));
    auto params = trainable(*result.model);
    torch::optim::AdamW opt(params, torch::optim::AdamWOptions(config.lr).weight_decay(config.weight_decay));

    for (int64_t step = 0; step < config.steps; ++step) {
        auto idx = rng.randint(all.size(0), {config.batch_size});
        auto x = all.index_select(0, idx);
        auto [mean, logvar] = result.model->encode_dist(x);
        auto z = VaeImpl::sample(mean, logvar, rng);
        auto recon = result.model->decode_unscaled(z);
        auto loss = torch::mse_loss(recon, x) + vae_config.kl_weight * VaeImpl::kl(mean, logvar);
        const double value = loss.item<double>();
        check_finite(value, step, "train_vae");
        opt.zero_grad();
        loss.backward();
        optimizer_step(opt, params, config.grad_clip);
        LossRecord rec{step, value, config.lr, 0.0};
        result.log.records.push_back(rec);
        if (on_step)
            on_step(rec);
    }

    torch::NoGradGuard no_grad;
    std::vector<torch::Tensor> means;
    for (int64_t i = 0; i < all.size(0); i += 64)
        means.push_back(result.model->encode_dist(all.slice(0, i, std::min(all.size(0), i + 64))).first);
    const double sd = torch::cat(means).std().item<double>();
    result.model->set_latent_scale(sd > 0.0 ? 1.0 / sd : 1.0);
    return result;
}

PriorTrainResult train_prior(const Corpus& corpus, const BackboneConfig& backbone, const TrainConfig& config,
                             const StepCallback& on_step)
{
    return train_prior(Backbone(backbone, config.seed), corpus, config, on_step);
}

PriorTrainResult train_prior(Backbone model, const Corpus& corpus, const TrainConfig& config,
                             const StepCallback& on_step)
{
    config.validate();
    const auto dtype = config.dtype();
    model->to(dtype);
    model->train();

    PriorTrainResult result;
    result.model = model;
    result.ema = snapshot(*model);
    BatchSampler sampler(corpus, Rng(mix_seed(config.seed, "prior_batches")));
    Rng noise(mix_seed(config.seed, "prior_noise"));
    Rng dropout(mix_seed(config.seed, "prior_dropout"));
    auto params = trainable(*model);
    torch::optim::AdamW opt(params, torch::optim::AdamWOptions(config.lr).weight_decay(config.weight_decay));

    for (int64_t step = 0; step < config.steps; ++step) {
        auto batch = sampler.next(config.batch_size);
        auto x0 = batch.images.to(dtype);
        const auto B = x0.size(0);
        auto drop = dropout.bernoulli({B}, config.caption_dropout).to(torch::kBool);
        auto text = model->encode_text(drop_captions(batch.captions, drop));
        auto t = flow::sample_training_time(noise, B, config.time_shift).to(dtype);
        auto eps = noise.normal(x0.sizes(), dtype);
        auto x_t = flow::interpolate(x0, eps, t);

        auto v = model->forward(x_t, t, text);
        auto loss = torch::mse_loss(v, flow::velocity_target(x0, eps));
        const double value = loss.item<double>();
        check_finite(value, step, "train_prior");
        opt.zero_grad();
        loss.backward();
        optimizer_step(opt, params, config.grad_clip);
        ema_update(result.ema, module_tensors(*model), config.ema_decay);

        LossRecord rec{step, value, config.lr, config.ema_decay};
        result.log.records.push_back(rec);
        if (on_step)
            on_step(rec);
    }
    return result;
}

DecoderPairs make_decoder_pairs(const torch::Tensor& targets, const LatentEncoder& encoder, int64_t scale)
{
    const auto H = targets.size(2), W = targets.size(3);
    if (scale < 1 || H % scale != 0 || W % scale != 0)
        throw ConfigError("target sides " + std::to_string(H) + "x" + std::to_string(W) +
                          " are not divisible by scale " + std::to_string(scale));
    const auto f = encoder.spec.downsample_factor;
    if ((H / scale) % f != 0 || (W / scale) % f != 0)
        throw ConfigError("source sides are not divisible by the encoder factor " + std::to_string(f));
    DecoderPairs p;
    p.target = targets;
    p.source = scale == 1 ? targets : area_downsample(targets, scale);
    torch::NoGradGuard no_grad;
    p.latent = encoder.encode(p.source.to(torch::kFloat)).to(targets.scalar_type());
    return p;
}

DecoderTrainResult train_decoder(PixelDecoder model, const LatentEncoder& encoder, const Corpus& corpus,
                                 const TrainConfig& config, const StepCallback& on_step)
{
    config.validate();
    const auto dtype = config.dtype();
    model->to(dtype);
    model->train();
    model->set_backbone_trainable(!config.freeze_backbone);

    DecoderTrainResult result;
    result.model = model;
    result.ema = snapshot(*model);
    BatchSampler sampler(corpus, Rng(mix_seed(config.seed, "decoder_batches")));
    Rng noise(mix_seed(config.seed, "decoder_noise"));
    Rng dropout(mix_seed(config.seed, "decoder_dropout"));
    auto params = trainable(*model);
    torch::optim::AdamW opt(params, torch::optim::AdamWOptions(config.lr).weight_decay(config.weight_decay));

    for (int64_t step = 0; step < config.steps; ++step) {
        auto batch = sampler.next(config.batch_size);
        auto pairs = make_decoder_pairs(batch.images.to(dtype), encoder, config.scale);
        const auto B = pairs.target.size(0);

        auto drop_text = dropout.bernoulli({B}, config.caption_dropout).to(torch::kBool);
        auto keep = 1.0 - dropout.bernoulli({B}, config.latent_dropout).to(dtype);
        auto text = model->backbone()->encode_text(drop_captions(batch.captions, drop_text));

        auto sigma = flow::sample_training_sigma(noise, B, config.sigma_max).to(dtype);
        auto xi = noise.normal(pairs.latent.sizes(), dtype);
        auto t = flow::sample_training_time(noise, B, config.time_shift).to(dtype);
        auto eps = noise.normal(pairs.target.sizes(), dtype);

        // Dropped latents are presented as pure noise level with no injection.
        sigma = keep * sigma + (1.0 - keep);
        LatentInput latent{flow::corrupt_latent(pairs.latent, sigma, xi), sigma, keep};
        auto x_t = flow::interpolate(pairs.target, eps, t);

        auto v = model->forward(x_t, t, text, &latent);
        auto loss = torch::mse_loss(v, flow::velocity_target(pairs.target, eps));
        const double value = loss.item<double>();
        check_finite(value, step, "train_decoder");
        opt.zero_grad();
        loss.backward();
        optimizer_step(opt, params, config.grad_clip);
        ema_update(result.ema, module_tensors(*model), config.ema_decay);

        LossRecord rec{step, value, config.lr, config.ema_decay};
        result.log.records.push_back(rec);
        if (on_step)
            on_step(rec);
    }
    return result;
}

} // namespace pixdec
