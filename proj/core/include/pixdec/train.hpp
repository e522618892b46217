// Copyright (C) 2026 The pixdec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Training loops: codec, pixel prior and latent-conditioned decoder.

#include "pixdec/codecs.hpp"
#include "pixdec/data.hpp"
#include "pixdec/decoder.hpp"
#include "pixdec/digest.hpp"
#include "pixdec/flow_model.hpp"

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"

namespace pixdec {

struct TrainConfig {
    int64_t batch_size = 16;
    double lr = 1e-4;
    int64_t steps = 2000;
    double time_shift = 1.0;
    double sigma_max = 0.8;
    double caption_dropout = 0.1;
    double latent_dropout = 0.1;
    double ema_decay = 0.999;
    bool freeze_backbone = false;
    uint64_t seed = 0;
    double weight_decay = 0.0;
    double grad_clip = 1.0; // global norm; 0 disables
    int64_t scale = 4;      // target side / latent-source side
    std::string precision = "f32";

    /// Throws ConfigError.
    void validate() const;
    torch::ScalarType dtype() const;

    bool operator==(const TrainConfig&) const = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct LossRecord {
    int64_t step = 0;
    double loss = 0.0;
    double lr = 0.0;
    double ema_decay = 0.0;
};

struct LossLog {
    std::vector<LossRecord> records;

    void write_csv(const std::filesystem::path& path) const;
    std::string to_csv() const;
};

using StepCallback = std::function<void(const LossRecord&)>;

/// ema <- decay * ema + (1 - decay) * raw, matched by name. Throws
/// CheckpointError when the name sets differ.
void ema_update(NamedTensors& ema, const NamedTensors& raw, double decay);

/// Detached copies of a module's parameters and buffers.
NamedTensors snapshot(const torch::nn::Module& module);

/// Flow-matching loss mean |v - (x0 - eps)|^2 on a fixed batch with noise and
/// times drawn from `seed`. Used to compare models on identical inputs.
double fixed_flow_loss(FlowModel& model, const torch::Tensor& x0, const FlowCondition& cond, uint64_t seed,
                       double time_shift);

// ---------------------------------------------------------------------------

struct VaeTrainResult {
    Vae model{nullptr};
    LossLog log;
};

/// Reconstruction MSE + kl_weight * KL on images at their given resolution.
/// Sets the latent scale to the inverse standard deviation of the posterior
/// means over the corpus at the end.
VaeTrainResult train_vae(const std::vector<torch::Tensor>& images, const VaeConfig& vae_config,
                         const TrainConfig& config, const StepCallback& on_step = {});

struct PriorTrainResult {
    Backbone model{nullptr};
    NamedTensors ema;
    LossLog log;
};

/// Text-conditioned pixel flow matching with caption dropout and EMA.
PriorTrainResult train_prior(const Corpus& corpus, const BackboneConfig& backbone, const TrainConfig& config,
                             const StepCallback& on_step = {});

/// Continue training an existing prior.
PriorTrainResult train_prior(Backbone model, const Corpus& corpus, const TrainConfig& config,
                             const StepCallback& on_step = {});

struct DecoderTrainResult {
    PixelDecoder model{nullptr};
    NamedTensors ema;
    LossLog log;
};

/// Latent-conditioned flow matching. Each image is the target; the source is
/// the image area-downsampled by config.scale, then encoded.
DecoderTrainResult train_decoder(PixelDecoder model, const LatentEncoder& encoder, const Corpus& corpus,
                                 const TrainConfig& config, const StepCallback& on_step = {});

/// Source image (target / s), its latent, and the decoder condition for a
/// batch with no corruption and no dropout.
struct DecoderPairs {
    torch::Tensor target;
    torch::Tensor source;
    torch::Tensor latent;
};

DecoderPairs make_decoder_pairs(const torch::Tensor& targets, const LatentEncoder& encoder, int64_t scale);

} // namespace pixdec
