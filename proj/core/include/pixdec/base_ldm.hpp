// Copyright (C) 2026 The pixdec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// A small text-conditioned flow model over codec latents. It exists to hand
// fully or partially denoised latents to the pixel decoder.

#include "pixdec/backbone.hpp"
#include "pixdec/codecs.hpp"
#include "pixdec/data.hpp"
#include "pixdec/rng.hpp"
#include "pixdec/train.hpp"

#include <vector>

#include "json.hpp"

namespace pixdec {

struct BaseLdmConfig {
    BackboneConfig backbone;
    int64_t latent_side = 2; // latent grid side produced for sampling

    void validate() const;
    /// Patch-1 trunk, width 96, four blocks, no pixel head, time shift 3.
    static BaseLdmConfig desk(int64_t latent_channels = 8, int64_t latent_side = 2);

    bool operator==(const BaseLdmConfig&) const = default;
};

void to_json(nlohmann::json& j, const BaseLdmConfig& c);
void from_json(const nlohmann::json& j, BaseLdmConfig& c);

/// State after M of N sampling steps. residual_sigma = 1 - t_M.
struct PartialLatent {
    LatentGrid latent;
    int64_t steps_taken = 0;
    int64_t steps_total = 0;
    double residual_sigma = 1.0;
};

class BaseLdm {
public:
    BaseLdm(BaseLdmConfig config, EncoderSpec encoder, uint64_t seed = 0);
    BaseLdm(BaseLdmConfig config, EncoderSpec encoder, Backbone model);

    Backbone& model() { return model_; }
    const BaseLdmConfig& config() const { return config_; }
    const EncoderSpec& encoder() const { return encoder_; }

    /// Sampling grid t_k = shift_time(k / N, shift), k = 0..N.
    std::vector<double> schedule(int64_t steps_total) const;

    /// Euler through the first M of N steps from fresh noise. Throws
    /// DomainError unless 1 <= M <= N.
    PartialLatent sample(const std::vector<TextCondition>& texts, int64_t steps_total, int64_t stop_at, Rng& rng,
                         double guidance = 1.0);

    /// Continue a partial trajectory to step `stop_at` of the same schedule.
    PartialLatent resume(const PartialLatent& from, const std::vector<TextCondition>& texts, int64_t stop_at,
                         double guidance = 1.0);

private:
    torch::Tensor velocity(const torch::Tensor& x, double t, const torch::Tensor& text, const torch::Tensor& null,
                           double guidance);

    BaseLdmConfig config_;
    EncoderSpec encoder_;
    Backbone model_{nullptr};
};

struct BaseLdmTrainResult {
    Backbone model{nullptr};
    NamedTensors ema;
    LossLog log;
};

/// Flow matching on latents of corpus images area-downsampled by config.scale.
/// Throws ConfigError when no encoder is supplied.
BaseLdmTrainResult train_base_ldm(const LatentEncoder* encoder, const Corpus& corpus, const BaseLdmConfig& ldm,
                                  const TrainConfig& config, const StepCallback& on_step = {});

} // namespace pixdec
