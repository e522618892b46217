// Copyright (C) 2026 The pixdec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <string>
#include <vector>

namespace pixdec {

/// Pixel image(s) with values in [-1, 1]; shape [C,H,W] or [B,C,H,W].
using ImageGrid = torch::Tensor;

enum class EncoderKind { Vae, Semantic };

std::string to_string(EncoderKind kind);
EncoderKind encoder_kind_from_string(const std::string& s);

/// Identity of the encoder that produced a latent.
struct EncoderSpec {
    EncoderKind kind = EncoderKind::Vae;
    int64_t downsample_factor = 8;
    int64_t latent_channels = 8;
    std::string id_hash;
    double latent_scale = 1.0;

    bool operator==(const EncoderSpec&) const = default;
};

/// Latent values, shape [C,h,w] or [B,C,h,w], tagged with their encoder.
struct LatentGrid {
    torch::Tensor values;
    EncoderSpec encoder;
};

/// A latent corrupted to noise level sigma.
struct SigmaNoisedLatent {
    LatentGrid latent;
    double sigma = 0.0;
};

/// Token ids of a caption. Empty means the null condition.
struct TextCondition {
    std::vector<int64_t> token_ids;

    bool empty() const { return token_ids.empty(); }
    bool operator==(const TextCondition&) const = default;
};

} // namespace pixdec
