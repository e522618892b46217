// Copyright (C) 2026 The pixdec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Small configurations shared by the unit tests.

#include "pixdec/backbone.hpp"
#include "pixdec/codecs.hpp"
#include "pixdec/data.hpp"
#include "pixdec/decoder.hpp"
#include "pixdec/rng.hpp"

namespace pixdec::testing {

inline BackboneConfig tiny_backbone()
{
    BackboneConfig c;
    c.patch_size = 4;
    c.hidden_dim = 16;
    c.num_blocks = 2;
    c.num_heads = 2;
    c.mlp_ratio = 2;
    c.pixel_head_blocks = 1;
    c.pixel_width = 8;
    c.rope_reference_side = 16;
    c.vocab_size = Vocabulary::size();
    c.max_text_len = 6;
    c.time_embed_dim = 16;
    c.time_shift = 1.0;
    return c;
}

inline AdapterConfig tiny_adapter(int64_t latent_channels = 4)
{
    AdapterConfig a;
    a.latent_channels = latent_channels;
    a.adapter_width = 8;
    a.num_resblocks = 1;
    a.group_count = 2;
    a.injection_every = 2;
    a.sigma_embed_dim = 8;
    return a;
}

inline DecoderConfig tiny_decoder()
{
    return DecoderConfig{tiny_backbone(), tiny_adapter()};
}

/// Factor-2 VAE with four latent channels.
inline VaeConfig tiny_vae()
{
    VaeConfig v;
    v.latent_channels = 4;
    v.base_width = 8;
    v.levels = 1;
    return v;
}

/// Random perturbation of every parameter so zero-initialized paths matter.
inline void perturb(torch::nn::Module& m, uint64_t seed, double scale = 0.1)
{
    Rng rng(seed);
    torch::NoGradGuard g;
    for (auto& p : m.parameters())
        p.add_(scale * rng.normal(p.sizes(), p.scalar_type()));
}

inline Corpus tiny_corpus(int64_t n = 16, uint64_t seed = 0)
{
    return generate_corpus(n, seed, {Bucket{16, 16}});
}

} // namespace pixdec::testing
