// Copyright (C) 2026 The pixdec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Pixel-space diffusion transformer: patch embedding, 2-D rotary positions,
// joint image/text blocks with adaptive layer-scale timestep modulation, and
// a narrow per-pixel head. Predicts the rectified-flow velocity.

#include "pixdec/types.hpp"

#include <torch/torch.h>

#include <functional>
#include <vector>

#include "json.hpp"

namespace pixdec {

struct BackboneConfig {
    int64_t in_channels = 3;
    int64_t patch_size = 4;
    int64_t hidden_dim = 128;
    int64_t num_blocks = 8;
    int64_t num_heads = 4;
    int64_t mlp_ratio = 4;
    int64_t pixel_head_blocks = 2;
    int64_t pixel_width = 16;
    int64_t rope_reference_side = 64;
    bool rope_ntk = true;
    double rope_base = 10000.0;
    int64_t vocab_size = 32;
    int64_t max_text_len = 8;
    int64_t time_embed_dim = 64;
    double time_shift = 6.0;

    void validate() const;
    int64_t head_dim() const { return hidden_dim / num_heads; }

    /// CPU-trainable defaults.
    static BackboneConfig desk();
    /// Coarser patches and a narrower trunk; sized for single-core CPU runs.
    static BackboneConfig desk_fast();
    /// Full-size layout (16 px patches, width 1536, 14 + 2 blocks) for reference.
    static BackboneConfig full();

    bool operator==(const BackboneConfig&) const = default;
};

void to_json(nlohmann::json& j, const BackboneConfig& c);
void from_json(const nlohmann::json& j, BackboneConfig& c);

/// Hidden image tokens laid out on the patch grid.
struct TokenGrid {
    torch::Tensor tokens; // [B, grid_h * grid_w, D]
    int64_t grid_h = 0;
    int64_t grid_w = 0;

    int64_t num_patches() const { return grid_h * grid_w; }
};

/// [B,C,H,W] -> [B, (H/p)*(W/p), C*p*p], row-major over the patch grid.
torch::Tensor patch_rearrange(const torch::Tensor& img, int64_t patch_size);

/// Inverse of patch_rearrange.
torch::Tensor patch_restore(const torch::Tensor& tokens, int64_t channels, int64_t patch_size,
                            int64_t grid_h, int64_t grid_w);

/// Frequency-base multiplier for NTK-aware extrapolation by factor k over a
/// rotary sub-dimension d: k^(d/(d-2)) when k > 1, else 1.
double ntk_base_multiplier(double k, int64_t axis_dim);

/// Axial 2-D rotary angles for explicit positions. The first half of the
/// rotary pairs encodes y, the second half x. Returns [N, head_dim/2].
torch::Tensor rope_angles(const torch::Tensor& pos_y, const torch::Tensor& pos_x, int64_t head_dim,
                          double base_y, double base_x);

/// Angles for a grid_h x grid_w token grid. When ntk_enabled and a grid side
/// exceeds the reference side (in tokens), that axis' base is rescaled.
torch::Tensor rope_frequencies(int64_t grid_h, int64_t grid_w, int64_t head_dim,
                               int64_t reference_side_tokens, bool ntk_enabled,
                               double base = 10000.0);

/// Rotate interleaved channel pairs of x [..., N, head_dim] by angles [N, head_dim/2].
torch::Tensor apply_rope(const torch::Tensor& x, const torch::Tensor& angles);

/// Sinusoidal embedding of scalars [B] -> [B, dim].
torch::Tensor sinusoidal_embedding(const torch::Tensor& values, int64_t dim, double max_period = 10000.0);

/// Per-block additive hook. `apply` is called after every `every`-th block
/// with the injection point index and the current image tokens.
struct InjectionHook {
    int64_t every = 2;
    std::function<torch::Tensor(int64_t point, const TokenGrid& h)> apply;
};

struct BackboneOutput {
    torch::Tensor velocity;
    torch::Tensor mid_features; // [B, N, D] image tokens at half depth
    int64_t injections = 0;
};

class JointBlockImpl : public torch::nn::Module {
public:
    JointBlockImpl(int64_t hidden_dim, int64_t num_heads, int64_t mlp_ratio);

    std::pair<torch::Tensor, torch::Tensor> forward(const torch::Tensor& img, const torch::Tensor& txt,
                                                    const torch::Tensor& cond, const torch::Tensor& angles);

    /// adaLN-Zero: modulation starts at zero so the block is an identity map.
    void zero_modulation();

private:
    int64_t num_heads_;
    torch::nn::Linear img_mod_{nullptr}, txt_mod_{nullptr};
    torch::nn::Linear img_qkv_{nullptr}, txt_qkv_{nullptr};
    torch::nn::Linear img_out_{nullptr}, txt_out_{nullptr};
    torch::nn::Sequential img_mlp_{nullptr}, txt_mlp_{nullptr};
};
TORCH_MODULE(JointBlock);

/// Narrow transformer block over the pixels of one patch.
class PixelBlockImpl : public torch::nn::Module {
public:
    PixelBlockImpl(int64_t width, int64_t cond_dim, int64_t mlp_ratio);

    torch::Tensor forward(const torch::Tensor& pix, const torch::Tensor& cond);

    void zero_modulation();

private:
    int64_t width_;
    torch::nn::Linear mod_{nullptr}, qkv_{nullptr}, out_{nullptr};
    torch::nn::Sequential mlp_{nullptr};
};
TORCH_MODULE(PixelBlock);

class BackboneImpl : public torch::nn::Module {
public:
    /// Weights are drawn from a stream seeded with `seed`. Modulation, the
    /// output projection and the text embedding start at zero.
    explicit BackboneImpl(BackboneConfig config, uint64_t seed = 0);

    /// Velocity for x_t [B,C,H,W] at times t [B] with padded text ids [B,L].
    torch::Tensor forward(const torch::Tensor& x_t, const torch::Tensor& t, const torch::Tensor& text_ids,
                          const InjectionHook* hook = nullptr);

    BackboneOutput forward_full(const torch::Tensor& x_t, const torch::Tensor& t,
                                const torch::Tensor& text_ids, const InjectionHook* hook,
                                bool want_features);

    TokenGrid patchify(const torch::Tensor& img);

    const BackboneConfig& config() const { return config_; }
    int64_t pad_id() const { return config_.vocab_size; }
    int64_t count_parameters() const;

    /// Pads captions to max_text_len with the pad id. Throws DomainError for
    /// captions that are too long or ids outside the vocabulary.
    torch::Tensor encode_text(const std::vector<TextCondition>& texts) const;
    torch::Tensor null_text(int64_t batch) const;

private:
    BackboneConfig config_;
    torch::nn::Linear patch_embed_{nullptr};
    torch::nn::Embedding text_embed_{nullptr};
    torch::nn::Sequential time_mlp_{nullptr};
    torch::nn::ModuleList blocks_{nullptr};
    torch::nn::Linear final_mod_{nullptr};
    torch::nn::Linear out_proj_{nullptr};     // used without a pixel head
    torch::nn::Linear pixel_cond_{nullptr};   // patch token -> per-pixel features
    torch::nn::Linear pixel_embed_{nullptr};  // noisy pixel -> per-pixel features
    torch::Tensor pixel_pos_;
    torch::nn::ModuleList pixel_blocks_{nullptr};
    torch::nn::Linear pixel_out_{nullptr};
};
TORCH_MODULE(Backbone);

} // namespace pixdec
