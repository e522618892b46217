// Copyright (C) 2026 The pixdec Authors
// SPDX-License-Identifier: Apache-2.0

#include "pixdec/backbone.hpp"

#include "nn_util.hpp"
#include "pixdec/errors.hpp"
#include "pixdec/rng.hpp"

#include <cmath>
#include <sstream>

namespace pixdec {

using detail::layer_norm;
using detail::modulate;

void BackboneConfig::validate() const
{
    if (in_channels < 1 || patch_size < 1 || hidden_dim < 1 || num_heads < 1)
        throw ConfigError("backbone: sizes must be positive");
    if (hidden_dim % num_heads != 0)
        throw ConfigError("backbone: hidden_dim must be divisible by num_heads");
    // Two rotary axes, each rotating channel pairs.
    if (head_dim() % 4 != 0)
        throw ConfigError("backbone: head_dim must be divisible by 4 for 2-D rotary pairs");
    if (num_blocks < 2 || num_blocks % 2 != 0)
        throw ConfigError("backbone: num_blocks must be even and >= 2");
    if (pixel_head_blocks < 0 || (pixel_head_blocks > 0 && pixel_width < 1))
        throw ConfigError("backbone: invalid pixel head");
    if (vocab_size < 1 || max_text_len < 1)
        throw ConfigError("backbone: text vocabulary and length must be positive");
    if (time_embed_dim < 2 || time_embed_dim % 2 != 0)
        throw ConfigError("backbone: time_embed_dim must be even");
    if (rope_reference_side < patch_size)
        throw ConfigError("backbone: rope_reference_side must cover at least one patch");
    if (!(time_shift >= 1.0))
        throw ConfigError("backbone: time_shift must be >= 1");
}

BackboneConfig BackboneConfig::desk()
{
    BackboneConfig c;
    c.time_shift = 1.0;
    return c;
}

BackboneConfig BackboneConfig::desk_fast()
{
    BackboneConfig c;
    c.patch_size = 8;
    c.hidden_dim = 96;
    c.num_heads = 4;
    c.time_shift = 1.0;
    return c;
}

BackboneConfig BackboneConfig::full()
{
    BackboneConfig c;
    c.patch_size = 16;
    c.hidden_dim = 1536;
    c.num_blocks = 14;
    c.num_heads = 24;
    c.pixel_head_blocks = 2;
    c.pixel_width = 16;
    c.rope_reference_side = 1024;
    c.time_shift = 6.0;
    return c;
}

void to_json(nlohmann::json& j, const BackboneConfig& c)
{
    j = nlohmann::json{{"in_channels", c.in_channels},
                       {"patch_size", c.patch_size},
                       {"hidden_dim", c.hidden_dim},
                       {"num_blocks", c.num_blocks},
                       {"num_heads", c.num_heads},
                       {"mlp_ratio", c.mlp_ratio},
                       {"pixel_head_blocks", c.pixel_head_blocks},
                       {"pixel_width", c.pixel_width},
                       {"rope_reference_side", c.rope_reference_side},
                       {"rope_ntk", c.rope_ntk},
                       {"rope_base", c.rope_base},
                       {"vocab_size", c.vocab_size},
                       {"max_text_len", c.max_text_len},
                       {"time_embed_dim", c.time_embed_dim},
                       {"time_shift", c.time_shift}};
}

void from_json(const nlohmann::json& j, BackboneConfig& c)
{
    j.at("in_channels").get_to(c.in_channels);
    j.at("patch_size").get_to(c.patch_size);
    j.at("hidden_dim").get_to(c.hidden_dim);
    j.at("num_blocks").get_to(c.num_blocks);
    j.at("num_heads").get_to(c.num_heads);
    j.at("mlp_ratio").get_to(c.mlp_ratio);
    j.at("pixel_head_blocks").get_to(c.pixel_head_blocks);
    j.at("pixel_width").get_to(c.pixel_width);
    j.at("rope_reference_side").get_to(c.rope_reference_side);
    j.at("rope_ntk").get_to(c.rope_ntk);
    j.at("rope_base").get_to(c.rope_base);
    j.at("vocab_size").get_to(c.vocab_size);
    j.at("max_text_len").get_to(c.max_text_len);
    j.at("time_embed_dim").get_to(c.time_embed_dim);
    j.at("time_shift").get_to(c.time_shift);
}

torch::Tensor patch_rearrange(const torch::Tensor& img, int64_t p)
{
    if (img.dim() != 4)
        throw ShapeError("patch_rearrange: expected [B,C,H,W]");
    const auto B = img.size(0), C = img.size(1), H = img.size(2), W = img.size(3);
    if (p < 1 || H % p != 0 || W % p != 0) {
        std::ostringstream os;
        os << "image sides " << H << "x" << W << " not divisible by patch size " << p;
        throw ShapeError(os.str());
    }
    const auto gh = H / p, gw = W / p;
    return img.reshape({B, C, gh, p, gw, p}).permute({0, 2, 4, 1, 3, 5}).reshape({B, gh * gw, C * p * p});
}

torch::Tensor patch_restore(const torch::Tensor& tokens, int64_t C, int64_t p, int64_t gh, int64_t gw)
{
    if (tokens.dim() != 3 || tokens.size(1) != gh * gw || tokens.size(2) != C * p * p)
        throw ShapeError("patch_restore: token layout does not match the grid");
    const auto B = tokens.size(0);
    return tokens.reshape({B, gh, gw, C, p, p}).permute({0, 3, 1, 4, 2, 5}).reshape({B, C, gh * p, gw * p});
}

double ntk_base_multiplier(double k, int64_t axis_dim)
{
    if (k <= 1.0)
        return 1.0;
    const double d = static_cast<double>(axis_dim);
    return std::pow(k, d / (d - 2.0));
}

torch::Tensor rope_angles(const torch::Tensor& pos_y, const torch::Tensor& pos_x, int64_t head_dim,
                          double base_y, double base_x)
{
    if (head_dim % 4 != 0)
        throw ConfigError("rope: head_dim must be divisible by 4");
    const int64_t axis_dim = head_dim / 2;
    const int64_t pairs = axis_dim / 2;
    auto j = torch::arange(pairs, torch::kDouble);
    auto inv_y = torch::pow(base_y, -2.0 * j / static_cast<double>(axis_dim));
    auto inv_x = torch::pow(base_x, -2.0 * j / static_cast<double>(axis_dim));
    auto ay = pos_y.to(torch::kDouble).unsqueeze(1) * inv_y.unsqueeze(0);
    auto ax = pos_x.to(torch::kDouble).unsqueeze(1) * inv_x.unsqueeze(0);
    return torch::cat({ay, ax}, 1);
}

torch::Tensor rope_frequencies(int64_t grid_h, int64_t grid_w, int64_t head_dim,
                               int64_t reference_side_tokens, bool ntk_enabled, double base)
{
    if (head_dim % 2 != 0)
        throw ConfigError("rope: head_dim must be even");
    const int64_t axis_dim = head_dim / 2;
    double base_y = base, base_x = base;
    if (ntk_enabled && reference_side_tokens > 0) {
        base_y *= ntk_base_multiplier(static_cast<double>(grid_h) / reference_side_tokens, axis_dim);
        base_x *= ntk_base_multiplier(static_cast<double>(grid_w) / reference_side_tokens, axis_dim);
    }
    auto ys = torch::arange(grid_h, torch::kDouble).repeat_interleave(grid_w);
    auto xs = torch::arange(grid_w, torch::kDouble).repeat({grid_h});
    return rope_angles(ys, xs, head_dim, base_y, base_x);
}

torch::Tensor apply_rope(const torch::Tensor& x, const torch::Tensor& angles)
{
    const auto d = x.size(-1);
    if (d % 2 != 0 || angles.size(-1) != d / 2 || angles.size(0) != x.size(-2))
        throw ShapeError("apply_rope: angle table does not match operand");
    auto a = angles.to(x.scalar_type());
    auto c = torch::cos(a), s = torch::sin(a);
    auto shape = x.sizes().vec();
    shape.back() = d / 2;
    shape.push_back(2);
    auto xp = x.reshape(shape);
    auto x0 = xp.select(-1, 0), x1 = xp.select(-1, 1);
    auto r0 = x0 * c - x1 * s;
    auto r1 = x0 * s + x1 * c;
    return torch::stack({r0, r1}, -1).reshape(x.sizes());
}

torch::Tensor sinusoidal_embedding(const torch::Tensor& values, int64_t dim, double max_period)
{
    const int64_t half = dim / 2;
    auto opts = torch::TensorOptions().dtype(values.scalar_type());
    auto freqs = torch::exp(-std::log(max_period) * torch::arange(half, opts) / static_cast<double>(half));
    auto args = values.reshape({-1, 1}) * freqs.unsqueeze(0);
    return torch::cat({torch::cos(args), torch::sin(args)}, 1);
}

// ---------------------------------------------------------------------------

JointBlockImpl::JointBlockImpl(int64_t D, int64_t num_heads, int64_t mlp_ratio)
    : num_heads_(num_heads)
{
    img_mod_ = register_module("img_mod", torch::nn::Linear(D, 6 * D));
    txt_mod_ = register_module("txt_mod", torch::nn::Linear(D, 6 * D));
    img_qkv_ = register_module("img_qkv", torch::nn::Linear(D, 3 * D));
    txt_qkv_ = register_module("txt_qkv", torch::nn::Linear(D, 3 * D));
    img_out_ = register_module("img_out", torch::nn::Linear(D, D));
    txt_out_ = register_module("txt_out", torch::nn::Linear(D, D));
    img_mlp_ = register_module("img_mlp", detail::mlp(D, mlp_ratio * D, D));
    txt_mlp_ = register_module("txt_mlp", detail::mlp(D, mlp_ratio * D, D));
}

std::pair<torch::Tensor, torch::Tensor> JointBlockImpl::forward(const torch::Tensor& img, const torch::Tensor& txt,
                                                                const torch::Tensor& cond,
                                                                const torch::Tensor& angles)
{
    const auto B = img.size(0), N = img.size(1), L = txt.size(1), D = img.size(2);
    const auto H = num_heads_, dh = D / num_heads_;

    auto act = torch::silu(cond);
    auto mi = img_mod_(act).chunk(6, -1);
    auto mt = txt_mod_(act).chunk(6, -1);

    auto qkv_i = img_qkv_(modulate(layer_norm(img), mi[0], mi[1])).view({B, N, 3, H, dh}).permute({2, 0, 3, 1, 4});
    auto qkv_t = txt_qkv_(modulate(layer_norm(txt), mt[0], mt[1])).view({B, L, 3, H, dh}).permute({2, 0, 3, 1, 4});

    auto q = torch::cat({qkv_t[0], apply_rope(qkv_i[0], angles)}, 2);
    auto k = torch::cat({qkv_t[1], apply_rope(qkv_i[1], angles)}, 2);
    auto v = torch::cat({qkv_t[2], qkv_i[2]}, 2);
    auto o = detail::attention(q, k, v).permute({0, 2, 1, 3}).reshape({B, L + N, D});

    auto img_out = img + mi[2].unsqueeze(1) * img_out_(o.slice(1, L));
    auto txt_out = txt + mt[2].unsqueeze(1) * txt_out_(o.slice(1, 0, L));
    img_out = img_out + mi[5].unsqueeze(1) * img_mlp_->forward(modulate(layer_norm(img_out), mi[3], mi[4]));
    txt_out = txt_out + mt[5].unsqueeze(1) * txt_mlp_->forward(modulate(layer_norm(txt_out), mt[3], mt[4]));
    return {img_out, txt_out};
}

void JointBlockImpl::zero_modulation()
{
    detail::zero_linear(img_mod_);
    detail::zero_linear(txt_mod_);
}

void PixelBlockImpl::zero_modulation()
{
    detail::zero_linear(mod_);
}

PixelBlockImpl::PixelBlockImpl(int64_t width, int64_t cond_dim, int64_t mlp_ratio) : width_(width)
{
    mod_ = register_module("mod", torch::nn::Linear(cond_dim, 6 * width));
    qkv_ = register_module("qkv", torch::nn::Linear(width, 3 * width));
    out_ = register_module("out", torch::nn::Linear(width, width));
    mlp_ = register_module("mlp", detail::mlp(width, mlp_ratio * width, width));
}

torch::Tensor PixelBlockImpl::forward(const torch::Tensor& pix, const torch::Tensor& cond)
{
    // pix: [B*N, P, w], rows grouped by sample; cond: [B, cond_dim].
    const auto rows_per_sample = pix.size(0) / cond.size(0);
    auto m = mod_(torch::silu(cond)).repeat_interleave(rows_per_sample, 0).chunk(6, -1);
    auto qkv = qkv_(modulate(layer_norm(pix), m[0], m[1])).chunk(3, -1);
    auto h = pix + m[2].unsqueeze(1) * out_(detail::attention(qkv[0], qkv[1], qkv[2]));
    return h + m[5].unsqueeze(1) * mlp_->forward(modulate(layer_norm(h), m[3], m[4]));
}

// ---------------------------------------------------------------------------

BackboneImpl::BackboneImpl(BackboneConfig config, uint64_t seed) : config_(std::move(config))
{
    config_.validate();
    const auto& c = config_;
    const int64_t D = c.hidden_dim;
    const int64_t P = c.patch_size * c.patch_size;

    patch_embed_ = register_module("patch_embed", torch::nn::Linear(c.in_channels * P, D));
    text_embed_ = register_module("text_embed", torch::nn::Embedding(c.vocab_size + 1, D));
    time_mlp_ = register_module("time_mlp", torch::nn::Sequential(torch::nn::Linear(c.time_embed_dim, D),
                                                                 torch::nn::SiLU(), torch::nn::Linear(D, D)));
    blocks_ = register_module("blocks", torch::nn::ModuleList());
    for (int64_t i = 0; i < c.num_blocks; ++i)
        blocks_->push_back(JointBlock(D, c.num_heads, c.mlp_ratio));
    final_mod_ = register_module("final_mod", torch::nn::Linear(D, 2 * D));

    if (c.pixel_head_blocks == 0) {
        out_proj_ = register_module("out_proj", torch::nn::Linear(D, c.in_channels * P));
    } else {
        const int64_t w = c.pixel_width;
        pixel_cond_ = register_module("pixel_cond", torch::nn::Linear(D, P * w));
        pixel_embed_ = register_module("pixel_embed", torch::nn::Linear(c.in_channels, w));
        pixel_pos_ = register_parameter("pixel_pos", torch::zeros({P, w}));
        pixel_blocks_ = register_module("pixel_blocks", torch::nn::ModuleList());
        for (int64_t i = 0; i < c.pixel_head_blocks; ++i)
            pixel_blocks_->push_back(PixelBlock(w, D, c.mlp_ratio));
        pixel_out_ = register_module("pixel_out", torch::nn::Linear(w, c.in_channels));
    }

    Rng rng(mix_seed(seed, "backbone"));
    detail::init_module(*this, rng);
    torch::NoGradGuard no_grad;
    text_embed_->weight.zero_();
    for (const auto& blk : *blocks_)
        blk->as<JointBlock>()->zero_modulation();
    detail::zero_linear(final_mod_);
    if (c.pixel_head_blocks == 0) {
        detail::zero_linear(out_proj_);
    } else {
        pixel_pos_.normal_(0.0, 0.02, rng.generator());
        for (const auto& blk : *pixel_blocks_)
            blk->as<PixelBlock>()->zero_modulation();
        detail::zero_linear(pixel_out_);
    }
}

TokenGrid BackboneImpl::patchify(const torch::Tensor& img)
{
    const auto p = config_.patch_size;
    auto rearranged = patch_rearrange(img, p);
    return {patch_embed_(rearranged), img.size(2) / p, img.size(3) / p};
}

torch::Tensor BackboneImpl::forward(const torch::Tensor& x_t, const torch::Tensor& t, const torch::Tensor& text_ids,
                                    const InjectionHook* hook)
{
    return forward_full(x_t, t, text_ids, hook, false).velocity;
}

BackboneOutput BackboneImpl::forward_full(const torch::Tensor& x_t, const torch::Tensor& t,
                                          const torch::Tensor& text_ids, const InjectionHook* hook,
                                          bool want_features)
{
    const auto& c = config_;
    if (x_t.dim() != 4 || x_t.size(1) != c.in_channels)
        throw ShapeError("backbone: expected input [B," + std::to_string(c.in_channels) + ",H,W]");
    const auto B = x_t.size(0);
    if (t.numel() != B)
        throw ShapeError("backbone: one time value per sample expected");
    if (text_ids.dim() != 2 || text_ids.size(0) != B || text_ids.size(1) != c.max_text_len)
        throw ShapeError("backbone: text ids must be [B, max_text_len]");
    if (hook && hook->every < 1)
        throw ConfigError("backbone: injection period must be >= 1");

    auto grid = patchify(x_t);
    auto img = grid.tokens;
    const auto dtype = x_t.scalar_type();
    auto cond = time_mlp_->forward(sinusoidal_embedding(t.to(dtype).reshape({B}) * 1000.0, c.time_embed_dim));
    auto txt = text_embed_(text_ids);

    const int64_t ref_tokens = c.rope_reference_side / c.patch_size;
    auto angles = rope_frequencies(grid.grid_h, grid.grid_w, c.head_dim(), ref_tokens, c.rope_ntk, c.rope_base)
                      .to(dtype);

    BackboneOutput out;
    int64_t point = 0;
    for (int64_t i = 0; i < c.num_blocks; ++i) {
        std::tie(img, txt) = blocks_[i]->as<JointBlock>()->forward(img, txt, cond, angles);
        if (hook && (i + 1) % hook->every == 0) {
            img = hook->apply(point++, TokenGrid{img, grid.grid_h, grid.grid_w});
            ++out.injections;
        }
        if (want_features && i == c.num_blocks / 2 - 1)
            out.mid_features = img;
    }

    auto fm = final_mod_(torch::silu(cond)).chunk(2, -1);
    auto h = modulate(layer_norm(img), fm[0], fm[1]);
    const auto N = grid.num_patches();
    const auto p = c.patch_size;
    const auto P = p * p;

    torch::Tensor tokens;
    if (c.pixel_head_blocks == 0) {
        tokens = out_proj_(h);
    } else {
        auto sem = pixel_cond_(h).reshape({B * N, P, c.pixel_width});
        auto pix = patch_rearrange(x_t, p).reshape({B * N, c.in_channels, P}).transpose(1, 2);
        auto u = pixel_embed_(pix) + sem + pixel_pos_;
        for (const auto& blk : *pixel_blocks_)
            u = blk->as<PixelBlock>()->forward(u, cond);
        tokens = pixel_out_(layer_norm(u)).transpose(1, 2).reshape({B, N, c.in_channels * P});
    }
    out.velocity = patch_restore(tokens, c.in_channels, p, grid.grid_h, grid.grid_w);
    return out;
}

int64_t BackboneImpl::count_parameters() const
{
    int64_t n = 0;
    for (const auto& p : parameters())
        n += p.numel();
    return n;
}

torch::Tensor BackboneImpl::encode_text(const std::vector<TextCondition>& texts) const
{
    const auto L = config_.max_text_len;
    auto ids = torch::full({static_cast<int64_t>(texts.size()), L}, pad_id(), torch::kLong);
    auto acc = ids.accessor<int64_t, 2>();
    for (size_t b = 0; b < texts.size(); ++b) {
        const auto& tok = texts[b].token_ids;
        if (static_cast<int64_t>(tok.size()) > L)
            throw DomainError("caption has " + std::to_string(tok.size()) + " tokens; limit is " + std::to_string(L));
        for (size_t i = 0; i < tok.size(); ++i) {
            if (tok[i] < 0 || tok[i] >= config_.vocab_size)
                throw DomainError("token id " + std::to_string(tok[i]) + " outside vocabulary");
            acc[b][i] = tok[i];
        }
    }
    return ids;
}

torch::Tensor BackboneImpl::null_text(int64_t batch) const
{
    return torch::full({batch, config_.max_text_len}, pad_id(), torch::kLong);
}

} // namespace pixdec
