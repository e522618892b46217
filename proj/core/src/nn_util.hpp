// Copyright (C) 2026 The pixdec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Internal helpers shared by the network modules.

#include "pixdec/rng.hpp"

#include <torch/torch.h>

namespace pixdec::detail {

/// Xavier-uniform weights and zero biases for every Linear; fan-in uniform for
/// every Conv2d. Draws only from `rng`.
void init_module(torch::nn::Module& module, Rng& rng);

void zero_linear(torch::nn::Linear& layer);

inline torch::Tensor layer_norm(const torch::Tensor& x)
{
    return torch::layer_norm(x, {x.size(-1)}, {}, {}, 1e-6);
}

/// x * (1 + scale) + shift with [B, D] modulation broadcast over tokens.
inline torch::Tensor modulate(const torch::Tensor& x, const torch::Tensor& shift, const torch::Tensor& scale)
{
    return x * (1.0 + scale.unsqueeze(1)) + shift.unsqueeze(1);
}

/// Softmax attention over [..., N, d] operands.
inline torch::Tensor attention(const torch::Tensor& q, const torch::Tensor& k, const torch::Tensor& v)
{
    const double scale = 1.0 / std::sqrt(static_cast<double>(q.size(-1)));
    auto logits = torch::matmul(q, k.transpose(-2, -1)) * scale;
    return torch::matmul(torch::softmax(logits, -1), v);
}

inline torch::nn::Sequential mlp(int64_t in, int64_t hidden, int64_t out)
{
    return torch::nn::Sequential(torch::nn::Linear(in, hidden),
                                 torch::nn::GELU(torch::nn::GELUOptions().approximate("tanh")),
                                 torch::nn::Linear(hidden, out));
}

} // namespace pixdec::detail
