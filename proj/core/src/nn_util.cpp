// Copyright (C) 2026 The pixdec Authors
// SPDX-License-Identifier: Apache-2.0

#include "nn_util.hpp"

#include <cmath>

namespace pixdec::detail {

void init_module(torch::nn::Module& module, Rng& rng)
{
    torch::NoGradGuard no_grad;
    for (auto& m : module.modules(/*include_self=*/false)) {
        if (auto* lin = m->as<torch::nn::Linear>()) {
            const double fan_in = static_cast<double>(lin->weight.size(1));
            const double fan_out = static_cast<double>(lin->weight.size(0));
            const double bound = std::sqrt(6.0 / (fan_in + fan_out));
            lin->weight.uniform_(-bound, bound, rng.generator());
            if (lin->bias.defined())
                lin->bias.zero_();
        } else if (auto* conv = m->as<torch::nn::Conv2d>()) {
            const double fan_in = static_cast<double>(conv->weight[0].numel());
            const double bound = 1.0 / std::sqrt(fan_in);
            conv->weight.uniform_(-bound, bound, rng.generator());
            if (conv->bias.defined())
                conv->bias.uniform_(-bound, bound, rng.generator());
        }
    }
}

void zero_linear(torch::nn::Linear& layer)
{
    torch::NoGradGuard no_grad;
    layer->weight.zero_();
    if (layer->bias.defined())
        layer->bias.zero_();
}

} // namespace pixdec::detail
