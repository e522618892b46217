// Copyright (C) 2026 The pixdec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <string_view>

namespace pixdec {

/// Explicit random stream. Every stochastic operation takes one of these;
/// nothing in the library touches the global torch generator.
class Rng {
public:
    explicit Rng(uint64_t seed);

    uint64_t seed() const { return seed_; }

    /// Independent child stream keyed by name; stable across runs.
    Rng fork(std::string_view stream) const;

    torch::Tensor normal(at::IntArrayRef shape, torch::ScalarType dtype = torch::kFloat);
    torch::Tensor uniform(at::IntArrayRef shape, double lo = 0.0, double hi = 1.0,
                          torch::ScalarType dtype = torch::kFloat);
    torch::Tensor bernoulli(at::IntArrayRef shape, double p);
    torch::Tensor randint(int64_t high, at::IntArrayRef shape);

    double uniform_scalar(double lo = 0.0, double hi = 1.0);
    int64_t randint_scalar(int64_t high);

    at::Generator& generator() { return gen_; }

private:
    uint64_t seed_;
    at::Generator gen_;
};

uint64_t mix_seed(uint64_t seed, std::string_view stream);

} // namespace pixdec
