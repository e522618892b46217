// Copyright (C) 2026 The pixdec Authors
// SPDX-License-Identifier: Apache-2.0

#include "pixdec/rng.hpp"

#include <ATen/CPUGeneratorImpl.h>

namespace pixdec {

namespace {

uint64_t splitmix64(uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

} // namespace

uint64_t mix_seed(uint64_t seed, std::string_view stream)
{
    // FNV-1a over the stream name, folded into the seed.
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : stream) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return splitmix64(seed ^ splitmix64(h));
}

Rng::Rng(uint64_t seed)
    : seed_(seed), gen_(at::make_generator<at::CPUGeneratorImpl>(seed))
{
}

Rng Rng::fork(std::string_view stream) const
{
    return Rng(mix_seed(seed_, stream));
}

torch::Tensor Rng::normal(at::IntArrayRef shape, torch::ScalarType dtype)
{
    return at::randn(shape, gen_, torch::TensorOptions().dtype(dtype));
}

torch::Tensor Rng::uniform(at::IntArrayRef shape, double lo, double hi, torch::ScalarType dtype)
{
    auto u = at::empty(shape, torch::TensorOptions().dtype(dtype));
    u.uniform_(lo, hi, gen_);
    return u;
}

torch::Tensor Rng::bernoulli(at::IntArrayRef shape, double p)
{
    return uniform(shape, 0.0, 1.0, torch::kDouble) < p;
}

torch::Tensor Rng::randint(int64_t high, at::IntArrayRef shape)
{
    return at::randint(high, shape, gen_, torch::TensorOptions().dtype(torch::kLong));
}

double Rng::uniform_scalar(double lo, double hi)
{
    return uniform({1}, lo, hi, torch::kDouble).item<double>();
}

int64_t Rng::randint_scalar(int64_t high)
{
    return randint(high, {1}).item<int64_t>();
}

} // namespace pixdec
