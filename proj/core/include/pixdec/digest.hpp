// Copyright (C) 2026 The pixdec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace pixdec {

/// Ordered (name, tensor) list; the unit of serialization.
using NamedTensors = std::vector<std::pair<std::string, torch::Tensor>>;

/// Incremental SHA-256.
class Sha256 {
public:
    Sha256();
    ~Sha256();
    Sha256(const Sha256&) = delete;
    Sha256& operator=(const Sha256&) = delete;

    void update(std::span<const uint8_t> bytes);
    void update(std::string_view text);
    std::string hex_digest();

private:
    void* ctx_;
};

std::string sha256_hex(std::span<const uint8_t> bytes);

/// Digest over names, dtypes, shapes and raw contents, in order.
std::string digest_tensors(const NamedTensors& tensors);

/// Parameters and buffers of a module, prefixed with `prefix.` when non-empty.
NamedTensors module_tensors(const torch::nn::Module& module, const std::string& prefix = "");

/// Load tensors by name into a module (prefix stripped). Throws CheckpointError
/// when a module tensor is missing or has the wrong shape.
void load_module_tensors(torch::nn::Module& module, const NamedTensors& tensors, const std::string& prefix = "");

} // namespace pixdec
