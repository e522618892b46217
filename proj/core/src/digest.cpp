// Copyright (C) 2026 The pixdec Authors
// SPDX-License-Identifier: Apache-2.0

#include "pixdec/digest.hpp"

#include "pixdec/errors.hpp"

#include <openssl/evp.h>

#include <array>
#include <map>

namespace pixdec {

Sha256::Sha256() : ctx_(EVP_MD_CTX_new())
{
    if (!ctx_ || EVP_DigestInit_ex(static_cast<EVP_MD_CTX*>(ctx_), EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("sha256: initialization failed");
}

Sha256::~Sha256()
{
    EVP_MD_CTX_free(static_cast<EVP_MD_CTX*>(ctx_));
}

void Sha256::update(std::span<const uint8_t> bytes)
{
    EVP_DigestUpdate(static_cast<EVP_MD_CTX*>(ctx_), bytes.data(), bytes.size());
}

void Sha256::update(std::string_view text)
{
    EVP_DigestUpdate(static_cast<EVP_MD_CTX*>(ctx_), text.data(), text.size());
}

std::string Sha256::hex_digest()
{
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    EVP_DigestFinal_ex(static_cast<EVP_MD_CTX*>(ctx_), md.data(), &len);
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(kHex[md[i] >> 4]);
        out.push_back(kHex[md[i] & 0xF]);
    }
    return out;
}

std::string sha256_hex(std::span<const uint8_t> bytes)
{
    Sha256 h;
    h.update(bytes);
    return h.hex_digest();
}

std::string digest_tensors(const NamedTensors& tensors)
{
    Sha256 h;
    for (const auto& [name, t] : tensors) {
        auto c = t.contiguous().cpu();
        h.update(name);
        h.update(std::string(c10::toString(c.scalar_type())));
        for (auto d : c.sizes())
            h.update(std::to_string(d) + ",");
        h.update(std::span<const uint8_t>(static_cast<const uint8_t*>(c.data_ptr()), c.nbytes()));
    }
    return h.hex_digest();
}

NamedTensors module_tensors(const torch::nn::Module& module, const std::string& prefix)
{
    NamedTensors out;
    const std::string pre = prefix.empty() ? "" : prefix + ".";
    for (const auto& item : module.named_parameters(true))
        out.emplace_back(pre + item.key(), item.value().detach());
    for (const auto& item : module.named_buffers(true))
        out.emplace_back(pre + item.key(), item.value().detach());
    return out;
}

void load_module_tensors(torch::nn::Module& module, const NamedTensors& tensors, const std::string& prefix)
{
    const std::string pre = prefix.empty() ? "" : prefix + ".";
    std::map<std::string, const torch::Tensor*> index;
    for (const auto& [name, t] : tensors)
        index[name] = &t;
    torch::NoGradGuard no_grad;
    auto assign = [&](const std::string& key, torch::Tensor& dst) {
        auto it = index.find(pre + key);
        if (it == index.end())
            throw CheckpointError("checkpoint lacks tensor '" + pre + key + "'");
        if (it->second->sizes() != dst.sizes())
            throw CheckpointError("tensor '" + pre + key + "' has the wrong shape");
        dst.copy_(*it->second);
    };
    for (auto& item : module.named_parameters(true))
        assign(item.key(), item.value());
    for (auto& item : module.named_buffers(true))
        assign(item.key(), item.value());
}

} // namespace pixdec
