// Copyright (C) 2026 The pixdec Authors
// SPDX-License-Identifier: Apache-2.0

#include "pixdec/checkpoint.hpp"

#include "pixdec/errors.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

namespace pixdec {

static_assert(std::endian::native == std::endian::little, "archive payload is little-endian");

namespace {

constexpr char kMagic[8] = {'P', 'I', 'X', 'D', 'C', 'K', 'P', 'T'};
constexpr size_t kDigestOffset = 32;

const std::map<torch::ScalarType, std::string>& dtype_names()
{
    static const std::map<torch::ScalarType, std::string> names = {
        {torch::kFloat, "f32"}, {torch::kDouble, "f64"}, {torch::kHalf, "f16"}, {torch::kBFloat16, "bf16"},
        {torch::kLong, "i64"},  {torch::kInt, "i32"},    {torch::kByte, "u8"},  {torch::kBool, "bool"},
    };
    return names;
}

torch::ScalarType dtype_from_name(const std::string& name)
{
    for (const auto& [type, n] : dtype_names())
        if (n == name)
            return type;
    throw IntegrityError("checkpoint: unknown dtype '" + name + "'");
}

template <typename T>
void put(std::array<uint8_t, kCheckpointHeaderBytes>& h, size_t off, T v)
{
    std::memcpy(h.data() + off, &v, sizeof(T));
}

template <typename T>
T get(const std::vector<uint8_t>& bytes, size_t off)
{
    T v;
    std::memcpy(&v, bytes.data() + off, sizeof(T));
    return v;
}

std::string to_hex(const uint8_t* p, size_t n)
{
    static const char* digits = "0123456789abcdef";
    std::string s;
    for (size_t i = 0; i < n; ++i) {
        s += digits[p[i] >> 4];
        s += digits[p[i] & 15];
    }
    return s;
}

std::vector<uint8_t> from_hex(const std::string& s)
{
    std::vector<uint8_t> out;
    for (size_t i = 0; i + 1 < s.size(); i += 2)
        out.push_back(static_cast<uint8_t>(std::stoi(s.substr(i, 2), nullptr, 16)));
    return out;
}

std::vector<uint8_t> read_all(const std::filesystem::path& path)
{
    std::error_code ec;
    if (!std::filesystem::is_regular_file(path, ec))
        throw MissingCheckpointError("checkpoint not found: " + path.string());
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw MissingCheckpointError("checkpoint not readable: " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

} // namespace

const torch::Tensor& Checkpoint::at(const std::string& name) const
{
    for (const auto& [n, t] : tensors)
        if (n == name)
            return t;
    throw CheckpointError("checkpoint has no tensor '" + name + "'");
}

NamedTensors Checkpoint::with_prefix(const std::string& prefix) const
{
    NamedTensors out;
    const std::string p = prefix + ".";
    for (const auto& [n, t] : tensors)
        if (n.rfind(p, 0) == 0)
            out.emplace_back(n.substr(p.size()), t);
    return out;
}

std::string save_checkpoint(const std::filesystem::path& path, const NamedTensors& tensors,
                            const CheckpointMeta& meta, uint32_t format_version)
{
    std::vector<uint8_t> payload;
    nlohmann::json index = nlohmann::json::array();
    for (const auto& [name, tensor] : tensors) {
        auto t = tensor.detach().cpu().contiguous();
        auto it = dtype_names().find(t.scalar_type());
        if (it == dtype_names().end())
            throw CheckpointError("checkpoint: unsupported dtype for '" + name + "'");
        const auto nbytes = static_cast<size_t>(t.numel()) * t.element_size();
        const auto offset = payload.size();
        payload.resize(offset + nbytes);
        if (nbytes > 0)
            std::memcpy(payload.data() + offset, t.data_ptr(), nbytes);
        index.push_back({{"name", name}, {"dtype", it->second}, {"shape", t.sizes().vec()},
                         {"byte_offset", offset}, {"byte_size", nbytes}});
    }

    nlohmann::json manifest = {
        {"format_version", format_version},
        {"kind", meta.kind},
        {"config", meta.config},
        {"step", meta.step},
        {"ema", meta.ema},
        {"metadata", meta.metadata},
        {"payload_sha256", sha256_hex(payload)},
        {"tensor_index", index},
    };
    const std::string manifest_text = manifest.dump(1);

    std::array<uint8_t, kCheckpointHeaderBytes> header{};
    std::memcpy(header.data(), kMagic, sizeof(kMagic));
    put<uint32_t>(header, 8, format_version);
    put<uint32_t>(header, 12, 0);
    put<uint64_t>(header, 16, manifest_text.size());
    put<uint64_t>(header, 24, payload.size());

    Sha256 sha;
    sha.update(header);
    sha.update(manifest_text);
    sha.update(payload);
    const auto hex = sha.hex_digest();
    const auto raw = from_hex(hex);
    std::memcpy(header.data() + kDigestOffset, raw.data(), raw.size());

    auto tmp = path;
    tmp += ".tmp";
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            throw CheckpointError("cannot write " + tmp.string());
        out.write(reinterpret_cast<const char*>(header.data()), header.size());
        out.write(manifest_text.data(), static_cast<std::streamsize>(manifest_text.size()));
        out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
        if (!out)
            throw CheckpointError("short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
    return hex;
}

std::string peek_checkpoint_digest(const std::filesystem::path& path)
{
    auto bytes = read_all(path);
    if (bytes.size() < kCheckpointHeaderBytes || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
        throw IntegrityError("checkpoint: bad header in " + path.string());
    return to_hex(bytes.data() + kDigestOffset, 32);
}

Checkpoint load_checkpoint(const std::filesystem::path& path)
{
    auto bytes = read_all(path);
    if (bytes.size() < kCheckpointHeaderBytes)
        throw IntegrityError("checkpoint truncated: " + path.string());
    if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
        throw IntegrityError("checkpoint: bad magic in " + path.string());

    const auto version = get<uint32_t>(bytes, 8);
    const auto manifest_bytes = get<uint64_t>(bytes, 16);
    const auto payload_bytes = get<uint64_t>(bytes, 24);
    const uint64_t body = bytes.size() - kCheckpointHeaderBytes;
    if (manifest_bytes > body || payload_bytes != body - manifest_bytes)
        throw IntegrityError("checkpoint: size fields disagree with file length in " + path.string());

    const std::string stored = to_hex(bytes.data() + kDigestOffset, 32);
    std::vector<uint8_t> header(bytes.begin(), bytes.begin() + kCheckpointHeaderBytes);
    std::fill(header.begin() + kDigestOffset, header.end(), 0);
    Sha256 sha;
    sha.update(header);
    sha.update(std::span<const uint8_t>(bytes.data() + kCheckpointHeaderBytes, bytes.size() - kCheckpointHeaderBytes));
    if (sha.hex_digest() != stored)
        throw IntegrityError("checkpoint: digest mismatch in " + path.string());
    if (version > kCheckpointFormatVersion)
        throw VersionError("checkpoint format " + std::to_string(version) + " is newer than reader format " +
                           std::to_string(kCheckpointFormatVersion));

    const uint8_t* manifest_ptr = bytes.data() + kCheckpointHeaderBytes;
    const uint8_t* payload = manifest_ptr + manifest_bytes;
    Checkpoint ck;
    ck.format_version = version;
    ck.content_digest = stored;
    try {
        auto manifest = nlohmann::json::parse(manifest_ptr, manifest_ptr + manifest_bytes);
        ck.meta.kind = manifest.at("kind").get<std::string>();
        ck.meta.config = manifest.at("config");
        ck.meta.step = manifest.at("step").get<int64_t>();
        ck.meta.ema = manifest.at("ema").get<bool>();
        ck.meta.metadata = manifest.at("metadata");
        uint64_t cursor = 0;
        for (const auto& e : manifest.at("tensor_index")) {
            TensorIndexEntry entry;
            entry.name = e.at("name").get<std::string>();
            entry.dtype = e.at("dtype").get<std::string>();
            entry.shape = e.at("shape").get<std::vector<int64_t>>();
            entry.byte_offset = e.at("byte_offset").get<uint64_t>();
            entry.byte_size = e.at("byte_size").get<uint64_t>();
            if (entry.byte_offset < cursor || entry.byte_offset + entry.byte_size > payload_bytes)
                throw IntegrityError("checkpoint: tensor index out of order or out of range");
            cursor = entry.byte_offset + entry.byte_size;

            auto t = torch::empty(entry.shape, torch::TensorOptions().dtype(dtype_from_name(entry.dtype)));
            if (static_cast<uint64_t>(t.numel()) * t.element_size() != entry.byte_size)
                throw IntegrityError("checkpoint: byte size disagrees with shape for " + entry.name);
            if (entry.byte_size > 0)
                std::memcpy(t.data_ptr(), payload + entry.byte_offset, entry.byte_size);
            ck.tensors.emplace_back(entry.name, t);
            ck.index.push_back(std::move(entry));
        }
    } catch (const nlohmann::json::exception& e) {
        throw IntegrityError(std::string("checkpoint: malformed manifest: ") + e.what());
    }
    return ck;
}

} // namespace pixdec
