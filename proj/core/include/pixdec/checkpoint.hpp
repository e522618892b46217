// Copyright (C) 2026 The pixdec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Single-file tensor archive.
//
// Layout: a 64-byte header, a JSON manifest, then the raw little-endian
// payload. Header fields: magic "PIXDCKPT", u32 format version, u32 reserved,
// u64 manifest size, u64 payload size, 32-byte SHA-256. The digest covers the
// header (digest bytes zeroed), the manifest and the payload.

#include "pixdec/digest.hpp"

#include <cstdint>
#include <filesystem>
#include <string>

#include "json.hpp"

namespace pixdec {

inline constexpr uint32_t kCheckpointFormatVersion = 1;
inline constexpr size_t kCheckpointHeaderBytes = 64;

struct CheckpointMeta {
    std::string kind;            // e.g. "decoder", "prior", "vae"
    nlohmann::json config;       // structured config snapshot
    int64_t step = 0;
    bool ema = false;
    nlohmann::json metadata = nlohmann::json::object();
};

struct TensorIndexEntry {
    std::string name;
    std::string dtype;
    std::vector<int64_t> shape;
    uint64_t byte_offset = 0;
    uint64_t byte_size = 0;
};

struct Checkpoint {
    NamedTensors tensors;
    CheckpointMeta meta;
    std::vector<TensorIndexEntry> index;
    std::string content_digest; // hex SHA-256 of the archive
    uint32_t format_version = kCheckpointFormatVersion;

    /// Tensor by exact name; throws CheckpointError when absent.
    const torch::Tensor& at(const std::string& name) const;
    /// Tensors under `prefix.`, with the prefix stripped.
    NamedTensors with_prefix(const std::string& prefix) const;
};

/// Writes atomically (temp file + rename). Returns the content digest.
std::string save_checkpoint(const std::filesystem::path& path, const NamedTensors& tensors,
                            const CheckpointMeta& meta, uint32_t format_version = kCheckpointFormatVersion);

/// Throws MissingCheckpointError, IntegrityError (bad magic, truncation,
/// digest mismatch, malformed manifest) or VersionError (format newer than
/// this reader).
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Digest recorded in an archive's header, without verifying the payload.
std::string peek_checkpoint_digest(const std::filesystem::path& path);

} // namespace pixdec
