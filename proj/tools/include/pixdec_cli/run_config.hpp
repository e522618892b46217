// Copyright (C) 2026 The pixdec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Line-oriented key=value run configuration with a per-stage schema.
//
//   # comment
//   steps = 2000
//   lr    = 1e-4
//
// Keys not in the stage schema are rejected with the offending line number.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace pixdec::cli {

/// Config problem anchored to a source location ("file:line" or "--flag").
class RunConfigError : public std::invalid_argument {
public:
    RunConfigError(const std::string& where, const std::string& what)
        : std::invalid_argument(where + ": " + what), where_(where)
    {
    }
    const std::string& where() const { return where_; }

private:
    std::string where_;
};

enum class ValueKind { Int, Real, Bool, Text, Path };

struct KeySpec {
    std::string key;
    ValueKind kind = ValueKind::Text;
    std::string default_value; // empty: no default (optional unless required)
    std::string help;
    bool required = false;
    std::optional<double> min;
    std::optional<double> max;
    bool min_exclusive = false;
    bool max_exclusive = false;
};

struct StageSchema {
    std::string stage;
    std::string summary;
    std::vector<KeySpec> keys;

    const KeySpec* find(const std::string& key) const;
};

/// Stages: gen-data, train-vae, train-prior, train-decoder, train-base-ldm,
/// distill, encode, sample-latent, decode, sweep, benchmark.
const std::vector<StageSchema>& stage_schemas();
const StageSchema& stage_schema(const std::string& stage);

struct ConfigValue {
    std::string text;
    std::string origin; // "default", "file:line" or "--key"
};

/// Parsed key=value lines of a file (no schema check).
std::vector<std::pair<std::string, ConfigValue>> parse_config_text(const std::string& text, const std::string& source);

class RunConfig {
public:
    /// Layers defaults, then the file, then flag values; validates every key
    /// (type and range) before returning.
    static RunConfig resolve(const StageSchema& schema, const std::optional<std::filesystem::path>& file,
                             const std::map<std::string, std::string>& flags);

    const std::string& stage() const { return stage_; }
    bool has(const std::string& key) const;
    int64_t get_int(const std::string& key) const;
    double get_real(const std::string& key) const;
    bool get_bool(const std::string& key) const;
    std::string get_text(const std::string& key) const;
    std::filesystem::path get_path(const std::string& key) const;
    const std::map<std::string, ConfigValue>& values() const { return values_; }

    /// Canonical "key=value" lines, sorted by key.
    std::string canonical() const;
    /// Error anchored at the key's origin.
    [[noreturn]] void fail(const std::string& key, const std::string& what) const;

private:
    std::string stage_;
    std::map<std::string, ConfigValue> values_;
};

} // namespace pixdec::cli
