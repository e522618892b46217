// Copyright (C) 2026 The pixdec Authors
// SPDX-License-Identifier: Apache-2.0

#include "pixdec_cli/run_config.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

namespace pixdec::cli {

namespace {

std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos)
        return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

KeySpec key(std::string name, ValueKind kind, std::string def, std::string help)
{
    KeySpec k;
    k.key = std::move(name);
    k.kind = kind;
    k.default_value = std::move(def);
    k.help = std::move(help);
    return k;
}

KeySpec required(KeySpec k)
{
    k.required = true;
    return k;
}

KeySpec range(KeySpec k, std::optional<double> lo, std::optional<double> hi, bool lo_open = false,
              bool hi_open = false)
{
    k.min = lo;
    k.max = hi;
    k.min_exclusive = lo_open;
    k.max_exclusive = hi_open;
    return k;
}

using V = ValueKind;

KeySpec seed_key() { return range(key("seed", V::Int, "0", "random seed"), 0, std::nullopt); }
KeySpec out_key(const std::string& def, const std::string& help) { return key("out", V::Path, def, help); }
KeySpec steps_key(const std::string& def) { return range(key("steps", V::Int, def, "optimizer steps"), 0, std::nullopt); }
KeySpec batch_key(const std::string& def) { return range(key("batch_size", V::Int, def, "batch size"), 1, std::nullopt); }
KeySpec lr_key(const std::string& def) { return range(key("lr", V::Real, def, "learning rate"), 0, std::nullopt, true); }
KeySpec scale_key() { return range(key("scale", V::Int, "4", "target side / source side (1, 2, 4 or 8)"), 1, 8); }
KeySpec sigma_max_key() { return range(key("sigma_max", V::Real, "0.8", "largest training latent noise level"), 0, 1, true); }
KeySpec preset_key() { return key("preset", V::Text, "desk_fast", "backbone preset: desk, desk_fast or full"); }
KeySpec ema_key() { return range(key("ema_decay", V::Real, "0.999", "EMA decay"), 0, 1); }
KeySpec caption_dropout_key() { return range(key("caption_dropout", V::Real, "0.1", "caption dropout rate"), 0, 1, false, true); }
KeySpec threads_key() { return range(key("threads", V::Int, "0", "intra-op threads (0 keeps the default)"), 0, std::nullopt); }

std::vector<StageSchema> build_schemas()
{
    std::vector<StageSchema> s;
    s.push_back({"gen-data", "render the procedural captioned image corpus",
                 {range(key("n", V::Int, "512", "number of images"), 1, std::nullopt), seed_key(),
                  key("buckets", V::Text, "64x64", "comma-separated HxW buckets"),
                  out_key("corpus.ckpt", "corpus archive"), threads_key()}});
    s.push_back({"train-vae", "train the convolutional VAE on corpus images downsampled by scale",
                 {required(key("corpus", V::Path, "", "corpus archive")), steps_key("1000"), batch_key("32"),
                  lr_key("1e-3"), seed_key(), scale_key(),
                  range(key("latent_channels", V::Int, "8", "latent channels"), 1, std::nullopt),
                  range(key("kl_weight", V::Real, "1e-4", "KL weight"), 0, std::nullopt),
                  out_key("vae.ckpt", "VAE checkpoint"), threads_key()}});
    s.push_back({"train-prior", "train the text-conditioned pixel prior",
                 {required(key("corpus", V::Path, "", "corpus archive")), key("init", V::Path, "", "resume from prior checkpoint"),
                  preset_key(), steps_key("2000"), batch_key("8"), lr_key("3e-4"), seed_key(),
                  range(key("time_shift", V::Real, "1", "training time shift"), 1, std::nullopt), ema_key(),
                  caption_dropout_key(), out_key("prior.ckpt", "prior checkpoint"), threads_key()}});
    s.push_back({"train-decoder", "train the latent-conditioned pixel decoder from a prior",
                 {required(key("prior", V::Path, "", "prior checkpoint")), required(key("vae", V::Path, "", "VAE checkpoint")),
                  required(key("corpus", V::Path, "", "corpus archive")), steps_key("2000"), batch_key("8"),
                  lr_key("3e-4"), seed_key(), scale_key(), sigma_max_key(),
                  range(key("time_shift", V::Real, "1", "training time shift"), 1, std::nullopt), ema_key(),
                  caption_dropout_key(),
                  range(key("latent_dropout", V::Real, "0.1", "latent dropout rate"), 0, 1),
                  key("freeze_backbone", V::Bool, "false", "train only the adapter"),
                  out_key("decoder.ckpt", "decoder checkpoint"), threads_key()}});
    s.push_back({"train-base-ldm", "train the small latent flow model",
                 {required(key("vae", V::Path, "", "VAE checkpoint")), required(key("corpus", V::Path, "", "corpus archive")),
                  steps_key("2000"), batch_key("32"), lr_key("3e-4"), seed_key(), scale_key(), ema_key(),
                  caption_dropout_key(), out_key("base_ldm.ckpt", "base model checkpoint"), threads_key()}});
    s.push_back({"distill", "distill a four-step student from a decoder",
                 {required(key("decoder", V::Path, "", "teacher decoder checkpoint")),
                  required(key("vae", V::Path, "", "VAE checkpoint")), required(key("corpus", V::Path, "", "corpus archive")),
                  range(key("iterations", V::Int, "100", "trainer iterations"), 0, std::nullopt), batch_key("4"),
                  lr_key("1e-5"), seed_key(), scale_key(), sigma_max_key(),
                  key("schedule", V::Text, "0.999,0.866,0.634,0.342", "student sigma schedule"),
                  range(key("dmd_weight", V::Real, "1.0", "distribution matching weight"), 0, std::nullopt),
                  range(key("dsm_weight", V::Real, "1.0", "fake-score weight"), 0, std::nullopt),
                  range(key("gan_weight", V::Real, "0.05", "adversarial weight"), 0, std::nullopt),
                  range(key("r1_weight", V::Real, "200.0", "R1 weight"), 0, std::nullopt),
                  range(key("guidance", V::Real, "3.0", "teacher text guidance"), 0, std::nullopt),
                  range(key("fake_updates_per_student", V::Int, "5", "fake-score updates per student update"), 1, std::nullopt),
                  out_key("student.ckpt", "student checkpoint"), key("log", V::Path, "", "per-loss CSV (default <out>.csv)"),
                  threads_key()}});
    s.push_back({"encode", "encode a PNG with the VAE",
                 {required(key("vae", V::Path, "", "VAE checkpoint")), required(key("image", V::Path, "", "input PNG")),
                  out_key("latent.ckpt", "latent archive"), threads_key()}});
    s.push_back({"sample-latent", "sample a latent with the base model, optionally stopping early",
                 {required(key("base_ldm", V::Path, "", "base model checkpoint")),
                  key("caption", V::Text, "", "caption words"), range(key("N", V::Int, "14", "total steps"), 1, std::nullopt),
                  range(key("M", V::Int, "0", "stop step (0 means N)"), 0, std::nullopt),
                  range(key("guidance", V::Real, "1.0", "text guidance"), 0, std::nullopt), seed_key(),
                  out_key("latent.ckpt", "latent archive"), threads_key()}});
    s.push_back({"decode", "decode a latent to pixels",
                 {key("decoder", V::Path, "decoder.ckpt", "decoder or student checkpoint"),
                  required(key("latent", V::Path, "", "latent archive")),
                  range(key("sigma", V::Real, "-1", "latent noise level (-1 uses the archive's)"), -1, 1),
                  scale_key(), seed_key(), range(key("steps", V::Int, "25", "Euler steps for multi-step decoders"), 1, std::nullopt),
                  range(key("guidance", V::Real, "1.0", "text guidance"), 0, std::nullopt),
                  key("caption", V::Text, "", "caption words"), out_key("decoded.png", "output PNG"), threads_key()}});
    s.push_back({"sweep", "decode after every base-model exit step M = 1..N",
                 {required(key("decoder", V::Path, "", "decoder checkpoint")),
                  required(key("base_ldm", V::Path, "", "base model checkpoint")),
                  range(key("N", V::Int, "14", "total base steps"), 2, std::nullopt),
                  key("captions", V::Text, "gradient red blue horizontal medium", "semicolon-separated captions"),
                  range(key("steps", V::Int, "25", "decoder Euler steps"), 1, std::nullopt), seed_key(), scale_key(),
                  out_key("sweep", "output directory"), threads_key()}});
    s.push_back({"benchmark", "decode latency and peak memory per output side",
                 {key("decoder", V::Path, "", "decoder checkpoint (default: fresh desk_fast decoder)"),
                  key("sides", V::Text, "32,64,128", "comma-separated output sides"),
                  range(key("repeats", V::Int, "20", "timed repeats"), 1, std::nullopt),
                  range(key("warmup", V::Int, "2", "untimed warmup runs"), 0, std::nullopt),
                  range(key("steps", V::Int, "4", "Euler steps when no schedule"), 1, std::nullopt), seed_key(),
                  out_key("benchmark", "output directory")}});
    return s;
}

bool parse_bool(const std::string& v, bool& out)
{
    std::string l = v;
    std::transform(l.begin(), l.end(), l.begin(), [](unsigned char c) { return std::tolower(c); });
    if (l == "true" || l == "1" || l == "yes" || l == "on") {
        out = true;
        return true;
    }
    if (l == "false" || l == "0" || l == "no" || l == "off") {
        out = false;
        return true;
    }
    return false;
}

bool parse_int(const std::string& v, int64_t& out)
{
    try {
        size_t pos = 0;
        out = std::stoll(v, &pos);
        return pos == v.size();
    } catch (const std::exception&) {
        return false;
    }
}

bool parse_real(const std::string& v, double& out)
{
    try {
        size_t pos = 0;
        out = std::stod(v, &pos);
        return pos == v.size() && std::isfinite(out);
    } catch (const std::exception&) {
        return false;
    }
}

void check_value(const KeySpec& spec, const ConfigValue& value)
{
    const auto& v = value.text;
    double number = 0.0;
    switch (spec.kind) {
    case ValueKind::Int: {
        int64_t i = 0;
        if (!parse_int(v, i))
            throw RunConfigError(value.origin, "key '" + spec.key + "': expected an integer, got '" + v + "'");
        number = static_cast<double>(i);
        break;
    }
    case ValueKind::Real:
        if (!parse_real(v, number))
            throw RunConfigError(value.origin, "key '" + spec.key + "': expected a number, got '" + v + "'");
        break;
    case ValueKind::Bool: {
        bool b = false;
        if (!parse_bool(v, b))
            throw RunConfigError(value.origin, "key '" + spec.key + "': expected true or false, got '" + v + "'");
        return;
    }
    case ValueKind::Text:
    case ValueKind::Path:
        return;
    }
    const bool below = spec.min && (spec.min_exclusive ? number <= *spec.min : number < *spec.min);
    const bool above = spec.max && (spec.max_exclusive ? number >= *spec.max : number > *spec.max);
    if (below || above) {
        std::ostringstream os;
        os << "key '" << spec.key << "': value " << v << " outside " << (spec.min_exclusive ? "(" : "[")
           << (spec.min ? std::to_string(*spec.min) : "-inf") << ", " << (spec.max ? std::to_string(*spec.max) : "inf")
           << (spec.max_exclusive ? ")" : "]");
        throw RunConfigError(value.origin, os.str());
    }
}

} // namespace

const KeySpec* StageSchema::find(const std::string& k) const
{
    for (const auto& spec : keys)
        if (spec.key == k)
            return &spec;
    return nullptr;
}

const std::vector<StageSchema>& stage_schemas()
{
    static const std::vector<StageSchema> schemas = build_schemas();
    return schemas;
}

const StageSchema& stage_schema(const std::string& stage)
{
    for (const auto& s : stage_schemas())
        if (s.stage == stage)
            return s;
    throw RunConfigError("stage", "unknown stage '" + stage + "'");
}

std::vector<std::pair<std::string, ConfigValue>> parse_config_text(const std::string& text, const std::string& source)
{
    std::vector<std::pair<std::string, ConfigValue>> out;
    std::istringstream is(text);
    std::string line;
    for (int64_t n = 1; std::getline(is, line); ++n) {
        const auto where = source + ":" + std::to_string(n);
        const auto hash = line.find('#');
        const auto body = trim(hash == std::string::npos ? line : line.substr(0, hash));
        if (body.empty())
            continue;
        const auto eq = body.find('=');
        if (eq == std::string::npos)
            throw RunConfigError(where, "expected 'key = value', got '" + body + "'");
        const auto k = trim(body.substr(0, eq));
        const auto v = trim(body.substr(eq + 1));
        if (k.empty())
            throw RunConfigError(where, "empty key");
        for (const auto& [seen, value] : out)
            if (seen == k)
                throw RunConfigError(where, "duplicate key '" + k + "' (first at " + value.origin + ")");
        out.push_back({k, {v, where}});
    }
    return out;
}

RunConfig RunConfig::resolve(const StageSchema& schema, const std::optional<std::filesystem::path>& file,
                             const std::map<std::string, std::string>& flags)
{
    RunConfig rc;
    rc.stage_ = schema.stage;
    for (const auto& spec : schema.keys)
        if (!spec.default_value.empty())
            rc.values_[spec.key] = {spec.default_value, "default"};

    if (file) {
        std::ifstream in(*file);
        if (!in)
            throw RunConfigError(file->string(), "cannot read config file");
        std::stringstream buf;
        buf << in.rdbuf();
        for (auto& [k, v] : parse_config_text(buf.str(), file->string())) {
            if (!schema.find(k))
                throw RunConfigError(v.origin, "unknown key '" + k + "' for stage " + schema.stage);
            rc.values_[k] = v;
        }
    }
    for (const auto& [k, v] : flags) {
        if (!schema.find(k))
            throw RunConfigError("--" + k, "unknown key for stage " + schema.stage);
        rc.values_[k] = {v, "--" + k};
    }
    for (const auto& spec : schema.keys) {
        auto it = rc.values_.find(spec.key);
        if (it == rc.values_.end() || it->second.text.empty()) {
            if (spec.required)
                throw RunConfigError("--" + spec.key, "required key '" + spec.key + "' is missing");
            rc.values_.erase(spec.key);
            continue;
        }
        check_value(spec, it->second);
    }
    return rc;
}

bool RunConfig::has(const std::string& k) const
{
    return values_.count(k) > 0;
}

void RunConfig::fail(const std::string& k, const std::string& what) const
{
    auto it = values_.find(k);
    throw RunConfigError(it == values_.end() ? "--" + k : it->second.origin, "key '" + k + "': " + what);
}

int64_t RunConfig::get_int(const std::string& k) const
{
    int64_t v = 0;
    if (!has(k) || !parse_int(values_.at(k).text, v))
        fail(k, "missing or not an integer");
    return v;
}

double RunConfig::get_real(const std::string& k) const
{
    double v = 0;
    if (!has(k) || !parse_real(values_.at(k).text, v))
        fail(k, "missing or not a number");
    return v;
}

bool RunConfig::get_bool(const std::string& k) const
{
    bool v = false;
    if (!has(k) || !parse_bool(values_.at(k).text, v))
        fail(k, "missing or not a boolean");
    return v;
}

std::string RunConfig::get_text(const std::string& k) const
{
    return has(k) ? values_.at(k).text : std::string();
}

std::filesystem::path RunConfig::get_path(const std::string& k) const
{
    if (!has(k))
        fail(k, "missing path");
    return values_.at(k).text;
}

std::string RunConfig::canonical() const
{
    std::string out;
    for (const auto& [k, v] : values_)
        out += k + "=" + v.text + "\n";
    return out;
}

} // namespace pixdec::cli
