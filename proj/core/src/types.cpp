// Copyright (C) 2026 The pixdec Authors
// SPDX-License-Identifier: Apache-2.0

#include "pixdec/types.hpp"

#include "pixdec/errors.hpp"

namespace pixdec {

std::string to_string(EncoderKind kind)
{
    return kind == EncoderKind::Vae ? "vae" : "semantic";
}

EncoderKind encoder_kind_from_string(const std::string& s)
{
    if (s == "vae")
        return EncoderKind::Vae;
    if (s == "semantic")
        return EncoderKind::Semantic;
    throw ConfigError("unknown encoder kind '" + s + "'");
}

} // namespace pixdec
