// Copyright (C) 2026 The pixdec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace pixdec::cli {

/// Process exit codes.
enum ExitCode : int {
    kOk = 0,
    kFailure = 1,
    kBadConfig = 2,       // flags, config file or value out of range; nothing written
    kMissingInput = 3,    // checkpoint or input file absent
    kCorruptArtifact = 4, // integrity or version error while loading
};

/// Environment variable naming the directory that relative outputs land in.
inline constexpr const char* kOutDirEnv = "PIXDEC_OUT_DIR";

/// Runs one subcommand. `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int run(int argc, char** argv);

} // namespace pixdec::cli
