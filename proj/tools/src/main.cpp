// Copyright (C) 2026 The pixdec Authors
// SPDX-License-Identifier: Apache-2.0

#include "pixdec_cli/cli.hpp"

int main(int argc, char** argv)
{
    return pixdec::cli::run(argc, argv);
}
