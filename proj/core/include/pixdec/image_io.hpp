// Copyright (C) 2026 The pixdec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// 8-bit PNG export/import and a minimal raster line plot.

#include <torch/torch.h>

#include <filesystem>
#include <string>
#include <vector>

namespace pixdec {

/// Image [3,H,W] in [-1,1] (values clamped) to 8-bit RGB PNG.
void write_png(const std::filesystem::path& path, const torch::Tensor& image);

/// 8-bit RGB PNG to [3,H,W] float in [-1,1].
torch::Tensor read_png(const std::filesystem::path& path);

/// Lays out a batch [B,3,H,W] as one row.
torch::Tensor tile_row(const torch::Tensor& batch);

struct PlotSeries {
    std::vector<double> x;
    std::vector<double> y;
};

/// Polylines on a white canvas with axes; colors cycle through a fixed palette.
void write_line_plot(const std::filesystem::path& path, const std::vector<PlotSeries>& series, int64_t width = 480,
                     int64_t height = 320);

} // namespace pixdec
