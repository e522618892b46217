// Copyright (C) 2026 The pixdec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// User-facing decoding flows: latent-to-pixel decoding, early-exit decoding
// from a partially denoised base latent, the exit-step sweep, and the
// latency benchmark.

#include "pixdec/base_ldm.hpp"
#include "pixdec/decoder.hpp"
#include "pixdec/flowmath.hpp"
#include "pixdec/types.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace pixdec {

using WarningFn = std::function<void(const std::string&)>;

struct DecodeRequest {
    SigmaNoisedLatent latent;                       // [B,C,h,w]
    std::vector<TextCondition> texts;               // one per sample, or empty for the null caption
    int64_t scale = 4;                              // output side / latent-source side
    int64_t steps = 25;                             // teacher Euler steps
    std::optional<flow::SigmaSchedule> schedule;    // student schedule; overrides `steps`
    double guidance = 1.0;                          // over text
    uint64_t seed = 0;
    double sigma_max = 0.8;
    WarningFn on_warning;                           // defaults to stderr
};

/// Output sides are scale * latent side * encoder factor. Throws DomainError
/// for an unsupported scale; warns and proceeds when sigma > sigma_max.
ImageGrid decode(const DecodeRequest& req, PixelDecoder& decoder);

struct EarlyExitResult {
    ImageGrid image;
    PartialLatent partial;
};

struct EarlyExitOptions {
    int64_t scale = 4;
    int64_t decode_steps = 25;
    std::optional<flow::SigmaSchedule> schedule;
    double decode_guidance = 1.0;
    double ldm_guidance = 1.0;
    uint64_t seed = 0;
    WarningFn on_warning;
};

/// Sample the base latent to step M of N, then decode it with sigma equal to
/// the residual noise level. Base and decoder noise come from separate
/// streams of `opts.seed`.
EarlyExitResult decode_early_exit(const std::vector<TextCondition>& texts, int64_t steps_total, int64_t stop_at,
                                  PixelDecoder& decoder, BaseLdm& base_ldm, const EarlyExitOptions& opts);

struct SweepRow {
    int64_t prompt = 0;
    int64_t stop_at = 0;
    int64_t steps_total = 0;
    double residual_sigma = 0.0;
    double psnr_vs_reference = 0.0;
    double wallclock_ms = 0.0;
};

struct SweepReport {
    std::vector<SweepRow> rows;

    std::string to_csv() const;
    void write_csv(const std::filesystem::path& path) const;
    /// PSNR-to-reference against M, one line per prompt.
    void write_plot(const std::filesystem::path& path) const;
};

/// One early-exit decode per M in 1..N per prompt; PSNR is measured against
/// the M = N decode of the same prompt (capped at self-comparison).
SweepReport sweep_exit_steps(const std::vector<TextCondition>& texts, int64_t steps_total, PixelDecoder& decoder,
                             BaseLdm& base_ldm, const EarlyExitOptions& opts);

struct BenchmarkRow {
    int64_t side = 0;
    bool skipped = false;
    std::string note;
    int64_t repeats = 0;
    double median_ms = 0.0;
    double p90_ms = 0.0;
    int64_t peak_rss_kb = -1;
    std::vector<double> samples_ms;
};

struct BenchmarkOptions {
    int64_t repeats = 20;
    int64_t warmup = 2;
    int64_t scale = 4;
    int64_t steps = 4;
    std::optional<flow::SigmaSchedule> schedule = flow::SigmaSchedule::four_step();
    int64_t latent_factor = 8;
    int64_t latent_channels = 8;
    uint64_t seed = 0;
};

struct BenchmarkTable {
    std::vector<BenchmarkRow> rows;

    std::string to_csv() const;
    void write_csv(const std::filesystem::path& path) const;
    void write_plot(const std::filesystem::path& path) const;
};

/// Wall-clock per single-image decode at each output side, single-threaded.
/// Warmup runs are excluded; sides that do not tile into latent cells and
/// patches are skipped with a note.
BenchmarkTable benchmark(PixelDecoder& decoder, const std::vector<int64_t>& sides, const BenchmarkOptions& opts);

/// Nearest-rank percentile of unsorted samples; q in [0,1].
double percentile(std::vector<double> values, double q);

/// Middle value, or the mean of the two middle values for even counts.
double median(std::vector<double> values);

} // namespace pixdec
