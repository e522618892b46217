// Copyright (C) 2026 The pixdec Authors
// SPDX-License-Identifier: Apache-2.0

#include "pixdec/pipeline.hpp"

#include "pixdec/errors.hpp"
#include "pixdec/eval.hpp"
#include "pixdec/image_io.hpp"

#include <sys/resource.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

namespace pixdec {

namespace {

void warn(const WarningFn& fn, const std::string& msg)
{
    if (fn)
        fn(msg);
    else
        std::cerr << "warning: " << msg << '\n';
}

int64_t peak_rss_kb()
{
    rusage usage{};
    if (getrusage(RUSAGE_SELF, &usage) != 0)
        return -1;
    return static_cast<int64_t>(usage.ru_maxrss);
}

void write_text(const std::filesystem::path& path, const std::string& text)
{
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out)
        throw std::runtime_error("cannot write " + path.string());
    out << text;
}

void check_scale(int64_t s)
{
    if (s != 1 && s != 2 && s != 4 && s != 8)
        throw DomainError("decode: unsupported scale " + std::to_string(s) + " (use 1, 2, 4 or 8)");
}

} // namespace

ImageGrid decode(const DecodeRequest& req, PixelDecoder& decoder)
{
    check_scale(req.scale);
    auto z = req.latent.latent.values;
    if (!z.defined() || z.dim() != 4)
        throw ShapeError("decode: latent must be [B,C,h,w]");
    const auto& bc = decoder->config().backbone;
    const auto factor = req.latent.latent.encoder.downsample_factor;
    const auto B = z.size(0);
    const auto H = req.scale * z.size(2) * factor;
    const auto W = req.scale * z.size(3) * factor;
    if (H % bc.patch_size != 0 || W % bc.patch_size != 0)
        throw DomainError("decode: output " + std::to_string(H) + "x" + std::to_string(W) +
                          " does not tile into patches of " + std::to_string(bc.patch_size));
    if (req.latent.sigma < 0.0 || req.latent.sigma > 1.0)
        throw DomainError("decode: sigma outside [0,1]");
    if (req.latent.sigma > req.sigma_max)
        warn(req.on_warning, "latent sigma " + std::to_string(req.latent.sigma) + " exceeds sigma_max " +
                                 std::to_string(req.sigma_max) + "; decoding out of distribution");
    if (!req.texts.empty() && static_cast<int64_t>(req.texts.size()) != B)
        throw ShapeError("decode: need one caption per latent");

    torch::NoGradGuard no_grad;
    const auto dtype = decoder->parameters().front().scalar_type();
    auto backbone = decoder->backbone();
    auto text = req.texts.empty() ? backbone->null_text(B) : backbone->encode_text(req.texts);
    auto null = backbone->null_text(B);
    LatentInput latent{z.to(dtype), torch::full({B}, req.latent.sigma, dtype), torch::Tensor()};

    std::vector<double> times = req.schedule ? req.schedule->times() : flow::shifted_times(req.steps, bc.time_shift);
    Rng rng(mix_seed(req.seed, "decode"));
    auto x = rng.normal({B, bc.in_channels, H, W}, dtype);
    auto velocity = [&](const torch::Tensor& xt, double t) {
        auto tt = torch::full({B}, t, xt.options());
        auto v = decoder->forward(xt, tt, text, &latent);
        if (req.guidance == 1.0)
            return v;
        return flow::cfg_combine(v, decoder->forward(xt, tt, null, &latent), req.guidance);
    };
    return flow::euler_integrate({x, times.front()}, velocity, times).clamp(-1.0, 1.0);
}

EarlyExitResult decode_early_exit(const std::vector<TextCondition>& texts, int64_t steps_total, int64_t stop_at,
                                  PixelDecoder& decoder, BaseLdm& base_ldm, const EarlyExitOptions& opts)
{
    Rng base_rng(mix_seed(opts.seed, "base_ldm"));
    EarlyExitResult out;
    out.partial = base_ldm.sample(texts, steps_total, stop_at, base_rng, opts.ldm_guidance);

    DecodeRequest req;
    req.latent = {out.partial.latent, out.partial.residual_sigma};
    req.texts = texts;
    req.scale = opts.scale;
    req.steps = opts.decode_steps;
    req.schedule = opts.schedule;
    req.guidance = opts.decode_guidance;
    req.seed = opts.seed;
    req.on_warning = opts.on_warning;
    out.image = decode(req, decoder);
    return out;
}

std::string SweepReport::to_csv() const
{
    std::ostringstream os;
    os.precision(10);
    os << "prompt,M,N,residual_sigma,psnr_vs_reference,wallclock_ms\n";
    for (const auto& r : rows)
        os << r.prompt << ',' << r.stop_at << ',' << r.steps_total << ',' << r.residual_sigma << ','
           << r.psnr_vs_reference << ',' << r.wallclock_ms << '\n';
    return os.str();
}

void SweepReport::write_csv(const std::filesystem::path& path) const
{
    write_text(path, to_csv());
}

void SweepReport::write_plot(const std::filesystem::path& path) const
{
    std::vector<PlotSeries> series;
    for (const auto& r : rows) {
        if (series.size() <= static_cast<size_t>(r.prompt))
            series.resize(static_cast<size_t>(r.prompt) + 1);
        series[static_cast<size_t>(r.prompt)].x.push_back(static_cast<double>(r.stop_at));
        series[static_cast<size_t>(r.prompt)].y.push_back(r.psnr_vs_reference);
    }
    write_line_plot(path, series);
}

SweepReport sweep_exit_steps(const std::vector<TextCondition>& texts, int64_t steps_total, PixelDecoder& decoder,
                             BaseLdm& base_ldm, const EarlyExitOptions& opts)
{
    if (steps_total < 2)
        throw DomainError("sweep: N must be >= 2");
    SweepReport report;
    for (size_t p = 0; p < texts.size(); ++p) {
        const std::vector<TextCondition> one = {texts[p]};
        std::vector<torch::Tensor> images;
        std::vector<SweepRow> rows;
        for (int64_t m = 1; m <= steps_total; ++m) {
            const auto start = std::chrono::steady_clock::now();
            auto res = decode_early_exit(one, steps_total, m, decoder, base_ldm, opts);
            const auto stop = std::chrono::steady_clock::now();
            images.push_back(res.image);
            rows.push_back({static_cast<int64_t>(p), m, steps_total, res.partial.residual_sigma, 0.0,
                            std::chrono::duration<double, std::milli>(stop - start).count()});
        }
        for (size_t i = 0; i < rows.size(); ++i) {
            rows[i].psnr_vs_reference = eval::psnr(images[i], images.back());
            report.rows.push_back(rows[i]);
        }
    }
    return report;
}

double percentile(std::vector<double> values, double q)
{
    if (values.empty())
        throw DomainError("percentile: no values");
    std::sort(values.begin(), values.end());
    const auto n = static_cast<double>(values.size());
    auto rank = static_cast<size_t>(std::ceil(std::clamp(q, 0.0, 1.0) * n));
    return values[std::max<size_t>(rank, 1) - 1];
}

double median(std::vector<double> values)
{
    if (values.empty())
        throw DomainError("median: no values");
    const auto mid = values.size() / 2;
    std::nth_element(values.begin(), values.begin() + static_cast<long>(mid), values.end());
    const double hi = values[mid];
    if (values.size() % 2 == 1)
        return hi;
    const double lo = *std::max_element(values.begin(), values.begin() + static_cast<long>(mid));
    return 0.5 * (lo + hi);
}

std::string BenchmarkTable::to_csv() const
{
    std::ostringstream os;
    os.precision(10);
    os << "side,pixels,repeats,median_ms,p90_ms,peak_rss_kb,note\n";
    for (const auto& r : rows)
        os << r.side << ',' << r.side * r.side << ',' << r.repeats << ',' << r.median_ms << ',' << r.p90_ms << ','
           << r.peak_rss_kb << ',' << r.note << '\n';
    return os.str();
}

void BenchmarkTable::write_csv(const std::filesystem::path& path) const
{
    write_text(path, to_csv());
}

void BenchmarkTable::write_plot(const std::filesystem::path& path) const
{
    PlotSeries median, p90;
    for (const auto& r : rows) {
        if (r.skipped)
            continue;
        median.x.push_back(static_cast<double>(r.side * r.side));
        median.y.push_back(r.median_ms);
        p90.x.push_back(static_cast<double>(r.side * r.side));
        p90.y.push_back(r.p90_ms);
    }
    write_line_plot(path, {median, p90});
}

BenchmarkTable benchmark(PixelDecoder& decoder, const std::vector<int64_t>& sides, const BenchmarkOptions& opts)
{
    if (opts.repeats < 1 || opts.warmup < 0)
        throw DomainError("benchmark: repeats must be >= 1 and warmup >= 0");
    const int previous_threads = at::get_num_threads();
    at::set_num_threads(1);
    const auto patch = decoder->config().backbone.patch_size;
    const auto cell = opts.scale * opts.latent_factor;
    const auto dtype = decoder->parameters().front().scalar_type();

    BenchmarkTable table;
    for (auto side : sides) {
        BenchmarkRow row;
        row.side = side;
        if (side < cell || side % cell != 0 || side % patch != 0) {
            row.skipped = true;
            row.note = "side not divisible by latent cell " + std::to_string(cell) + " and patch " +
                       std::to_string(patch);
            table.rows.push_back(row);
            continue;
        }
        Rng rng(mix_seed(opts.seed, "benchmark"));
        const auto h = side / cell;
        DecodeRequest req;
        req.latent.latent.values = rng.normal({1, opts.latent_channels, h, h}, dtype);
        req.latent.latent.encoder.downsample_factor = opts.latent_factor;
        req.latent.latent.encoder.latent_channels = opts.latent_channels;
        req.scale = opts.scale;
        req.steps = opts.steps;
        req.schedule = opts.schedule;
        req.seed = opts.seed;
        for (int64_t i = 0; i < opts.warmup; ++i)
            (void)decode(req, decoder);
        for (int64_t i = 0; i < opts.repeats; ++i) {
            const auto start = std::chrono::steady_clock::now();
            (void)decode(req, decoder);
            const auto stop = std::chrono::steady_clock::now();
            row.samples_ms.push_back(std::chrono::duration<double, std::milli>(stop - start).count());
        }
        row.repeats = opts.repeats;
        row.median_ms = median(row.samples_ms);
        row.p90_ms = percentile(row.samples_ms, 0.9);
        row.peak_rss_kb = peak_rss_kb();
        table.rows.push_back(row);
    }
    at::set_num_threads(previous_threads);
    return table;
}

} // namespace pixdec
