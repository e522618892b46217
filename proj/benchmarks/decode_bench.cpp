// Copyright (C) 2026 The pixdec Authors
// SPDX-License-Identifier: Apache-2.0

// Four-step decode latency of a fresh desk_fast decoder at several output
// sides, plus the cost of one backbone forward. Absolute numbers depend on
// the host; only the scaling across sides is meaningful.

#include "pixdec/decoder.hpp"
#include "pixdec/flowmath.hpp"
#include "pixdec/pipeline.hpp"

#include <benchmark/benchmark.h>

namespace {

using namespace pixdec;

PixelDecoder& shared_decoder()
{
    static PixelDecoder decoder = [] {
        torch::set_num_threads(1);
        PixelDecoder d(DecoderConfig{BackboneConfig::desk_fast(), AdapterConfig{}}, 0);
        d->eval();
        return d;
    }();
    return decoder;
}

void BM_FourStepDecode(benchmark::State& state)
{
    const int64_t side = state.range(0);
    auto& decoder = shared_decoder();
    const int64_t scale = 4;
    const int64_t factor = 8;
    const int64_t h = side / (scale * factor);
    DecodeRequest req;
    req.latent.latent.values = torch::zeros({1, 8, h, h});
    req.latent.latent.encoder.latent_channels = 8;
    req.latent.latent.encoder.downsample_factor = factor;
    req.scale = scale;
    req.schedule = flow::SigmaSchedule::four_step();
    torch::NoGradGuard no_grad;
    for (auto _ : state)
        benchmark::DoNotOptimize(decode(req, decoder));
    state.SetLabel(std::to_string(side) + "x" + std::to_string(side));
}
BENCHMARK(BM_FourStepDecode)->Arg(32)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_BackboneForward(benchmark::State& state)
{
    const int64_t side = state.range(0);
    auto& decoder = shared_decoder();
    auto x = torch::randn({1, 3, side, side});
    auto t = torch::full({1}, 0.5);
    auto text = decoder->backbone()->encode_text({TextCondition{}});
    torch::NoGradGuard no_grad;
    for (auto _ : state)
        benchmark::DoNotOptimize(decoder->forward(x, t, text));
}
BENCHMARK(BM_BackboneForward)->Arg(32)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

} // namespace

BENCHMARK_MAIN();
