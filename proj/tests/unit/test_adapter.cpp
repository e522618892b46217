// Copyright (C) 2026 The pixdec Authors
// SPDX-License-Identifier: Apache-2.0

#include "pixdec/adapter.hpp"
#include "pixdec/decoder.hpp"
#include "pixdec/errors.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "fixtures.hpp"

using namespace pixdec;
using namespace pixdec::testing;

namespace {

double sigmoid(double x)
{
    return 1.0 / (1.0 + std::exp(-x));
}

LatentAdapter make_adapter(int64_t points = 2, uint64_t seed = 0)
{
    return LatentAdapter(tiny_adapter(), 16, points, seed);
}

} // namespace

TEST(NearestResize, ReplicatesCells)
{
    auto z = torch::arange(16, torch::kFloat).view({1, 1, 4, 4});
    auto up = nearest_resize(z, 16, 16);
    ASSERT_EQ(up.sizes(), (std::vector<int64_t>{1, 1, 16, 16}));
    for (int64_t i = 0; i < 16; ++i)
        for (int64_t j = 0; j < 16; ++j)
            EXPECT_EQ(up[0][0][i][j].item<float>(), z[0][0][i / 4][j / 4].item<float>());
    EXPECT_THROW(nearest_resize(z, 2, 2), DomainError);
}

TEST(Project, ZeroAtInit)
{
    auto a = make_adapter(3);
    Rng rng(1);
    auto z = rng.normal({2, 4, 4, 4});
    auto tokens = a->project(z, torch::tensor({0.0f, 0.7f}), 8, 8);
    ASSERT_EQ(tokens.size(), 3u);
    for (const auto& l : tokens) {
        EXPECT_EQ(l.sizes(), (std::vector<int64_t>{2, 64, 16}));
        EXPECT_EQ(l.abs().max().item<double>(), 0.0);
    }
}

TEST(Project, DistinctLatentsDistinctTokensOnceTrained)
{
    auto a = make_adapter();
    perturb(*a, 2);
    Rng rng(3);
    auto s = torch::tensor({0.2f});
    auto la = a->project(rng.normal({1, 4, 4, 4}), s, 8, 8);
    auto lb = a->project(rng.normal({1, 4, 4, 4}), s, 8, 8);
    EXPECT_FALSE(torch::allclose(la[0], lb[0]));
}

TEST(Gate, InitLaw)
{
    auto a = make_adapter();
    Rng rng(4);
    auto h = rng.normal({1, 64, 16});
    auto l = rng.normal({1, 64, 16});
    for (double s : {0.0, 0.2, 0.4, 0.8}) {
        auto g = a->gate(0, h, l, torch::tensor({static_cast<float>(s)}));
        const double expected = sigmoid(2.0 - 5.0 * s);
        EXPECT_LT((g.to(torch::kDouble) - expected).abs().max().item<double>(), 1e-6);
    }
    EXPECT_NEAR(sigmoid(2.0), 0.88080, 1e-5);
    EXPECT_NEAR(sigmoid(-2.0), 0.11920, 1e-5);
}

TEST(Gate, RangeAndMonotoneWhenTrained)
{
    auto a = make_adapter();
    perturb(*a, 5, 0.5);
    Rng rng(6);
    auto h = rng.normal({2, 64, 16});
    auto l = rng.normal({2, 64, 16});
    torch::Tensor prev;
    for (int k = 0; k <= 10; ++k) {
        const float s = static_cast<float>(k) / 10.0f;
        auto g = a->gate(1, h, l, torch::full({2}, s));
        EXPECT_GT(g.min().item<double>(), 0.0);
        EXPECT_LT(g.max().item<double>(), 1.0);
        if (prev.defined())
            EXPECT_TRUE((g < prev).all().item<bool>());
        prev = g;
    }
}

TEST(Gate, AlphaStaysPositive)
{
    auto a = make_adapter();
    EXPECT_NEAR(a->alpha().item<double>(), 5.0, 1e-6);
    {
        torch::NoGradGuard g;
        for (auto& item : a->named_parameters())
            if (item.key().find("alpha") != std::string::npos)
                item.value().fill_(-50.0);
    }
    EXPECT_GT(a->alpha().item<double>(), 0.0);
}

TEST(Gate, ShapeMismatch)
{
    auto a = make_adapter();
    EXPECT_THROW(a->gate(0, torch::zeros({1, 64, 16}), torch::zeros({1, 32, 16}), torch::zeros({1})), ShapeError);
}

TEST(Inject, ZeroTokensLeaveHiddenUntouched)
{
    auto a = make_adapter();
    Rng rng(7);
    auto h = rng.normal({1, 64, 16});
    EXPECT_TRUE(torch::equal(a->inject(0, h, torch::zeros_like(h), torch::tensor({0.3f})), h));
}

TEST(Inject, ForcedOpenGateAddsTokens)
{
    auto a = make_adapter();
    a->set_gate_bias(1e4);
    Rng rng(8);
    auto h = rng.normal({1, 64, 16});
    auto l = rng.normal({1, 64, 16});
    EXPECT_TRUE(torch::allclose(a->inject(0, h, l, torch::tensor({0.0f})), h + l));
}

TEST(Inject, MagnitudeNonIncreasingInSigma)
{
    auto a = make_adapter();
    perturb(*a, 9, 0.5);
    Rng rng(10);
    auto h = rng.normal({1, 64, 16});
    auto l = rng.normal({1, 64, 16});
    double prev = 1e9;
    for (int k = 0; k <= 8; ++k) {
        auto s = torch::tensor({static_cast<float>(k) / 8.0f});
        const double mag = (a->inject(0, h, l, s) - h).abs().mean().item<double>();
        EXPECT_LE(mag, prev);
        prev = mag;
    }
}

TEST(Decoder, ZeroInitTransparency)
{
    Backbone prior(tiny_backbone(), 1);
    perturb(*prior, 2);
    PixelDecoder decoder(PixelDecoderImpl::from_prior(prior, tiny_adapter(), 3));
    Rng rng(4);
    torch::NoGradGuard g;
    for (int trial = 0; trial < 10; ++trial) {
        auto x = rng.normal({2, 3, 16, 16});
        auto t = rng.uniform({2});
        auto sigma = rng.uniform({2});
        auto text = prior->encode_text({Vocabulary::parse("blob red blue small"), TextCondition{}});
        LatentInput latent{rng.normal({2, 4, 4, 4}), sigma, {}};
        auto a = decoder->forward(x, t, text, &latent);
        auto b = prior->forward(x, t, text);
        EXPECT_LE(((a - b).abs().max() / b.abs().max().clamp_min(1e-12)).item<double>(), 1e-6);
    }
}

TEST(Decoder, InjectionCountAndPixelHeadUntouched)
{
    auto c = tiny_backbone();
    c.num_blocks = 4;
    PixelDecoder decoder(DecoderConfig{c, tiny_adapter()}, 0);
    EXPECT_EQ(decoder->adapter()->num_points(), 2);
    LatentInput latent{torch::zeros({1, 4, 4, 4}), torch::zeros({1}), {}};
    torch::NoGradGuard g;
    auto out = decoder->forward_full(torch::zeros({1, 3, 16, 16}), torch::zeros({1}),
                                     decoder->backbone()->null_text(1), &latent, false);
    EXPECT_EQ(out.injections, 2);
}

TEST(Decoder, TensorNamesFollowLayout)
{
    PixelDecoder decoder(tiny_decoder(), 0);
    bool stem = false, res = false, head = false, gate = false, alpha = false, backbone = false;
    for (const auto& [name, t] : module_tensors(*decoder)) {
        stem |= name.rfind("adapter.stem.", 0) == 0;
        res |= name.rfind("adapter.res0.", 0) == 0;
        head |= name.rfind("adapter.head0.", 0) == 0;
        gate |= name.rfind("adapter.gate0.", 0) == 0;
        alpha |= name.rfind("adapter.alpha", 0) == 0;
        backbone |= name.rfind("backbone.", 0) == 0;
    }
    EXPECT_TRUE(stem && res && head && gate && alpha && backbone);
}

TEST(AdapterConfig, Validation)
{
    auto a = tiny_adapter();
    auto b = tiny_backbone();
    EXPECT_NO_THROW(a.validate(b));
    a.injection_every = 3;
    EXPECT_THROW(a.validate(b), ConfigError);
    a = tiny_adapter();
    a.group_count = 3;
    EXPECT_THROW(a.validate(b), ConfigError);
    a = tiny_adapter();
    a.gate_alpha_init = 0.0;
    EXPECT_THROW(a.validate(b), ConfigError);
}
