// Copyright (C) 2026 The pixdec Authors
// SPDX-License-Identifier: Apache-2.0

#include "fixtures.hpp"

#include "pixdec/codecs.hpp"
#include "pixdec/errors.hpp"

#include <gtest/gtest.h>

#include <map>

using namespace pixdec;
using namespace pixdec::testing;

namespace {

torch::Tensor random_images(int64_t b, int64_t h, int64_t w, uint64_t seed)
{
    Rng rng(seed);
    return rng.uniform({b, 3, h, w}).mul(2).sub(1);
}

} // namespace

TEST(Vae, RoundTripShape)
{
    Vae vae(VaeConfig{}, 3);
    auto x = random_images(2, 32, 48, 1);
    torch::NoGradGuard g;
    auto z = vae->encode(x);
    EXPECT_EQ(z.sizes(), (std::vector<int64_t>{2, 8, 4, 6}));
    auto y = vae->decode(z);
    EXPECT_EQ(y.sizes(), x.sizes());
    EXPECT_LE(y.max().item<double>(), 1.0);
    EXPECT_GE(y.min().item<double>(), -1.0);
}

TEST(Vae, IndivisibleSidesRejected)
{
    Vae vae(VaeConfig{}, 3);
    EXPECT_THROW(vae->encode(random_images(1, 20, 32, 1)), ShapeError);
    EXPECT_THROW(vae->encode(torch::zeros({1, 1, 32, 32})), ShapeError);
    EXPECT_THROW(vae->decode(torch::zeros({1, 3, 4, 4})), ShapeError);
}

TEST(Vae, StandardPosteriorHasZeroKl)
{
    auto mean = torch::zeros({2, 8, 3, 3});
    auto logvar = torch::zeros({2, 8, 3, 3});
    EXPECT_DOUBLE_EQ(VaeImpl::kl(mean, logvar).item<double>(), 0.0);
    EXPECT_GT(VaeImpl::kl(mean + 0.5, logvar).item<double>(), 0.0);
}

TEST(Vae, EncodeIsDeterministic)
{
    Vae vae(tiny_vae(), 5);
    auto x = random_images(2, 16, 16, 2);
    torch::NoGradGuard g;
    EXPECT_TRUE(torch::equal(vae->encode(x), vae->encode(x)));
}

TEST(Vae, SamplingUsesOnlyCallerRng)
{
    auto mean = torch::zeros({1, 4, 2, 2});
    auto logvar = torch::zeros({1, 4, 2, 2});
    Rng a(9), b(9);
    torch::manual_seed(1);
    auto s1 = VaeImpl::sample(mean, logvar, a);
    torch::manual_seed(2);
    auto s2 = VaeImpl::sample(mean, logvar, b);
    EXPECT_TRUE(torch::equal(s1, s2));
}

TEST(Vae, LatentScaleAppliesToEncodeAndDecode)
{
    Vae vae(tiny_vae(), 5);
    auto x = random_images(1, 16, 16, 3);
    torch::NoGradGuard g;
    auto z1 = vae->encode(x);
    auto d1 = vae->decode(z1);
    vae->set_latent_scale(2.5);
    auto z2 = vae->encode(x);
    EXPECT_TRUE(torch::allclose(z2, z1 * 2.5, 1e-5, 1e-6));
    EXPECT_TRUE(torch::allclose(vae->decode(z2), d1, 1e-5, 1e-5));
    EXPECT_DOUBLE_EQ(vae->spec().latent_scale, 2.5);
}

TEST(Vae, SpecHashTracksWeights)
{
    Vae a(tiny_vae(), 1), b(tiny_vae(), 1), c(tiny_vae(), 2);
    EXPECT_EQ(a->spec().id_hash, b->spec().id_hash);
    EXPECT_NE(a->spec().id_hash, c->spec().id_hash);
    EXPECT_EQ(a->spec().downsample_factor, 2);
    EXPECT_EQ(a->spec().kind, EncoderKind::Vae);
}

TEST(VaeConfig, Validation)
{
    VaeConfig c;
    EXPECT_NO_THROW(c.validate());
    c.levels = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = VaeConfig{};
    c.latent_channels = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    nlohmann::json j = tiny_vae();
    EXPECT_EQ(j.get<VaeConfig>(), tiny_vae());
}

TEST(SemanticEncoder, Deterministic)
{
    SemanticEncoder enc(4);
    auto x = random_images(2, 32, 32, 4);
    auto a = enc.encode(x);
    auto b = enc.encode(x);
    EXPECT_TRUE(torch::equal(a, b));
    EXPECT_EQ(a.sizes(), (std::vector<int64_t>{2, 8, 4, 4}));
    EXPECT_FALSE(a.requires_grad());
}

TEST(SemanticEncoder, HashChangesWithSeed)
{
    EXPECT_EQ(SemanticEncoder(4).spec().id_hash, SemanticEncoder(4).spec().id_hash);
    EXPECT_NE(SemanticEncoder(4).spec().id_hash, SemanticEncoder(5).spec().id_hash);
    EXPECT_EQ(SemanticEncoder(4).spec().kind, EncoderKind::Semantic);
}

TEST(SemanticEncoder, RejectsIndivisibleSides)
{
    SemanticEncoder enc(4);
    EXPECT_THROW(enc.encode(random_images(1, 12, 16, 1)), ShapeError);
}

// Leave-one-out 1-NN over semantic latents must beat the majority-class rate.
TEST(SemanticEncoder, NearestNeighbourGroupsClasses)
{
    auto corpus = generate_corpus(200, 11, {Bucket{32, 32}});
    std::vector<torch::Tensor> imgs;
    std::map<int64_t, int64_t> class_counts;
    std::vector<int64_t> labels;
    for (const auto& s : corpus) {
        imgs.push_back(s.image);
        labels.push_back(s.generator_class);
        ++class_counts[s.generator_class];
    }
    SemanticEncoder enc(0);
    auto feats = enc.encode(torch::stack(imgs)).flatten(1);
    auto d = torch::cdist(feats, feats);
    d.fill_diagonal_(std::numeric_limits<float>::infinity());
    auto nn = d.argmin(1);
    int64_t hits = 0;
    for (int64_t i = 0; i < 200; ++i)
        hits += labels[static_cast<size_t>(nn[i].item<int64_t>())] == labels[static_cast<size_t>(i)];
    int64_t majority = 0;
    for (auto& [k, v] : class_counts)
        majority = std::max(majority, v);
    EXPECT_GT(hits, majority) << "1-NN hits " << hits << " vs majority " << majority;
}

TEST(Cascade, OutputSidesScale)
{
    Vae vae(VaeConfig{}, 1);
    auto z = torch::randn({1, 8, 16, 16});
    for (int64_t s : {2, 4, 8}) {
        auto r = cascade_upsample(vae, z, s);
        EXPECT_EQ(r.x_dec.size(2), 128);
        EXPECT_EQ(r.x_up.size(2), 128 * s);
        EXPECT_EQ(r.x_up.size(3), 128 * s);
    }
}

TEST(Cascade, ScaleFourOnSmallLatent)
{
    Vae vae(tiny_vae(), 1); // factor 2: 16x16 latent of a 32x32 image
    auto r = cascade_upsample(vae, torch::randn({1, 4, 16, 16}), 4);
    EXPECT_EQ(r.x_dec.sizes(), (std::vector<int64_t>{1, 3, 32, 32}));
    EXPECT_EQ(r.x_up.sizes(), (std::vector<int64_t>{1, 3, 128, 128}));
}

TEST(Cascade, IdentityAtScaleOne)
{
    Vae vae(tiny_vae(), 1);
    auto r = cascade_upsample(vae, torch::randn({1, 4, 4, 4}), 1);
    EXPECT_TRUE(torch::equal(r.x_dec, r.x_up));
}

TEST(Cascade, UnsupportedScale)
{
    Vae vae(tiny_vae(), 1);
    auto z = torch::randn({1, 4, 4, 4});
    EXPECT_THROW(cascade_upsample(vae, z, 3), DomainError);
    EXPECT_THROW(cascade_upsample(vae, z, 16), DomainError);
    EXPECT_THROW(cascade_upsample(vae, z, 0), DomainError);
}

TEST(Cascade, PureFunctionOfInputs)
{
    Vae vae(tiny_vae(), 1);
    auto z = torch::randn({1, 4, 4, 4});
    auto a = cascade_upsample(vae, z, 4);
    auto b = cascade_upsample(vae, z, 4);
    EXPECT_TRUE(torch::equal(a.x_up, b.x_up));
}

TEST(Resample, AreaInvertsReplication)
{
    auto x = random_images(1, 8, 8, 6);
    auto up = x.repeat_interleave(4, 2).repeat_interleave(4, 3);
    EXPECT_TRUE(torch::allclose(area_downsample(up, 4), x, 1e-6, 1e-6));
    EXPECT_THROW(area_downsample(x, 3), ShapeError);
}

TEST(Resample, BicubicPreservesConstantsAndRange)
{
    auto c = torch::full({1, 3, 5, 5}, 0.3);
    EXPECT_TRUE(torch::allclose(bicubic_upsample(c, 2), torch::full({1, 3, 10, 10}, 0.3), 1e-5, 1e-6));
    auto sharp = torch::ones({1, 1, 4, 4});
    sharp.index_put_({0, 0, torch::indexing::Slice(), torch::indexing::Slice(0, 2)}, -1.0);
    auto up = bicubic_upsample(sharp, 4);
    EXPECT_LE(up.max().item<double>(), 1.0);
    EXPECT_GE(up.min().item<double>(), -1.0);
}
