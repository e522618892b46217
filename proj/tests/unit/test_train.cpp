// Copyright (C) 2026 The pixdec Authors
// SPDX-License-Identifier: Apache-2.0

#include "pixdec/errors.hpp"
#include "pixdec/flow_model.hpp"
#include "pixdec/train.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "fixtures.hpp"

using namespace pixdec;
using namespace pixdec::testing;

namespace {

TrainConfig quick(int64_t steps, int64_t scale = 2)
{
    TrainConfig c;
    c.batch_size = 4;
    c.lr = 1e-3;
    c.steps = steps;
    c.scale = scale;
    return c;
}

LatentEncoder tiny_encoder(uint64_t seed = 0)
{
    return make_latent_encoder(Vae(tiny_vae(), seed));
}

double mean_loss(const LossLog& log)
{
    double s = 0;
    for (const auto& r : log.records)
        s += r.loss;
    return s / static_cast<double>(log.records.size());
}

} // namespace

TEST(TrainConfig, Validation)
{
    TrainConfig c;
    EXPECT_NO_THROW(c.validate());
    auto bad = c;
    bad.caption_dropout = 1.0;
    EXPECT_THROW(bad.validate(), ConfigError);
    bad = c;
    bad.latent_dropout = 1.0; // prior-finetuning limit
    EXPECT_NO_THROW(bad.validate());
    bad.latent_dropout = -0.1;
    EXPECT_THROW(bad.validate(), ConfigError);
    bad = c;
    bad.sigma_max = 0.0;
    EXPECT_THROW(bad.validate(), ConfigError);
    bad.sigma_max = 1.2;
    EXPECT_THROW(bad.validate(), ConfigError);
    bad = c;
    bad.ema_decay = 1.5;
    EXPECT_THROW(bad.validate(), ConfigError);
    bad = c;
    bad.precision = "bf16";
    EXPECT_THROW(bad.validate(), ConfigError);
    bad = c;
    bad.time_shift = 0.5;
    EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(TrainConfig, JsonRoundTrip)
{
    TrainConfig c;
    c.freeze_backbone = true;
    c.seed = 17;
    c.precision = "f64";
    nlohmann::json j = c;
    EXPECT_EQ(j.get<TrainConfig>(), c);
}

TEST(Ema, HandRecurrence)
{
    NamedTensors ema{{"w", torch::zeros({1}, torch::kDouble)}};
    NamedTensors raw{{"w", torch::ones({1}, torch::kDouble)}};
    ema_update(ema, raw, 0.9);
    ema_update(ema, raw, 0.9);
    EXPECT_NEAR(ema[0].second.item<double>(), 0.19, 1e-15);
}

TEST(Ema, LimitingDecays)
{
    NamedTensors ema{{"w", torch::full({3}, 5.0)}};
    NamedTensors raw{{"w", torch::full({3}, -2.0)}};
    auto frozen = ema;
    frozen[0].second = frozen[0].second.clone();
    for (int i = 0; i < 10; ++i)
        ema_update(frozen, raw, 1.0);
    EXPECT_TRUE(torch::equal(frozen[0].second, torch::full({3}, 5.0)));
    ema_update(ema, raw, 0.0);
    EXPECT_TRUE(torch::equal(ema[0].second, raw[0].second));
}

TEST(Ema, GeometricGap)
{
    NamedTensors ema{{"w", torch::zeros({1}, torch::kDouble)}};
    NamedTensors raw{{"w", torch::ones({1}, torch::kDouble)}};
    for (int k = 1; k <= 50; ++k) {
        ema_update(ema, raw, 0.999);
        EXPECT_NEAR(1.0 - ema[0].second.item<double>(), std::pow(0.999, k), 1e-12);
    }
}

TEST(Ema, NameMismatchRejected)
{
    NamedTensors ema{{"a", torch::zeros({1})}};
    NamedTensors raw{{"b", torch::zeros({1})}};
    EXPECT_THROW(ema_update(ema, raw, 0.5), CheckpointError);
}

TEST(LossLog, CsvHeader)
{
    LossLog log;
    log.records.push_back({0, 1.5, 1e-4, 0.999});
    const auto csv = log.to_csv();
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "step,loss,lr,ema_decay");
}

TEST(TrainPrior, DeterministicAndFinite)
{
    auto corpus = tiny_corpus();
    auto a = train_prior(corpus, tiny_backbone(), quick(6));
    auto b = train_prior(corpus, tiny_backbone(), quick(6));
    ASSERT_EQ(a.log.records.size(), 6u);
    for (size_t i = 0; i < 6; ++i) {
        EXPECT_EQ(a.log.records[i].loss, b.log.records[i].loss);
        EXPECT_TRUE(std::isfinite(a.log.records[i].loss));
        EXPECT_GE(a.log.records[i].loss, 0.0);
    }
    EXPECT_EQ(digest_tensors(module_tensors(*a.model)), digest_tensors(module_tensors(*b.model)));
}

TEST(TrainPrior, TimeConditioningAfterTraining)
{
    auto corpus = tiny_corpus();
    auto r = train_prior(corpus, tiny_backbone(), quick(20));
    Rng rng(1);
    auto x = rng.normal({1, 3, 16, 16});
    torch::NoGradGuard g;
    auto a = r.model->forward(x, torch::tensor({0.1f}), r.model->null_text(1));
    auto b = r.model->forward(x, torch::tensor({0.9f}), r.model->null_text(1));
    EXPECT_FALSE(torch::allclose(a, b));
}

TEST(TrainPrior, DivergenceAborts)
{
    auto cfg = quick(20);
    cfg.lr = 1e30;
    cfg.grad_clip = 0.0;
    EXPECT_THROW(train_prior(tiny_corpus(), tiny_backbone(), cfg), DivergenceError);
}

TEST(TrainDecoder, ZeroInitLossEqualsPrior)
{
    auto corpus = tiny_corpus();
    Backbone prior(tiny_backbone(), 3);
    perturb(*prior, 4);
    auto encoder = tiny_encoder();
    PixelDecoder decoder(PixelDecoderImpl::from_prior(prior, tiny_adapter(), 5));

    auto batch = BatchSampler(corpus, Rng(0)).head(4);
    auto pairs = make_decoder_pairs(batch.images, encoder, 2);
    auto text = prior->encode_text(batch.captions);
    auto sigma = torch::full({4}, 0.3);
    LatentInput latent{pairs.latent, sigma, {}};

    DecoderFlowModel with_latent(decoder);
    PixelDecoder bare(PixelDecoderImpl::from_prior(prior, tiny_adapter(), 5));
    DecoderFlowModel prior_only(bare);
    const double l_dec = fixed_flow_loss(with_latent, pairs.target, FlowCondition{text, latent}, 7, 1.0);
    const double l_prior = fixed_flow_loss(prior_only, pairs.target, FlowCondition{text, {}}, 7, 1.0);
    EXPECT_EQ(l_dec, l_prior);
}

TEST(TrainDecoder, FreezeBackbone)
{
    auto corpus = tiny_corpus();
    Backbone prior(tiny_backbone(), 3);
    perturb(*prior, 4); // a fresh prior has a zero output projection, which would block adapter gradients
    PixelDecoder decoder(PixelDecoderImpl::from_prior(prior, tiny_adapter(), 5));
    auto backbone_before = snapshot(*decoder->backbone());
    auto adapter_before = snapshot(*decoder->adapter());
    auto cfg = quick(10);
    cfg.freeze_backbone = true;
    auto r = train_decoder(decoder, tiny_encoder(), corpus, cfg);
    EXPECT_EQ(digest_tensors(backbone_before), digest_tensors(module_tensors(*r.model->backbone())));
    EXPECT_NE(digest_tensors(adapter_before), digest_tensors(module_tensors(*r.model->adapter())));
}

TEST(TrainDecoder, DeterministicLossLog)
{
    auto corpus = tiny_corpus();
    auto run = [&] {
        Backbone prior(tiny_backbone(), 3);
        PixelDecoder decoder(PixelDecoderImpl::from_prior(prior, tiny_adapter(), 5));
        return train_decoder(decoder, tiny_encoder(), corpus, quick(5)).log;
    };
    auto a = run(), b = run();
    for (size_t i = 0; i < a.records.size(); ++i)
        EXPECT_EQ(a.records[i].loss, b.records[i].loss);
}

TEST(TrainDecoder, FullLatentDropoutBehavesLikePriorFinetuning)
{
    auto corpus = tiny_corpus(32);
    auto cfg = quick(40);
    cfg.latent_dropout = 1.0;
    Backbone prior_a(tiny_backbone(), 3);
    Backbone prior_b(tiny_backbone(), 3);
    PixelDecoder decoder(PixelDecoderImpl::from_prior(prior_a, tiny_adapter(), 5));
    auto dec = train_decoder(decoder, tiny_encoder(), corpus, cfg);
    auto pri = train_prior(prior_b, corpus, cfg);
    // Different noise streams, same objective: the mean losses agree within noise.
    const double a = mean_loss(dec.log), b = mean_loss(pri.log);
    EXPECT_NEAR(a, b, 0.2 * b);
}

TEST(TrainDecoder, NonIntegerScaleRejected)
{
    auto corpus = generate_corpus(4, 0, {Bucket{12, 12}});
    Backbone prior(tiny_backbone(), 3);
    PixelDecoder decoder(PixelDecoderImpl::from_prior(prior, tiny_adapter(), 5));
    auto cfg = quick(1, 8);
    EXPECT_THROW(train_decoder(decoder, tiny_encoder(), corpus, cfg), ConfigError);
}

TEST(TrainVae, LearnsAndSetsLatentScale)
{
    auto corpus = tiny_corpus(32);
    std::vector<torch::Tensor> images;
    for (const auto& s : corpus)
        images.push_back(s.image);
    auto cfg = quick(60);
    cfg.batch_size = 8;
    auto r = train_vae(images, tiny_vae(), cfg);
    const auto& recs = r.log.records;
    const double head = (recs[0].loss + recs[1].loss + recs[2].loss) / 3;
    const double tail = (recs[57].loss + recs[58].loss + recs[59].loss) / 3;
    EXPECT_LT(tail, head);
    EXPECT_GT(r.model->latent_scale(), 0.0);
    EXPECT_NE(r.model->latent_scale(), 1.0);
}
