// Copyright (C) 2026 The pixdec Authors
// SPDX-License-Identifier: Apache-2.0

#include "pixdec/distill.hpp"
#include "pixdec/errors.hpp"
#include "pixdec/eval.hpp"
#include "pixdec/flowmath.hpp"

#include <gtest/gtest.h>

using namespace pixdec;

namespace {

FlowModelPtr toy_model(uint64_t seed, int64_t hidden = 16)
{
    return std::make_shared<ToyFlowModel>(ToyFlowMlp(2, hidden, 2, seed));
}

DistillBatch ring_batch(Rng& rng, int64_t n)
{
    return {FlowCondition{}, ring_samples(n, rng)};
}

DistillConfig small_config()
{
    DistillConfig c;
    c.batch_size = 32;
    c.fake_updates_per_student = 2;
    c.lr = 1e-3;
    c.fake_lr = 1e-3;
    c.disc_lr = 1e-3;
    c.seed = 4;
    return c;
}

std::string trainer_digest(DistillTrainer& tr)
{
    auto all = tr.student()->named_tensors();
    for (auto& kv : tr.fake_score()->named_tensors())
        all.push_back(kv);
    for (auto& kv : module_tensors(*tr.discriminator()))
        all.push_back(kv);
    return digest_tensors(all);
}

std::pair<std::string, std::vector<DistillRecord>> run_trainer(const DistillConfig& c, int64_t iters)
{
    DistillTrainer tr(toy_model(1), c, ring_batch, std::make_shared<MlpDiscriminatorImpl>(16, 16, 2));
    auto recs = tr.run(iters);
    return {trainer_digest(tr), recs};
}

} // namespace

TEST(StudentGenerate, FourEvaluationsPerSample)
{
    auto counting = std::make_shared<CountingFlowModel>(toy_model(1));
    Rng rng(0);
    auto x = student_generate(*counting, {64, 2}, {}, flow::SigmaSchedule::four_step(), rng);
    EXPECT_EQ(counting->calls(), 4);
    EXPECT_EQ(counting->samples(), 4 * 64);
    EXPECT_EQ(x.sizes(), (std::vector<int64_t>{64, 2}));
    EXPECT_FALSE(x.requires_grad());
}

TEST(StudentGenerate, BitExactUnderSeed)
{
    auto m = toy_model(1);
    Rng a(9), b(9);
    auto s = flow::SigmaSchedule::four_step();
    EXPECT_TRUE(torch::equal(student_generate(*m, {32, 2}, {}, s, a), student_generate(*m, {32, 2}, {}, s, b)));
}

TEST(StudentGenerate, GradientFlowsWhenRequested)
{
    auto m = toy_model(1);
    Rng rng(2);
    auto x = student_generate(*m, {8, 2}, {}, flow::SigmaSchedule::four_step(), rng, true);
    EXPECT_TRUE(x.requires_grad());
}

TEST(StudentRollout, LastStepMatchesGenerate)
{
    auto m = toy_model(1);
    auto s = flow::SigmaSchedule::four_step();
    Rng a(3), b(3);
    auto full = student_generate(*m, {16, 2}, {}, s, a);
    auto roll = student_rollout(*m, {16, 2}, {}, s, static_cast<int64_t>(s.size()) - 1, b);
    EXPECT_TRUE(torch::allclose(full, roll.detach(), 1e-6, 1e-6));
}

TEST(DmdGrad, ZeroWhenScoresAgree)
{
    auto m = toy_model(1);
    Rng rng(1);
    auto x = rng.normal({16, 2});
    auto t = rng.uniform({16}, 0.1, 0.9);
    auto eps = rng.normal({16, 2});
    auto g = dmd_generator_grad(x, t, eps, *m, *m, {}, 3.0);
    EXPECT_EQ(g.abs().max().item<double>(), 0.0);
}

// With Gaussian teacher and fake scores the clean-sample estimates are known
// in closed form.
TEST(DmdGrad, MatchesGaussianOracle)
{
    GaussianOracleModel real(0.0, 1.0), fake(0.5, 0.25);
    Rng rng(2);
    auto x = rng.normal({200, 3}, torch::kDouble);
    auto t = rng.uniform({200}, 0.05, 0.95, torch::kDouble);
    auto eps = rng.normal({200, 3}, torch::kDouble);
    auto xt = flow::interpolate(x, eps, t);
    auto tb = t.unsqueeze(1);
    auto x0_real = xt + (1 - tb) * eval::gaussian_flow_oracle(0.0, 1.0, t, xt);
    auto x0_fake = xt + (1 - tb) * eval::gaussian_flow_oracle(0.5, 0.25, t, xt);

    auto none = dmd_generator_grad(x, t, eps, real, fake, {}, 1.0, nullptr, DmdNormalization::None);
    EXPECT_TRUE(torch::allclose(none, x0_fake - x0_real, 1e-10, 1e-12));

    auto per = dmd_generator_grad(x, t, eps, real, fake, {}, 1.0, nullptr, DmdNormalization::PerSample);
    auto denom = (x - x0_real).abs().mean(1, true);
    EXPECT_TRUE(torch::allclose(per, (x0_fake - x0_real) / denom, 1e-8, 1e-10));

    // The direction points from the fake towards the real distribution:
    // descending it moves samples of the fake mean 0.5 towards 0.
    auto step = x - 0.1 * none;
    EXPECT_LT(step.mean().item<double>(), x.mean().item<double>() + 1e-12);
}

TEST(DmdLoss, GradientIsDirectionOverNumel)
{
    auto x = torch::randn({4, 3}, torch::dtype(torch::kDouble).requires_grad(true));
    auto g = torch::randn({4, 3}, torch::kDouble);
    dmd_loss(x, g).backward();
    EXPECT_TRUE(torch::allclose(x.grad(), g / 12.0, 1e-12, 1e-14));
}

TEST(GanRegularizer, TermsMatchDefinitions)
{
    MlpDiscriminatorImpl disc(4, 8, 1);
    Rng rng(5);
    auto real = rng.normal({6, 4});
    auto fake = rng.normal({6, 4}).requires_grad_(true);
    auto terms = gan_regularizer(real, fake, disc);
    auto dr = disc.score(real).flatten();
    auto df = disc.score(fake.detach()).flatten();
    EXPECT_NEAR(terms.d_loss.item<double>(),
                (torch::softplus(-dr).mean() + torch::softplus(df).mean()).item<double>(), 1e-6);
    EXPECT_NEAR(terms.g_loss.item<double>(), torch::softplus(-df).mean().item<double>(), 1e-6);
    EXPECT_GE(terms.r1.item<double>(), 0.0);

    terms.g_loss.backward();
    ASSERT_TRUE(fake.grad().defined());
    EXPECT_GT(fake.grad().abs().sum().item<double>(), 0.0);
}

TEST(DistillConfig, ValidationAndJson)
{
    DistillConfig c;
    EXPECT_NO_THROW(c.validate());
    EXPECT_DOUBLE_EQ(c.dmd_weight, 1.0);
    EXPECT_DOUBLE_EQ(c.dsm_weight, 1.0);
    EXPECT_DOUBLE_EQ(c.gan_weight, 0.05);
    EXPECT_DOUBLE_EQ(c.r1_weight, 200.0);
    EXPECT_EQ(c.student_sigmas.size(), 4u);
    c.excluded = {LossTerm::R1, LossTerm::Dmd};
    nlohmann::json j = c;
    auto back = j.get<DistillConfig>();
    EXPECT_EQ(back.excluded, c.excluded);
    EXPECT_EQ(nlohmann::json(back), j);
    c.fake_updates_per_student = 0;
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(DistillTrainer, Deterministic)
{
    auto a = run_trainer(small_config(), 4);
    auto b = run_trainer(small_config(), 4);
    EXPECT_EQ(a.first, b.first);
    for (size_t i = 0; i < a.second.size(); ++i)
        EXPECT_EQ(a.second[i].student_total, b.second[i].student_total);
}

TEST(DistillTrainer, StudentUpdateCadence)
{
    auto [digest, recs] = run_trainer(small_config(), 6);
    for (const auto& r : recs)
        EXPECT_EQ(r.student_updated, r.iteration % 2 == 0);
}

TEST(DistillTrainer, TotalsAreWeightedSums)
{
    auto c = small_config();
    auto [digest, recs] = run_trainer(c, 4);
    for (const auto& r : recs) {
        EXPECT_NEAR(r.fake_total, c.dsm_weight * r.dsm + c.gan_weight * r.gan_d + c.r1_weight * r.r1,
                    1e-5 * (1 + std::abs(r.fake_total)));
        if (r.student_updated)
            EXPECT_NEAR(r.student_total, c.dmd_weight * r.dmd + c.gan_weight * r.gan_g,
                        1e-5 * (1 + std::abs(r.student_total)));
    }
}

TEST(DistillTrainer, ZeroWeightEqualsExcludedTerm)
{
    struct Case {
        double DistillConfig::*weight;
        std::set<LossTerm> terms;
    };
    const std::vector<Case> cases{{&DistillConfig::dmd_weight, {LossTerm::Dmd}},
                                  {&DistillConfig::dsm_weight, {LossTerm::Dsm}},
                                  {&DistillConfig::gan_weight, {LossTerm::GanGenerator, LossTerm::GanDiscriminator}},
                                  {&DistillConfig::r1_weight, {LossTerm::R1}}};
    const auto full = run_trainer(small_config(), 4).first;
    for (const auto& cs : cases) {
        auto zeroed = small_config();
        zeroed.*(cs.weight) = 0.0;
        auto ablated = small_config();
        ablated.excluded = cs.terms;
        auto a = run_trainer(zeroed, 4).first;
        EXPECT_EQ(a, run_trainer(ablated, 4).first);
        EXPECT_NE(a, full);
    }
}

TEST(RingToy, SamplesLieOnRing)
{
    Rng rng(0);
    auto x = ring_samples(4000, rng, 8, 2.0, 0.05);
    auto r = x.norm(2, 1);
    EXPECT_NEAR(r.mean().item<double>(), 2.0, 0.01);
    auto angle = torch::atan2(x.select(1, 1), x.select(1, 0));
    auto mode = torch::round(angle / (2 * M_PI / 8)).remainder(8).to(torch::kLong);
    auto counts = torch::bincount(mode, {}, 8);
    std::vector<int64_t> c(counts.data_ptr<int64_t>(), counts.data_ptr<int64_t>() + 8);
    EXPECT_GT(eval::chi_square_uniform_pvalue(c), 0.001);
}
