// Copyright (C) 2026 The pixdec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Few-step distillation by distribution matching: a student on a fixed sigma
// schedule, a fake-score model that tracks the student's output
// distribution, and an optional discriminator head on fake-score features.

#include "pixdec/flow_model.hpp"
#include "pixdec/flowmath.hpp"
#include "pixdec/rng.hpp"

#include <functional>
#include <memory>
#include <set>
#include <vector>

#include "json.hpp"

namespace pixdec {

enum class LossTerm { Dmd, GanGenerator, Dsm, GanDiscriminator, R1 };

/// Denominator of the distribution-matching direction: mean |x - x0_real|
/// per sample, over the whole batch, or none.
enum class DmdNormalization { PerSample, Batch, None };

struct DistillConfig {
    flow::SigmaSchedule student_sigmas = flow::SigmaSchedule::four_step();
    double dmd_weight = 1.0;
    double dsm_weight = 1.0;
    double gan_weight = 0.05;
    double r1_weight = 200.0;
    double lr = 1e-5;
    double fake_lr = 1e-5;
    double disc_lr = 1e-5;
    double weight_decay = 0.0;
    double guidance_weight_teacher = 3.0; // over text; latent guidance stays 1
    DmdNormalization dmd_normalization = DmdNormalization::PerSample;
    int64_t fake_updates_per_student = 5;
    /// true: DMD on a random intermediate clean estimate (backward simulation);
    /// false: DMD on the final sample, differentiated through every step.
    bool random_step_rollout = false;
    double probe_shift = 1.0;  // probe t ~ shift_time(U(t_min, t_max))
    double probe_t_min = 0.02;
    double probe_t_max = 0.98;
    double sigma_max = 0.8;
    double grad_clip = 0.0;
    int64_t batch_size = 8;
    int64_t iterations = 100;
    uint64_t seed = 0;
    /// Terms computed but left out of the objective (ablation runs).
    std::set<LossTerm> excluded;

    void validate() const;
};

void to_json(nlohmann::json& j, const DistillConfig& c);
void from_json(const nlohmann::json& j, DistillConfig& c);

struct ScorePair {
    torch::Tensor v_real;
    torch::Tensor v_fake;
};

// ---------------------------------------------------------------------------
// Sampling

/// Euler through the schedule times (1 - sigma_k, then 1) from fresh noise of
/// `shape`. One model evaluation per schedule entry; no unconditional pass.
/// With `with_grad` the whole chain stays differentiable.
torch::Tensor student_generate(FlowModel& student, at::IntArrayRef shape, const FlowCondition& cond,
                               const flow::SigmaSchedule& schedule, Rng& rng, bool with_grad = false);

/// Clean-sample estimate after running the first `step` schedule entries
/// without gradient, then one evaluation with gradient:
/// x + (1 - t_step) * v(x, t_step). At the last step this equals the
/// student_generate output.
torch::Tensor student_rollout(FlowModel& student, at::IntArrayRef shape, const FlowCondition& cond,
                              const flow::SigmaSchedule& schedule, int64_t step, Rng& rng);

/// Teacher velocity, classifier-free guided over text with weight w.
torch::Tensor guided_velocity(FlowModel& teacher, const torch::Tensor& x_t, const torch::Tensor& t,
                              const FlowCondition& cond, double w);

// ---------------------------------------------------------------------------
// Losses

/// Distribution-matching direction for student samples x (no gradient):
/// re-noise x to time t with eps, estimate clean samples under both scores,
/// and return (x0_fake - x0_real) / mean|x - x0_real| per sample. Zero when
/// the two scores agree.
torch::Tensor dmd_generator_grad(const torch::Tensor& x, const torch::Tensor& t, const torch::Tensor& eps,
                                 FlowModel& teacher, FlowModel& fake_score, const FlowCondition& cond,
                                 double guidance, ScorePair* scores = nullptr,
                                 DmdNormalization normalization = DmdNormalization::PerSample);

/// 0.5 * mean |x - sg(x - grad)|^2: its gradient with respect to x is grad / numel.
torch::Tensor dmd_loss(const torch::Tensor& x, const torch::Tensor& grad);

/// Flow-matching loss fitting fake_score to (detached) student samples.
torch::Tensor dsm_fake_score_loss(const torch::Tensor& student_samples, FlowModel& fake_score,
                                  const FlowCondition& cond, const torch::Tensor& t, const torch::Tensor& eps);

/// Scores intermediate features; any shape with a leading batch dim.
class DiscriminatorImpl : public torch::nn::Module {
public:
    virtual torch::Tensor score(const torch::Tensor& features) = 0;
};

/// Two pre-norm transformer blocks over feature tokens [B, N, D], mean-pooled
/// to one logit per sample.
class TokenDiscriminatorImpl : public DiscriminatorImpl {
public:
    TokenDiscriminatorImpl(int64_t dim, int64_t heads, uint64_t seed, int64_t blocks = 2);
    torch::Tensor score(const torch::Tensor& features) override;

private:
    int64_t heads_;
    torch::nn::ModuleList norms_{nullptr}, qkv_{nullptr}, proj_{nullptr}, mlps_{nullptr};
    torch::nn::Linear head_{nullptr};
};

/// MLP over flat features [B, F].
class MlpDiscriminatorImpl : public DiscriminatorImpl {
public:
    MlpDiscriminatorImpl(int64_t in_dim, int64_t hidden, uint64_t seed);
    torch::Tensor score(const torch::Tensor& features) override;

private:
    torch::nn::Sequential net_{nullptr};
};

using DiscriminatorPtr = std::shared_ptr<DiscriminatorImpl>;

struct GanTerms {
    torch::Tensor d_loss; // softplus(-D(real)) + softplus(D(fake))
    torch::Tensor g_loss; // softplus(-D(fake))
    torch::Tensor r1;     // mean over batch of |dD/dreal|^2, real features detached
};

GanTerms gan_regularizer(const torch::Tensor& features_real, const torch::Tensor& features_fake,
                         DiscriminatorImpl& discriminator);

// ---------------------------------------------------------------------------
// Trainer

struct DistillBatch {
    FlowCondition cond;
    torch::Tensor real; // data samples for the discriminator
};

/// Supplies one batch; `rng` is the trainer's data stream.
using DistillDataFn = std::function<DistillBatch(Rng& rng, int64_t batch_size)>;

struct DistillRecord {
    int64_t iteration = 0;
    bool student_updated = false;
    double dmd = 0.0, gan_g = 0.0, dsm = 0.0, gan_d = 0.0, r1 = 0.0;
    double student_total = 0.0, fake_total = 0.0;
};

class DistillTrainer {
public:
    /// The student and the fake score start as copies of the teacher unless
    /// given. The teacher is frozen.
    DistillTrainer(FlowModelPtr teacher, DistillConfig config, DistillDataFn data, DiscriminatorPtr discriminator,
                   FlowModelPtr student = nullptr, FlowModelPtr fake_score = nullptr);

    DistillRecord step();
    std::vector<DistillRecord> run(int64_t iterations, const std::function<void(const DistillRecord&)>& cb = {});

    FlowModel& teacher() { return *teacher_; }
    FlowModelPtr student() { return student_; }
    FlowModelPtr fake_score() { return fake_; }
    DiscriminatorPtr discriminator() { return disc_; }
    const DistillConfig& config() const { return config_; }
    int64_t iteration() const { return iteration_; }

    static std::string to_csv(const std::vector<DistillRecord>& records);

private:
    double weight(LossTerm term) const;
    torch::Tensor sample_probe_times(int64_t n, torch::ScalarType dtype);
    torch::Tensor sample_student(const FlowCondition& cond, at::IntArrayRef shape, bool with_grad);

    FlowModelPtr teacher_, student_, fake_;
    DiscriminatorPtr disc_;
    DistillConfig config_;
    DistillDataFn data_;
    Rng data_rng_, noise_rng_;
    std::vector<torch::Tensor> student_params_, fake_params_, disc_params_;
    std::unique_ptr<torch::optim::AdamW> student_opt_, fake_opt_, disc_opt_;
    int64_t iteration_ = 0;
};

// ---------------------------------------------------------------------------
// Two-dimensional ring toy

/// Mixture of `modes` isotropic Gaussians with std `spread` evenly spaced on
/// a circle of `radius`.
torch::Tensor ring_samples(int64_t n, Rng& rng, int64_t modes = 8, double radius = 2.0, double spread = 0.2,
                           torch::ScalarType dtype = torch::kFloat);

/// Flow-matching fit of a toy MLP to ring data.
FlowModelPtr train_ring_teacher(int64_t steps, int64_t batch_size, double lr, uint64_t seed, int64_t hidden = 128,
                                int64_t depth = 3, int64_t modes = 8, double radius = 2.0, double spread = 0.2);

/// Uniform-grid Euler sampling from t=0 to t=1 with `steps` steps.
torch::Tensor sample_flow(FlowModel& model, at::IntArrayRef shape, const FlowCondition& cond, int64_t steps,
                          Rng& rng, double time_shift = 1.0);

} // namespace pixdec
