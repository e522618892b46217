// Copyright (C) 2026 The pixdec Authors
// SPDX-License-Identifier: Apache-2.0

#include "pixdec/distill.hpp"

#include "nn_util.hpp"
#include "pixdec/errors.hpp"

#include <cmath>
#include <numbers>
#include <optional>
#include <sstream>

namespace pixdec {

namespace {

torch::ScalarType model_dtype(FlowModel& m)
{
    auto params = m.parameters();
    return params.empty() ? torch::kFloat : params.front().scalar_type();
}

torch::Tensor times_like(double t, const torch::Tensor& x)
{
    return torch::full({x.size(0)}, t, x.options());
}

void fill_missing_grads(const std::vector<torch::Tensor>& params)
{
    for (auto p : params)
        if (!p.grad().defined())
            p.mutable_grad() = torch::zeros_like(p);
}

void zero_grads(const std::vector<torch::Tensor>& params)
{
    for (auto p : params)
        if (p.grad().defined())
            p.mutable_grad() = torch::Tensor();
}

const std::vector<std::pair<DmdNormalization, std::string>> kNormNames = {
    {DmdNormalization::PerSample, "per_sample"}, {DmdNormalization::Batch, "batch"}, {DmdNormalization::None, "none"}};

std::string norm_name(DmdNormalization n)
{
    for (const auto& [k, v] : kNormNames)
        if (k == n)
            return v;
    return "?";
}

DmdNormalization norm_from_name(const std::string& s)
{
    for (const auto& [k, v] : kNormNames)
        if (v == s)
            return k;
    throw ConfigError("unknown dmd normalization '" + s + "'");
}

std::string term_name(LossTerm t)
{
    switch (t) {
    case LossTerm::Dmd: return "dmd";
    case LossTerm::GanGenerator: return "gan_g";
    case LossTerm::Dsm: return "dsm";
    case LossTerm::GanDiscriminator: return "gan_d";
    case LossTerm::R1: return "r1";
    }
    return "?";
}

LossTerm term_from_name(const std::string& s)
{
    for (auto t : {LossTerm::Dmd, LossTerm::GanGenerator, LossTerm::Dsm, LossTerm::GanDiscriminator, LossTerm::R1})
        if (term_name(t) == s)
            return t;
    throw ConfigError("unknown loss term '" + s + "'");
}

} // namespace

void DistillConfig::validate() const
{
    for (double w : {dmd_weight, dsm_weight, gan_weight, r1_weight})
        if (!(w >= 0.0))
            throw ConfigError("distill: loss weights must be >= 0");
    if (!(lr > 0.0 && fake_lr > 0.0 && disc_lr > 0.0))
        throw ConfigError("distill: learning rates must be positive");
    if (weight_decay < 0.0 || grad_clip < 0.0)
        throw ConfigError("distill: weight_decay and grad_clip must be >= 0");
    if (fake_updates_per_student < 1)
        throw ConfigError("distill: fake_updates_per_student must be >= 1");
    if (!(probe_shift >= 1.0))
        throw ConfigError("distill: probe_shift must be >= 1");
    if (!(0.0 <= probe_t_min && probe_t_min < probe_t_max && probe_t_max <= 1.0))
        throw ConfigError("distill: need 0 <= probe_t_min < probe_t_max <= 1");
    if (!(sigma_max > 0.0 && sigma_max <= 1.0))
        throw ConfigError("distill: sigma_max must be in (0,1]");
    if (batch_size < 1 || iterations < 0)
        throw ConfigError("distill: batch_size must be >= 1 and iterations >= 0");
}

void to_json(nlohmann::json& j, const DistillConfig& c)
{
    std::vector<std::string> excluded;
    for (auto t : c.excluded)
        excluded.push_back(term_name(t));
    j = {{"student_sigmas", c.student_sigmas.sigmas()},
         {"dmd_weight", c.dmd_weight},
         {"dsm_weight", c.dsm_weight},
         {"gan_weight", c.gan_weight},
         {"r1_weight", c.r1_weight},
         {"lr", c.lr},
         {"fake_lr", c.fake_lr},
         {"disc_lr", c.disc_lr},
         {"weight_decay", c.weight_decay},
         {"guidance_weight_teacher", c.guidance_weight_teacher},
         {"dmd_normalization", norm_name(c.dmd_normalization)},
         {"fake_updates_per_student", c.fake_updates_per_student},
         {"random_step_rollout", c.random_step_rollout},
         {"probe_shift", c.probe_shift},
         {"probe_t_min", c.probe_t_min},
         {"probe_t_max", c.probe_t_max},
         {"sigma_max", c.sigma_max},
         {"grad_clip", c.grad_clip},
         {"batch_size", c.batch_size},
         {"iterations", c.iterations},
         {"seed", c.seed},
         {"excluded", excluded}};
}

void from_json(const nlohmann::json& j, DistillConfig& c)
{
    DistillConfig d;
    c.student_sigmas = flow::SigmaSchedule(j.value("student_sigmas", d.student_sigmas.sigmas()));
    c.dmd_weight = j.value("dmd_weight", d.dmd_weight);
    c.dsm_weight = j.value("dsm_weight", d.dsm_weight);
    c.gan_weight = j.value("gan_weight", d.gan_weight);
    c.r1_weight = j.value("r1_weight", d.r1_weight);
    c.lr = j.value("lr", d.lr);
    c.fake_lr = j.value("fake_lr", d.fake_lr);
    c.disc_lr = j.value("disc_lr", d.disc_lr);
    c.weight_decay = j.value("weight_decay", d.weight_decay);
    c.guidance_weight_teacher = j.value("guidance_weight_teacher", d.guidance_weight_teacher);
    c.dmd_normalization = norm_from_name(j.value("dmd_normalization", norm_name(d.dmd_normalization)));
    c.fake_updates_per_student = j.value("fake_updates_per_student", d.fake_updates_per_student);
    c.random_step_rollout = j.value("random_step_rollout", d.random_step_rollout);
    c.probe_shift = j.value("probe_shift", d.probe_shift);
    c.probe_t_min = j.value("probe_t_min", d.probe_t_min);
    c.probe_t_max = j.value("probe_t_max", d.probe_t_max);
    c.sigma_max = j.value("sigma_max", d.sigma_max);
    c.grad_clip = j.value("grad_clip", d.grad_clip);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.iterations = j.value("iterations", d.iterations);
    c.seed = j.value("seed", d.seed);
    c.excluded.clear();
    for (const auto& s : j.value("excluded", std::vector<std::string>{}))
        c.excluded.insert(term_from_name(s));
}

// ---------------------------------------------------------------------------

torch::Tensor student_generate(FlowModel& student, at::IntArrayRef shape, const FlowCondition& cond,
                               const flow::SigmaSchedule& schedule, Rng& rng, bool with_grad)
{
    std::optional<torch::NoGradGuard> no_grad;
    if (!with_grad)
        no_grad.emplace();
    const auto times = schedule.times();
    auto x = rng.normal(shape, model_dtype(student));
    return flow::euler_integrate(
        {x, times.front()}, [&](const torch::Tensor& xt, double t) { return student.velocity(xt, times_like(t, xt), cond); },
        times);
}

torch::Tensor student_rollout(FlowModel& student, at::IntArrayRef shape, const FlowCondition& cond,
                              const flow::SigmaSchedule& schedule, int64_t step, Rng& rng)
{
    const auto times = schedule.times();
    if (step < 0 || step >= static_cast<int64_t>(schedule.size()))
        throw DomainError("student_rollout: step outside the schedule");
    auto x = rng.normal(shape, model_dtype(student));
    if (step > 0) {
        torch::NoGradGuard no_grad;
        x = flow::euler_advance(
            {x, times.front()},
            [&](const torch::Tensor& xt, double t) { return student.velocity(xt, times_like(t, xt), cond); },
            std::span<const double>(times.data(), static_cast<size_t>(step) + 1));
    }
    const double t = times[static_cast<size_t>(step)];
    auto v = student.velocity(x, times_like(t, x), cond);
    return x + (times[static_cast<size_t>(step) + 1] - t) * v;
}

torch::Tensor guided_velocity(FlowModel& teacher, const torch::Tensor& x_t, const torch::Tensor& t,
                              const FlowCondition& cond, double w)
{
    auto v = teacher.velocity(x_t, t, cond);
    if (w == 1.0)
        return v;
    return flow::cfg_combine(v, teacher.velocity(x_t, t, teacher.drop_text(cond)), w);
}

torch::Tensor dmd_generator_grad(const torch::Tensor& x, const torch::Tensor& t, const torch::Tensor& eps,
                                 FlowModel& teacher, FlowModel& fake_score, const FlowCondition& cond,
                                 double guidance, ScorePair* scores, DmdNormalization normalization)
{
    torch::NoGradGuard no_grad;
    auto x0 = x.detach();
    auto x_t = flow::interpolate(x0, eps, t);
    auto v_real = guided_velocity(teacher, x_t, t, cond, guidance);
    auto v_fake = fake_score.velocity(x_t, t, cond);
    if (v_real.sizes() != v_fake.sizes())
        throw ShapeError("dmd: teacher and fake-score velocities differ in shape");
    auto one_minus_t = flow::expand_like(1.0 - t, x0);
    auto x0_real = x_t + one_minus_t * v_real;
    auto x0_fake = x_t + one_minus_t * v_fake;
    torch::Tensor grad = x0_fake - x0_real;
    if (normalization == DmdNormalization::PerSample) {
        std::vector<int64_t> dims;
        for (int64_t d = 1; d < x0.dim(); ++d)
            dims.push_back(d);
        grad = grad / (x0 - x0_real).abs().mean(dims, /*keepdim=*/true);
    } else if (normalization == DmdNormalization::Batch) {
        grad = grad / (x0 - x0_real).abs().mean();
    }
    grad = torch::nan_to_num(grad, 0.0, 0.0, 0.0);
    if (scores)
        *scores = {v_real, v_fake};
    return grad;
}

torch::Tensor dmd_loss(const torch::Tensor& x, const torch::Tensor& grad)
{
    return 0.5 * torch::mse_loss(x, (x - grad).detach());
}

torch::Tensor dsm_fake_score_loss(const torch::Tensor& student_samples, FlowModel& fake_score,
                                  const FlowCondition& cond, const torch::Tensor& t, const torch::Tensor& eps)
{
    auto x0 = student_samples.detach();
    auto x_t = flow::interpolate(x0, eps, t);
    return torch::mse_loss(fake_score.velocity(x_t, t, cond), flow::velocity_target(x0, eps));
}

// ---------------------------------------------------------------------------

TokenDiscriminatorImpl::TokenDiscriminatorImpl(int64_t dim, int64_t heads, uint64_t seed, int64_t blocks)
    : heads_(heads)
{
    if (dim % heads != 0)
        throw ConfigError("TokenDiscriminator: dim must be divisible by heads");
    norms_ = register_module("norms", torch::nn::ModuleList());
    qkv_ = register_module("qkv", torch::nn::ModuleList());
    proj_ = register_module("proj", torch::nn::ModuleList());
    mlps_ = register_module("mlps", torch::nn::ModuleList());
    for (int64_t i = 0; i < blocks; ++i) {
        norms_->push_back(torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
        norms_->push_back(torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
        qkv_->push_back(torch::nn::Linear(dim, 3 * dim));
        proj_->push_back(torch::nn::Linear(dim, dim));
        mlps_->push_back(detail::mlp(dim, 2 * dim, dim));
    }
    head_ = register_module("head", torch::nn::Linear(dim, 1));
    Rng rng(mix_seed(seed, "token_discriminator"));
    detail::init_module(*this, rng);
}

torch::Tensor TokenDiscriminatorImpl::score(const torch::Tensor& features)
{
    if (features.dim() != 3)
        throw ShapeError("TokenDiscriminator: expected [B, N, D] features");
    const auto B = features.size(0), N = features.size(1), D = features.size(2);
    const auto hd = D / heads_;
    auto h = features;
    for (size_t i = 0; i < qkv_->size(); ++i) {
        auto a = norms_[2 * i]->as<torch::nn::LayerNorm>()->forward(h);
        auto qkv = qkv_[i]->as<torch::nn::Linear>()->forward(a).view({B, N, 3, heads_, hd}).permute({2, 0, 3, 1, 4});
        auto att = detail::attention(qkv[0], qkv[1], qkv[2]).permute({0, 2, 1, 3}).reshape({B, N, D});
        h = h + proj_[i]->as<torch::nn::Linear>()->forward(att);
        h = h + mlps_[i]->as<torch::nn::Sequential>()->forward(norms_[2 * i + 1]->as<torch::nn::LayerNorm>()->forward(h));
    }
    return head_->forward(h.mean(1)).squeeze(-1);
}

MlpDiscriminatorImpl::MlpDiscriminatorImpl(int64_t in_dim, int64_t hidden, uint64_t seed)
{
    net_ = register_module("net", torch::nn::Sequential(torch::nn::Linear(in_dim, hidden), torch::nn::SiLU(),
                                                        torch::nn::Linear(hidden, hidden), torch::nn::SiLU(),
                                                        torch::nn::Linear(hidden, 1)));
    Rng rng(mix_seed(seed, "mlp_discriminator"));
    detail::init_module(*this, rng);
}

torch::Tensor MlpDiscriminatorImpl::score(const torch::Tensor& features)
{
    return net_->forward(features.flatten(1)).squeeze(-1);
}

GanTerms gan_regularizer(const torch::Tensor& features_real, const torch::Tensor& features_fake,
                         DiscriminatorImpl& discriminator)
{
    if (features_real.sizes().slice(1) != features_fake.sizes().slice(1))
        throw ShapeError("gan_regularizer: feature shapes differ");
    GanTerms out;
    auto real_logits = discriminator.score(features_real);
    auto fake_logits = discriminator.score(features_fake);
    out.d_loss = torch::softplus(-real_logits).mean() + torch::softplus(fake_logits).mean();
    out.g_loss = torch::softplus(-fake_logits).mean();

    auto real = features_real.detach().requires_grad_(true);
    auto grads = torch::autograd::grad({discriminator.score(real).sum()}, {real}, {}, /*retain_graph=*/true,
                                       /*create_graph=*/true, /*allow_unused=*/true);
    out.r1 = grads[0].defined() ? grads[0].pow(2).flatten(1).sum(1).mean()
                                : torch::zeros({}, features_real.options());
    return out;
}

// ---------------------------------------------------------------------------

DistillTrainer::DistillTrainer(FlowModelPtr teacher, DistillConfig config, DistillDataFn data,
                               DiscriminatorPtr discriminator, FlowModelPtr student, FlowModelPtr fake_score)
    : teacher_(std::move(teacher)),
      student_(std::move(student)),
      fake_(std::move(fake_score)),
      disc_(std::move(discriminator)),
      config_(std::move(config)),
      data_(std::move(data)),
      data_rng_(mix_seed(config_.seed, "distill_data")),
      noise_rng_(mix_seed(config_.seed, "distill_noise"))
{
    config_.validate();
    if (!teacher_ || !disc_ || !data_)
        throw ConfigError("distill: teacher, discriminator and data source are required");
    teacher_->set_requires_grad(false);
    if (!student_)
        student_ = teacher_->clone();
    if (!fake_)
        fake_ = teacher_->clone();
    student_->set_requires_grad(true);
    fake_->set_requires_grad(true);
    student_params_ = student_->parameters();
    fake_params_ = fake_->parameters();
    disc_params_ = disc_->parameters();
    auto opts = [&](double lr) { return torch::optim::AdamWOptions(lr).weight_decay(config_.weight_decay); };
    student_opt_ = std::make_unique<torch::optim::AdamW>(student_params_, opts(config_.lr));
    fake_opt_ = std::make_unique<torch::optim::AdamW>(fake_params_, opts(config_.fake_lr));
    disc_opt_ = std::make_unique<torch::optim::AdamW>(disc_params_, opts(config_.disc_lr));
}

double DistillTrainer::weight(LossTerm term) const
{
    switch (term) {
    case LossTerm::Dmd: return config_.dmd_weight;
    case LossTerm::GanGenerator:
    case LossTerm::GanDiscriminator: return config_.gan_weight;
    case LossTerm::Dsm: return config_.dsm_weight;
    case LossTerm::R1: return config_.r1_weight;
    }
    return 0.0;
}

torch::Tensor DistillTrainer::sample_probe_times(int64_t n, torch::ScalarType dtype)
{
    auto u = noise_rng_.uniform({n}, config_.probe_t_min, config_.probe_t_max, torch::kDouble);
    return flow::shift_time(u, config_.probe_shift).to(dtype);
}

torch::Tensor DistillTrainer::sample_student(const FlowCondition& cond, at::IntArrayRef shape, bool with_grad)
{
    if (!config_.random_step_rollout)
        return student_generate(*student_, shape, cond, config_.student_sigmas, noise_rng_, with_grad);
    const auto k = noise_rng_.randint_scalar(static_cast<int64_t>(config_.student_sigmas.size()));
    if (with_grad)
        return student_rollout(*student_, shape, cond, config_.student_sigmas, k, noise_rng_);
    torch::NoGradGuard no_grad;
    return student_rollout(*student_, shape, cond, config_.student_sigmas, k, noise_rng_);
}

DistillRecord DistillTrainer::step()
{
    DistillRecord rec;
    rec.iteration = iteration_;
    auto batch = data_(data_rng_, config_.batch_size);
    const auto& cond = batch.cond;
    const auto shape = batch.real.sizes().vec();
    const auto dtype = batch.real.scalar_type();
    const auto B = shape.front();

    // Sum of included terms; terms are always computed so that every run
    // consumes the same random draws.
    auto combine = [&](std::initializer_list<std::pair<LossTerm, torch::Tensor>> terms) {
        torch::Tensor total;
        for (const auto& [term, value] : terms) {
            if (config_.excluded.count(term))
                continue;
            auto weighted = weight(term) * value;
            total = total.defined() ? total + weighted : weighted;
        }
        return total;
    };

    rec.student_updated = iteration_ % config_.fake_updates_per_student == 0;
    if (rec.student_updated) {
        auto x = sample_student(cond, shape, /*with_grad=*/true);
        auto t = sample_probe_times(B, dtype);
        auto eps = noise_rng_.normal(shape, dtype);
        auto grad = dmd_generator_grad(x, t, eps, *teacher_, *fake_, cond, config_.guidance_weight_teacher, nullptr,
                                       config_.dmd_normalization);
        auto l_dmd = dmd_loss(x, grad);
        auto feats = fake_->evaluate(flow::interpolate(x, eps, t), t, cond, true).features;
        auto l_g = torch::softplus(-disc_->score(feats)).mean();
        rec.dmd = l_dmd.item<double>();
        rec.gan_g = l_g.item<double>();

        zero_grads(student_params_);
        zero_grads(fake_params_);
        zero_grads(disc_params_);
        auto total = combine({{LossTerm::Dmd, l_dmd}, {LossTerm::GanGenerator, l_g}});
        if (total.defined()) {
            rec.student_total = total.item<double>();
            if (!std::isfinite(rec.student_total))
                throw DivergenceError("distill: non-finite student loss at iteration " + std::to_string(iteration_));
            total.backward();
        }
        fill_missing_grads(student_params_);
        if (config_.grad_clip > 0.0)
            torch::nn::utils::clip_grad_norm_(student_params_, config_.grad_clip);
        student_opt_->step();
    }

    {
        auto xs = sample_student(cond, shape, /*with_grad=*/false);
        auto t = sample_probe_times(B, dtype);
        auto eps = noise_rng_.normal(shape, dtype);
        auto eps_real = noise_rng_.normal(shape, dtype);
        auto fake_eval = fake_->evaluate(flow::interpolate(xs, eps, t), t, cond, true);
        auto l_dsm = torch::mse_loss(fake_eval.velocity, flow::velocity_target(xs, eps));
        auto real_feats = fake_->evaluate(flow::interpolate(batch.real, eps_real, t), t, cond, true).features;
        auto gan = gan_regularizer(real_feats, fake_eval.features, *disc_);
        rec.dsm = l_dsm.item<double>();
        rec.gan_d = gan.d_loss.item<double>();
        rec.r1 = gan.r1.item<double>();

        zero_grads(student_params_);
        zero_grads(fake_params_);
        zero_grads(disc_params_);
        auto total = combine({{LossTerm::Dsm, l_dsm}, {LossTerm::GanDiscriminator, gan.d_loss}, {LossTerm::R1, gan.r1}});
        if (total.defined()) {
            rec.fake_total = total.item<double>();
            if (!std::isfinite(rec.fake_total))
                throw DivergenceError("distill: non-finite fake-score loss at iteration " + std::to_string(iteration_));
            total.backward();
        }
        fill_missing_grads(fake_params_);
        fill_missing_grads(disc_params_);
        if (config_.grad_clip > 0.0) {
            torch::nn::utils::clip_grad_norm_(fake_params_, config_.grad_clip);
            torch::nn::utils::clip_grad_norm_(disc_params_, config_.grad_clip);
        }
        fake_opt_->step();
        disc_opt_->step();
    }
    ++iteration_;
    return rec;
}

std::vector<DistillRecord> DistillTrainer::run(int64_t iterations, const std::function<void(const DistillRecord&)>& cb)
{
    std::vector<DistillRecord> out;
    for (int64_t i = 0; i < iterations; ++i) {
        out.push_back(step());
        if (cb)
            cb(out.back());
    }
    return out;
}

std::string DistillTrainer::to_csv(const std::vector<DistillRecord>& records)
{
    std::ostringstream os;
    os.precision(10);
    os << "iteration,student_updated,dmd,gan_g,dsm,gan_d,r1,student_total,fake_total\n";
    for (const auto& r : records)
        os << r.iteration << ',' << (r.student_updated ? 1 : 0) << ',' << r.dmd << ',' << r.gan_g << ',' << r.dsm
           << ',' << r.gan_d << ',' << r.r1 << ',' << r.student_total << ',' << r.fake_total << '\n';
    return os.str();
}

// ---------------------------------------------------------------------------

torch::Tensor ring_samples(int64_t n, Rng& rng, int64_t modes, double radius, double spread, torch::ScalarType dtype)
{
    if (n < 1 || modes < 1 || !(spread >= 0.0))
        throw DomainError("ring_samples: bad parameters");
    auto k = rng.randint(modes, {n}).to(torch::kDouble);
    auto angle = k * (2.0 * std::numbers::pi / static_cast<double>(modes));
    auto centers = torch::stack({radius * torch::cos(angle), radius * torch::sin(angle)}, 1);
    return (centers + spread * rng.normal({n, 2}, torch::kDouble)).to(dtype);
}

FlowModelPtr train_ring_teacher(int64_t steps, int64_t batch_size, double lr, uint64_t seed, int64_t hidden,
                                int64_t depth, int64_t modes, double radius, double spread)
{
    ToyFlowMlp net(2, hidden, depth, seed);
    Rng rng(mix_seed(seed, "ring_teacher"));
    torch::optim::AdamW opt(net->parameters(), torch::optim::AdamWOptions(lr).weight_decay(0.0));
    for (int64_t i = 0; i < steps; ++i) {
        auto x0 = ring_samples(batch_size, rng, modes, radius, spread);
        auto eps = rng.normal({batch_size, 2});
        auto t = rng.uniform({batch_size});
        auto v = net->forward(flow::interpolate(x0, eps, t), t, false).velocity;
        auto loss = torch::mse_loss(v, flow::velocity_target(x0, eps));
        opt.zero_grad();
        loss.backward();
        opt.step();
    }
    auto model = std::make_shared<ToyFlowModel>(net);
    model->set_requires_grad(false);
    return model;
}

torch::Tensor sample_flow(FlowModel& model, at::IntArrayRef shape, const FlowCondition& cond, int64_t steps,
                          Rng& rng, double time_shift)
{
    torch::NoGradGuard no_grad;
    const auto times = flow::shifted_times(steps, time_shift);
    auto x = rng.normal(shape, model_dtype(model));
    return flow::euler_integrate(
        {x, 0.0}, [&](const torch::Tensor& xt, double t) { return model.velocity(xt, times_like(t, xt), cond); },
        times);
}

} // namespace pixdec
