// Copyright (C) 2026 The pixdec Authors
// SPDX-License-Identifier: Apache-2.0

#include "pixdec/flow_model.hpp"

#include "nn_util.hpp"
#include "pixdec/backbone.hpp"
#include "pixdec/errors.hpp"
#include "pixdec/eval.hpp"

namespace pixdec {

void FlowModel::set_requires_grad(bool flag)
{
    for (auto& p : parameters())
        p.set_requires_grad(flag);
}

DecoderFlowModel::DecoderFlowModel(PixelDecoder decoder) : decoder_(std::move(decoder)) {}

FlowEval DecoderFlowModel::evaluate(const torch::Tensor& x, const torch::Tensor& t, const FlowCondition& cond,
                                    bool want_features)
{
    auto text = cond.text_ids.defined() ? cond.text_ids : decoder_->backbone()->null_text(x.size(0));
    auto out = decoder_->forward_full(x, t, text, cond.has_latent() ? &cond.latent : nullptr, want_features);
    return {out.velocity, out.mid_features};
}

FlowModelPtr DecoderFlowModel::clone() const
{
    PixelDecoder copy(decoder_->config());
    copy_weights(*decoder_, *copy);
    auto src = decoder_->named_parameters();
    for (auto& item : copy->named_parameters())
        item.value().set_requires_grad(src[item.key()].requires_grad());
    copy->train(decoder_->is_training());
    return std::make_shared<DecoderFlowModel>(copy);
}

FlowCondition DecoderFlowModel::drop_text(const FlowCondition& cond) const
{
    FlowCondition out = cond;
    const auto batch = cond.text_ids.defined() ? cond.text_ids.size(0) : int64_t{1};
    out.text_ids = decoder_->backbone()->null_text(batch);
    return out;
}

FlowEval CountingFlowModel::evaluate(const torch::Tensor& x, const torch::Tensor& t, const FlowCondition& cond,
                                     bool want_features)
{
    ++calls_;
    samples_ += x.size(0);
    return inner_->evaluate(x, t, cond, want_features);
}

GaussianOracleModel::GaussianOracleModel(double mu, double var) : mu_(mu), var_(var)
{
    if (!(var > 0.0))
        throw DomainError("GaussianOracleModel: variance must be positive");
}

FlowEval GaussianOracleModel::evaluate(const torch::Tensor& x, const torch::Tensor& t, const FlowCondition&,
                                       bool want_features)
{
    FlowEval out;
    out.velocity = eval::gaussian_flow_oracle(mu_, var_, t, x);
    if (want_features)
        out.features = x.flatten(1);
    return out;
}

ToyFlowMlpImpl::ToyFlowMlpImpl(int64_t dim, int64_t hidden, int64_t depth, uint64_t seed)
    : dim_(dim), hidden_(hidden), depth_(depth)
{
    if (dim < 1 || hidden < 1 || depth < 1)
        throw ConfigError("ToyFlowMlp: sizes must be positive");
    layers_ = register_module("layers", torch::nn::ModuleList());
    int64_t in = dim + kTimeDim;
    for (int64_t i = 0; i < depth; ++i) {
        layers_->push_back(torch::nn::Linear(in, hidden));
        in = hidden;
    }
    out_ = register_module("out", torch::nn::Linear(hidden, dim));
    Rng rng(mix_seed(seed, "toy_mlp"));
    detail::init_module(*this, rng);
}

FlowEval ToyFlowMlpImpl::forward(const torch::Tensor& x, const torch::Tensor& t, bool want_features)
{
    if (x.dim() != 2 || x.size(1) != dim_)
        throw ShapeError("ToyFlowMlp: expected [B, dim]");
    auto h = torch::cat({x, sinusoidal_embedding(t.to(x.scalar_type()) * 1000.0, kTimeDim).to(x.scalar_type())}, 1);
    for (const auto& layer : *layers_)
        h = torch::silu(layer->as<torch::nn::Linear>()->forward(h));
    FlowEval out;
    out.velocity = out_->forward(h);
    if (want_features)
        out.features = h;
    return out;
}

FlowEval ToyFlowModel::evaluate(const torch::Tensor& x, const torch::Tensor& t, const FlowCondition&,
                                bool want_features)
{
    return net_->forward(x, t, want_features);
}

FlowModelPtr ToyFlowModel::clone() const
{
    ToyFlowMlp copy(net_->dim(), net_->hidden(), net_->depth(), 0);
    copy->to(net_->parameters().front().scalar_type());
    copy_weights(*net_, *copy);
    return std::make_shared<ToyFlowModel>(copy);
}

} // namespace pixdec
