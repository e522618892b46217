// Copyright (C) 2026 The pixdec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Uniform interface over velocity models so samplers, distillation and
// instrumentation work the same on the pixel decoder and on toy models.

#include "pixdec/decoder.hpp"
#include "pixdec/digest.hpp"

#include <torch/torch.h>

#include <atomic>
#include <memory>
#include <vector>

namespace pixdec {

struct FlowCondition {
    torch::Tensor text_ids; // [B, L] padded ids, or undefined
    LatentInput latent;     // values undefined when there is no latent

    bool has_latent() const { return latent.values.defined(); }
};

struct FlowEval {
    torch::Tensor velocity;
    torch::Tensor features; // defined only when requested
};

class FlowModel {
public:
    virtual ~FlowModel() = default;

    /// Velocity at x [B, ...] and per-sample times t [B].
    virtual FlowEval evaluate(const torch::Tensor& x, const torch::Tensor& t, const FlowCondition& cond,
                              bool want_features) = 0;

    virtual std::vector<torch::Tensor> parameters() = 0;
    virtual NamedTensors named_tensors() const = 0;

    /// Deep copy with independent parameters.
    virtual std::shared_ptr<FlowModel> clone() const = 0;

    /// The same condition with the caption replaced by the null caption.
    virtual FlowCondition drop_text(const FlowCondition& cond) const { return cond; }

    torch::Tensor velocity(const torch::Tensor& x, const torch::Tensor& t, const FlowCondition& cond)
    {
        return evaluate(x, t, cond, false).velocity;
    }

    void set_requires_grad(bool flag);
};

using FlowModelPtr = std::shared_ptr<FlowModel>;

/// The latent-conditioned pixel decoder (or, without a latent, the prior).
class DecoderFlowModel : public FlowModel {
public:
    explicit DecoderFlowModel(PixelDecoder decoder);

    FlowEval evaluate(const torch::Tensor& x, const torch::Tensor& t, const FlowCondition& cond,
                      bool want_features) override;
    std::vector<torch::Tensor> parameters() override { return decoder_->parameters(); }
    NamedTensors named_tensors() const override { return module_tensors(*decoder_); }
    FlowModelPtr clone() const override;
    FlowCondition drop_text(const FlowCondition& cond) const override;

    PixelDecoder& decoder() { return decoder_; }

private:
    mutable PixelDecoder decoder_;
};

/// Counts evaluate() calls and evaluated samples; forwards everything else.
class CountingFlowModel : public FlowModel {
public:
    explicit CountingFlowModel(FlowModelPtr inner) : inner_(std::move(inner)) {}

    FlowEval evaluate(const torch::Tensor& x, const torch::Tensor& t, const FlowCondition& cond,
                      bool want_features) override;
    std::vector<torch::Tensor> parameters() override { return inner_->parameters(); }
    NamedTensors named_tensors() const override { return inner_->named_tensors(); }
    FlowModelPtr clone() const override { return std::make_shared<CountingFlowModel>(inner_->clone()); }
    FlowCondition drop_text(const FlowCondition& cond) const override { return inner_->drop_text(cond); }

    int64_t calls() const { return calls_; }
    int64_t samples() const { return samples_; }
    void reset() { calls_ = samples_ = 0; }

private:
    FlowModelPtr inner_;
    std::atomic<int64_t> calls_{0};
    std::atomic<int64_t> samples_{0};
};

/// Exact velocity for elementwise Gaussian data N(mu, var). No parameters.
class GaussianOracleModel : public FlowModel {
public:
    GaussianOracleModel(double mu, double var);

    FlowEval evaluate(const torch::Tensor& x, const torch::Tensor& t, const FlowCondition& cond,
                      bool want_features) override;
    std::vector<torch::Tensor> parameters() override { return {}; }
    NamedTensors named_tensors() const override { return {}; }
    FlowModelPtr clone() const override { return std::make_shared<GaussianOracleModel>(mu_, var_); }

private:
    double mu_;
    double var_;
};

/// Small velocity MLP over flat vectors [B, dim], for low-dimensional toys.
/// Features are the last hidden activations.
class ToyFlowMlpImpl : public torch::nn::Module {
public:
    ToyFlowMlpImpl(int64_t dim, int64_t hidden, int64_t depth, uint64_t seed);

    FlowEval forward(const torch::Tensor& x, const torch::Tensor& t, bool want_features);

    int64_t dim() const { return dim_; }
    int64_t hidden() const { return hidden_; }
    int64_t depth() const { return depth_; }

private:
    int64_t dim_, hidden_, depth_;
    static constexpr int64_t kTimeDim = 32;
    torch::nn::ModuleList layers_{nullptr};
    torch::nn::Linear out_{nullptr};
};
TORCH_MODULE(ToyFlowMlp);

class ToyFlowModel : public FlowModel {
public:
    explicit ToyFlowModel(ToyFlowMlp net) : net_(std::move(net)) {}

    FlowEval evaluate(const torch::Tensor& x, const torch::Tensor& t, const FlowCondition& cond,
                      bool want_features) override;
    std::vector<torch::Tensor> parameters() override { return net_->parameters(); }
    NamedTensors named_tensors() const override { return module_tensors(*net_); }
    FlowModelPtr clone() const override;

    ToyFlowMlp& net() { return net_; }

private:
    ToyFlowMlp net_;
};

} // namespace pixdec
