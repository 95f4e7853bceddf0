#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "cws/autograd.hpp"
#include "cws/rng.hpp"
#include "cws/tensor.hpp"

namespace cws {

struct NamedParam {
    std::string name;
    Var var;
};
struct NamedBuffer {
    std::string name;
    Tensor* tensor;
};

// Base for layers. Parameters are registered by name so optimizers,
// checkpoints, EMA and freeze scopes address them as "stem1.conv.weight" etc.
class Module {
public:
    Module() = default;
    Module(const Module&) = delete;
    Module& operator=(const Module&) = delete;
    virtual ~Module() = default;

    std::vector<NamedParam> named_parameters() {
        std::vector<NamedParam> out;
        collect_params("", out);
        return out;
    }
    std::vector<NamedBuffer> named_buffers() {
        std::vector<NamedBuffer> out;
        collect_buffers("", out);
        return out;
    }
    int64_t parameter_count() {
        int64_t n = 0;
        for (auto& p : named_parameters()) n += p.var.numel();
        return n;
    }

    void collect_params(const std::string& prefix, std::vector<NamedParam>& out) {
        for (auto& p : params_) out.push_back({prefix + p.first, p.second});
        for (auto& c : children_) c.second->collect_params(prefix + c.first + ".", out);
    }
    void collect_buffers(const std::string& prefix, std::vector<NamedBuffer>& out) {
        for (auto& b : buffers_) out.push_back({prefix + b.first, b.second});
        for (auto& c : children_) c.second->collect_buffers(prefix + c.first + ".", out);
    }

protected:
    Var add_param(const std::string& name, Tensor init) {
        Var v = parameter(std::move(init));
        params_.emplace_back(name, v);
        return v;
    }
    void add_buffer(const std::string& name, Tensor* t) { buffers_.emplace_back(name, t); }
    void add_child(const std::string& name, Module* m) { children_.emplace_back(name, m); }

private:
    std::vector<std::pair<std::string, Var>> params_;
    std::vector<std::pair<std::string, Tensor*>> buffers_;
    std::vector<std::pair<std::string, Module*>> children_;
};

inline Var channel_view(const Var& v) {
    // [C] -> [1,C,1,1] for NCHW broadcasting
    return reshape(v, Shape{1, v.shape()[0], 1, 1});
}

class Conv2d : public Module {
public:
    Conv2d(int in_ch, int out_ch, int k, int stride, int pad, std::mt19937_64& rng, int groups = 1,
           bool bias = true)
        : stride_(stride), pad_(pad), groups_(groups), has_bias_(bias) {
        double fan_in = static_cast<double>(in_ch / groups) * k * k;
        weight = add_param("weight", randn(Shape{out_ch, in_ch / groups, k, k}, rng,
                                           std::sqrt(2.0 / fan_in)));
        if (bias) bias_v = add_param("bias", Tensor::zeros(Shape{out_ch}));
    }
    Var forward(const Var& x) { return conv2d(x, weight, has_bias_ ? bias_v : Var(), stride_, pad_, groups_); }

    Var weight, bias_v;

private:
    int stride_, pad_, groups_;
    bool has_bias_;
};

class Linear : public Module {
public:
    Linear(int in_dim, int out_dim, std::mt19937_64& rng) {
        weight = add_param("weight", randn(Shape{in_dim, out_dim}, rng, std::sqrt(2.0 / in_dim)));
        bias = add_param("bias", Tensor::zeros(Shape{out_dim}));
    }
    // x: [..., in_dim] flattened to 2-D by the caller
    Var forward(const Var& x) { return add(matmul(x, weight), bias); }

    Var weight, bias;
};

class BatchNorm2d : public Module {
public:
    explicit BatchNorm2d(int channels, double eps = 1e-5, double momentum = 0.1)
        : channels_(channels), eps_(eps), momentum_(momentum),
          running_mean_(Tensor::zeros(Shape{channels})), running_var_(Tensor::full(Shape{channels}, 1.0)) {
        gamma = add_param("gamma", Tensor::full(Shape{channels}, 1.0));
        beta = add_param("beta", Tensor::zeros(Shape{channels}));
        add_buffer("running_mean", &running_mean_);
        add_buffer("running_var", &running_var_);
    }

    Var forward(const Var& x, bool training) {
        if (x.shape()[1] != channels_) throw std::invalid_argument("BatchNorm2d: channel mismatch");
        Var mu, var;
        if (training) {
            mu = mean_dims(x, {0, 2, 3});
            var = mean_dims(mul(sub(x, mu), sub(x, mu)), {0, 2, 3});
            for (int c = 0; c < channels_; ++c) {
                running_mean_[c] = (1.0 - momentum_) * running_mean_[c] + momentum_ * mu.value()[c];
                running_var_[c] = (1.0 - momentum_) * running_var_[c] + momentum_ * var.value()[c];
            }
        } else {
            mu = constant(running_mean_.reshaped(Shape{1, channels_, 1, 1}));
            var = constant(running_var_.reshaped(Shape{1, channels_, 1, 1}));
        }
        Var xn = div(sub(x, mu), sqrt(add_c(var, eps_)));
        return add(mul(channel_view(gamma), xn), channel_view(beta));
    }

    Var gamma, beta;
    Tensor& running_mean() { return running_mean_; }
    Tensor& running_var() { return running_var_; }

private:
    int channels_;
    double eps_, momentum_;
    Tensor running_mean_, running_var_;
};

class InstanceNorm2d : public Module {
public:
    explicit InstanceNorm2d(int channels, double eps = 1e-5, bool affine = true)
        : channels_(channels), eps_(eps), affine_(affine) {
        if (affine) {
            gamma = add_param("gamma", Tensor::full(Shape{channels}, 1.0));
            beta = add_param("beta", Tensor::zeros(Shape{channels}));
        }
    }
    Var forward(const Var& x) {
        if (x.shape()[1] != channels_) throw std::invalid_argument("InstanceNorm2d: channel mismatch");
        Var mu = mean_dims(x, {2, 3});
        Var var = mean_dims(mul(sub(x, mu), sub(x, mu)), {2, 3});
        Var xn = div(sub(x, mu), sqrt(add_c(var, eps_)));
        if (!affine_) return xn;
        return add(mul(channel_view(gamma), xn), channel_view(beta));
    }

    Var gamma, beta;

private:
    int channels_;
    double eps_;
    bool affine_;
};

struct IBNConfig {
    int channels = 0;
    double ratio = 0.5;

    int half() const { return static_cast<int>(channels * ratio); }
    void validate() const {
        int h = half();
        if (h < 1 || channels - h < 1)
            throw std::invalid_argument("IBNConfig: need floor(channels*ratio) >= 1 and channels-half >= 1");
    }
};

// Instance-batch normalisation: the first `half` channels are instance
// normalised, the rest batch normalised, outputs concatenated in the
// original channel order.
class IBN : public Module {
public:
    explicit IBN(IBNConfig cfg, double eps = 1e-5, double momentum = 0.1) : cfg_(cfg) {
        cfg_.validate();
        in_norm_ = std::make_unique<InstanceNorm2d>(cfg_.half(), eps);
        bn_norm_ = std::make_unique<BatchNorm2d>(cfg_.channels - cfg_.half(), eps, momentum);
        add_child("in", in_norm_.get());
        add_child("bn", bn_norm_.get());
    }

    Var forward(const Var& x, bool training) {
        if (x.shape()[1] != cfg_.channels) throw std::invalid_argument("IBN: channel mismatch");
        int h = cfg_.half();
        Var lo = narrow(x, 1, 0, h);
        Var hi = narrow(x, 1, h, cfg_.channels - h);
        return cat({in_norm_->forward(lo), bn_norm_->forward(hi, training)}, 1);
    }

    const IBNConfig& config() const { return cfg_; }
    BatchNorm2d& bn() { return *bn_norm_; }

private:
    IBNConfig cfg_;
    std::unique_ptr<InstanceNorm2d> in_norm_;
    std::unique_ptr<BatchNorm2d> bn_norm_;
};

// Switchable normalisation: normalises with softmax-weighted mixtures of
// instance, layer and batch statistics. Mean and variance mixtures carry
// independent logits. Variances are the within-estimator ones, each taken
// around its own mean, which is the formulation of the cited method.
class SwitchNorm2d : public Module {
public:
    explicit SwitchNorm2d(int channels, double eps = 1e-5, double momentum = 0.1)
        : channels_(channels), eps_(eps), momentum_(momentum),
          running_mean_(Tensor::zeros(Shape{channels})), running_var_(Tensor::full(Shape{channels}, 1.0)) {
        mean_logits = add_param("mean_logits", Tensor::zeros(Shape{3}));  // order: in, ln, bn
        var_logits = add_param("var_logits", Tensor::zeros(Shape{3}));
        gamma = add_param("gamma", Tensor::full(Shape{channels}, 1.0));
        beta = add_param("beta", Tensor::zeros(Shape{channels}));
        add_buffer("running_mean", &running_mean_);
        add_buffer("running_var", &running_var_);
    }

    Var forward(const Var& x, bool training) {
        if (x.shape()[1] != channels_) throw std::invalid_argument("SwitchNorm2d: channel mismatch");
        Var mu_in = mean_dims(x, {2, 3});
        Var v_in = mean_dims(mul(sub(x, mu_in), sub(x, mu_in)), {2, 3});
        Var mu_ln = mean_dims(x, {1, 2, 3});
        Var v_ln = mean_dims(mul(sub(x, mu_ln), sub(x, mu_ln)), {1, 2, 3});
        Var mu_bn, v_bn;
        if (training) {
            mu_bn = mean_dims(x, {0, 2, 3});
            v_bn = mean_dims(mul(sub(x, mu_bn), sub(x, mu_bn)), {0, 2, 3});
            for (int c = 0; c < channels_; ++c) {
                running_mean_[c] = (1.0 - momentum_) * running_mean_[c] + momentum_ * mu_bn.value()[c];
                running_var_[c] = (1.0 - momentum_) * running_var_[c] + momentum_ * v_bn.value()[c];
            }
        } else {
            mu_bn = constant(running_mean_.reshaped(Shape{1, channels_, 1, 1}));
            v_bn = constant(running_var_.reshaped(Shape{1, channels_, 1, 1}));
        }
        Var wm = softmax(mean_logits, 0);
        Var wv = softmax(var_logits, 0);
        Var mu = add(add(mul(index1(wm, 0), mu_in), mul(index1(wm, 1), mu_ln)), mul(index1(wm, 2), mu_bn));
        Var var = add(add(mul(index1(wv, 0), v_in), mul(index1(wv, 1), v_ln)), mul(index1(wv, 2), v_bn));
        Var xn = div(sub(x, mu), sqrt(add_c(var, eps_)));
        return add(mul(channel_view(gamma), xn), channel_view(beta));
    }

    Var mean_logits, var_logits, gamma, beta;
    Tensor& running_mean() { return running_mean_; }
    Tensor& running_var() { return running_var_; }

private:
    int channels_;
    double eps_, momentum_;
    Tensor running_mean_, running_var_;
};

class PReLU : public Module {
public:
    explicit PReLU(int channels, double init_slope = 0.25) {
        slope = add_param("slope", Tensor::full(Shape{channels}, init_slope));
    }
    Var forward(const Var& x) { return prelu(x, slope); }

    Var slope;
};

// Layer norm over the last dimension of a [rows, dim] tensor.
class LayerNorm : public Module {
public:
    explicit LayerNorm(int dim, double eps = 1e-5) : dim_(dim), eps_(eps) {
        gamma = add_param("gamma", Tensor::full(Shape{dim}, 1.0));
        beta = add_param("beta", Tensor::zeros(Shape{dim}));
    }
    Var forward(const Var& x) {
        int last = static_cast<int>(x.shape().size()) - 1;
        if (x.shape()[static_cast<size_t>(last)] != dim_)
            throw std::invalid_argument("LayerNorm: dim mismatch");
        Var mu = mean_dims(x, {last});
        Var var = mean_dims(mul(sub(x, mu), sub(x, mu)), {last});
        Var xn = div(sub(x, mu), sqrt(add_c(var, eps_)));
        return add(mul(xn, gamma), beta);
    }

    Var gamma, beta;

private:
    int dim_;
    double eps_;
};

}  // namespace cws
