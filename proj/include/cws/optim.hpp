#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "cws/nn.hpp"

namespace cws {

// Reference hyperparameters; desk-scale runs override the learning rate.
struct AdamWConfig {
    double lr = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-7;
    double weight_decay = 0.01;
};

// AdamW with decoupled weight decay. Parameters whose node is marked
// non-trainable are skipped entirely (values, moments and decay untouched).
class AdamW {
public:
    AdamW(std::vector<NamedParam> params, AdamWConfig cfg = {})
        : params_(std::move(params)), cfg_(cfg) {
        for (auto& p : params_) {
            m_.push_back(Tensor::zeros(p.var.shape()));
            v_.push_back(Tensor::zeros(p.var.shape()));
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.var.zero_grad();
    }

    void step() {
        ++t_;
        double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
        double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
        for (size_t i = 0; i < params_.size(); ++i) {
            Var& p = params_[i].var;
            if (!p.node()->trainable || !p.has_grad()) continue;
            const Tensor& g = p.grad();
            Tensor& m = m_[i];
            Tensor& v = v_[i];
            Tensor& w = p.value();
            for (int64_t j = 0; j < w.numel(); ++j) {
                m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
                v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
                double mhat = m[j] / bc1, vhat = v[j] / bc2;
                w[j] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.epsilon) + cfg_.weight_decay * w[j]);
            }
        }
    }

    const AdamWConfig& config() const { return cfg_; }

private:
    std::vector<NamedParam> params_;
    AdamWConfig cfg_;
    std::vector<Tensor> m_, v_;
    int64_t t_ = 0;
};

// Exponential moving average of parameters: shadow <- d*shadow + (1-d)*param.
// Never mutates the live parameters.
class EmaState {
public:
    EmaState() = default;
    EmaState(const std::vector<NamedParam>& params, double decay) : decay_(decay) {
        if (decay <= 0.0 || decay >= 1.0) throw std::invalid_argument("EmaState: decay must lie in (0,1)");
        for (const auto& p : params) shadow_.emplace_back(p.name, p.var.value());
    }

    void update(const std::vector<NamedParam>& params) {
        if (params.size() != shadow_.size()) throw std::invalid_argument("EmaState: parameter list changed");
        for (size_t i = 0; i < params.size(); ++i) {
            const Tensor& w = params[i].var.value();
            Tensor& s = shadow_[i].second;
            if (!w.same_shape(s)) throw std::invalid_argument("EmaState: shape mismatch at " + shadow_[i].first);
            for (int64_t j = 0; j < w.numel(); ++j) s[j] = decay_ * s[j] + (1.0 - decay_) * w[j];
        }
    }

    double decay() const { return decay_; }
    const std::vector<std::pair<std::string, Tensor>>& shadow() const { return shadow_; }
    std::vector<std::pair<std::string, Tensor>>& shadow() { return shadow_; }

    // copy the shadow values into the given parameters
    void apply_to(std::vector<NamedParam>& params) const {
        for (size_t i = 0; i < params.size(); ++i) params[i].var.value() = shadow_[i].second;
    }

private:
    double decay_ = 0.999;
    std::vector<std::pair<std::string, Tensor>> shadow_;
};

}  // namespace cws
