#pragma once

#include <cmath>
#include <vector>

#include "canmap/nn.hpp"

namespace canmap::nn {

// Adam over a fixed parameter set. State vectors are keyed by position, so
// the parameter list must not change between steps.
template <class T>
class Adam {
public:
    Adam(std::vector<Param<T>*> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
         double eps = 1e-8)
        : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
        m_.reserve(params_.size());
        v_.reserve(params_.size());
        for (auto* p : params_) {
            m_.emplace_back(p->v.shape, T(0));
            v_.emplace_back(p->v.shape, T(0));
        }
    }

    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }

    void zero_grad() {
        for (auto* p : params_) p->g.zero();
    }

    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, t_);
        const double bc2 = 1.0 - std::pow(beta2_, t_);
        for (size_t pi = 0; pi < params_.size(); ++pi) {
            Param<T>& p = *params_[pi];
            Tensor<T>& m = m_[pi];
            Tensor<T>& v = v_[pi];
            const int64_t n = p.v.size();
            for (int64_t i = 0; i < n; ++i) {
                double g = p.g[i];
                double mi = beta1_ * m[i] + (1.0 - beta1_) * g;
                double vi = beta2_ * v[i] + (1.0 - beta2_) * g * g;
                m[i] = static_cast<T>(mi);
                v[i] = static_cast<T>(vi);
                p.v[i] -= static_cast<T>(lr_ * (mi / bc1) / (std::sqrt(vi / bc2) + eps_));
            }
        }
    }

private:
    std::vector<Param<T>*> params_;
    double lr_, beta1_, beta2_, eps_;
    int64_t t_ = 0;
    std::vector<Tensor<T>> m_, v_;
};

} // namespace canmap::nn
