#pragma once

#include <cmath>
#include <vector>

#include "opq/nn.hpp"

namespace opq {

// AdamW: decoupled weight decay applied to the parameter before the
// bias-corrected Adam update. Zero grad with zero decay is a no-op at any
// step count. Caller owns grad zeroing (step() leaves grads untouched).
template <class S>
class AdamWT {
  public:
    S lr, beta1, beta2, eps, weight_decay;

    AdamWT(ParamSetT<S>& params, S lr_, S weight_decay_, S beta1_ = S(0.9), S beta2_ = S(0.999),
           S eps_ = S(1e-8))
        : lr(lr_),
          beta1(beta1_),
          beta2(beta2_),
          eps(eps_),
          weight_decay(weight_decay_),
          params_(&params) {
        check(lr > S(0), "AdamW: lr must be positive");
        for (const auto& v : params.vars) {
            m_.emplace_back(v.val().numel(), S(0));
            v_.emplace_back(v.val().numel(), S(0));
        }
    }

    long long step_count() const { return t_; }

    void step() {
        ++t_;
        S bc1 = S(1) - static_cast<S>(std::pow(static_cast<double>(beta1), t_));
        S bc2 = S(1) - static_cast<S>(std::pow(static_cast<double>(beta2), t_));
        for (size_t pi = 0; pi < params_->vars.size(); ++pi) {
            auto& node = *params_->vars[pi].node();
            node.ensure_grad();
            S* p = node.val.data.data();
            const S* g = node.grad.data.data();
            S* m = m_[pi].data();
            S* v = v_[pi].data();
            size_t n = node.val.numel();
            S decay = S(1) - lr * weight_decay;
            for (size_t i = 0; i < n; ++i) {
                p[i] *= decay;
                m[i] = beta1 * m[i] + (S(1) - beta1) * g[i];
                v[i] = beta2 * v[i] + (S(1) - beta2) * g[i] * g[i];
                S mhat = m[i] / bc1;
                S vhat = v[i] / bc2;
                p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
            }
        }
    }

    void zero_grads() { params_->zero_grads(); }

  private:
    ParamSetT<S>* params_;
    long long t_ = 0;
    std::vector<std::vector<S>> m_, v_;
};

using AdamW = AdamWT<float>;

}  // namespace opq
