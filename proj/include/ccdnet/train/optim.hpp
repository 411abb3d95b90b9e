#pragma once

#include <cmath>
#include <vector>

#include "ccdnet/core/autodiff.hpp"

namespace ccdnet {

/// AdamW with decoupled weight decay. State is positional: pass the same
/// parameter list (same order) every step.
template <typename T>
class AdamW {
public:
    AdamW(double lr, double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
          double eps = 1e-8)
        : lr_(lr), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {}

    void step(const ParamList<T>& params) {
        if (state_.empty()) {
            state_.resize(params.size());
            for (std::size_t i = 0; i < params.size(); ++i) {
                state_[i].m = Tensor<T>::zeros(params[i]->value.shape());
                state_[i].v = Tensor<T>::zeros(params[i]->value.shape());
            }
        }
        ++t_;
        const double bc1 = 1.0 - std::pow(b1_, t_);
        const double bc2 = 1.0 - std::pow(b2_, t_);
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto& p = *params[i];
            auto& st = state_[i];
            for (std::int64_t j = 0; j < p.value.numel(); ++j) {
                const double g = p.grad[j];
                st.m[j] = static_cast<T>(b1_ * st.m[j] + (1 - b1_) * g);
                st.v[j] = static_cast<T>(b2_ * st.v[j] + (1 - b2_) * g * g);
                const double mhat = st.m[j] / bc1;
                const double vhat = st.v[j] / bc2;
                p.value[j] = static_cast<T>(p.value[j] -
                                            lr_ * (mhat / (std::sqrt(vhat) + eps_) + wd_ * p.value[j]));
            }
        }
    }

    void zero_grad(const ParamList<T>& params) {
        for (auto* p : params) p->zero_grad();
    }

private:
    struct State {
        Tensor<T> m, v;
    };
    double lr_, wd_, b1_, b2_, eps_;
    std::int64_t t_ = 0;
    std::vector<State> state_;
};

}  // namespace ccdnet
