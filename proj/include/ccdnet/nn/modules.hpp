#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "ccdnet/core/autodiff.hpp"
#include "ccdnet/core/rng.hpp"

namespace ccdnet {

constexpr double kBnEps = 1e-5;

template <typename T>
using ParamList = std::vector<Parameter<T>*>;

template <typename T>
struct Conv2d {
    Parameter<T> w;
    Parameter<T> b;  // empty tensor when bias-free
    int stride = 1, pad = 0, dilation = 1;
    bool has_bias = true;

    Conv2d() = default;
    Conv2d(const std::string& name, int in_ch, int out_ch, int k, int stride_, int pad_, bool bias,
           Rng& rng, int dilation_ = 1)
        : stride(stride_), pad(pad_), dilation(dilation_), has_bias(bias) {
        Tensor<T> kw({out_ch, in_ch, k, k});
        const double std = std::sqrt(2.0 / (static_cast<double>(in_ch) * k * k));
        rng.fill_normal(kw, 0.0, std);
        w = Parameter<T>(name + ".w", std::move(kw));
        if (bias) b = Parameter<T>(name + ".b", Tensor<T>({out_ch}));
    }

    Var<T> operator()(Tape<T>& t, Var<T> x) {
        return conv2d(x, t.param(w), has_bias ? t.param(b) : Var<T>{}, stride, pad, dilation);
    }

    void collect(ParamList<T>& out) {
        out.push_back(&w);
        if (has_bias) out.push_back(&b);
    }

    std::int64_t macs(int out_h, int out_w) const {
        return static_cast<std::int64_t>(w.value.dim(0)) * w.value.dim(1) * w.value.dim(2) *
               w.value.dim(3) * out_h * out_w;
    }
};

template <typename T>
struct BatchNorm2d {
    Parameter<T> gamma, beta;
    Tensor<T> run_mean, run_var;
    T momentum = T(0.1);

    BatchNorm2d() = default;
    BatchNorm2d(const std::string& name, int ch)
        : gamma(name + ".gamma", Tensor<T>::full({ch}, T(1))),
          beta(name + ".beta", Tensor<T>({ch})),
          run_mean(Tensor<T>({ch})),
          run_var(Tensor<T>::full({ch}, T(1))) {}

    Var<T> operator()(Tape<T>& t, Var<T> x, bool batch_stats) {
        if (batch_stats) {
            BnRunning<T> upd{&run_mean, &run_var, momentum};
            return batchnorm_batch(x, t.param(gamma), t.param(beta), static_cast<T>(kBnEps), upd);
        }
        return batchnorm_frozen(x, t.param(gamma), t.param(beta), run_mean, sigma());
    }

    /// Standard deviation view of the running variance.
    Tensor<T> sigma() const {
        Tensor<T> s(run_var.shape());
        for (std::int64_t i = 0; i < s.numel(); ++i)
            s[i] = std::sqrt(run_var[i] + static_cast<T>(kBnEps));
        return s;
    }

    void collect(ParamList<T>& out) {
        out.push_back(&gamma);
        out.push_back(&beta);
    }
};

template <typename T>
struct Dense {
    Parameter<T> w, b;

    Dense() = default;
    Dense(const std::string& name, int in_dim, int out_dim, Rng& rng) {
        Tensor<T> kw({in_dim, out_dim});
        rng.fill_normal(kw, 0.0, std::sqrt(2.0 / in_dim));
        w = Parameter<T>(name + ".w", std::move(kw));
        b = Parameter<T>(name + ".b", Tensor<T>({out_dim}));
    }

    Var<T> operator()(Tape<T>& t, Var<T> x) { return linear(x, t.param(w), t.param(b)); }

    void collect(ParamList<T>& out) {
        out.push_back(&w);
        out.push_back(&b);
    }
};

template <typename T>
inline std::int64_t param_count(const ParamList<T>& ps) {
    std::int64_t n = 0;
    for (auto* p : ps) n += p->value.numel();
    return n;
}

}  // namespace ccdnet
