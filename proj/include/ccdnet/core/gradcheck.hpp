#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ccdnet/core/autodiff.hpp"

namespace ccdnet {

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst;  // "<param>[i]"
    int checked = 0;
};

/// Central-difference check of autodiff gradients for every element of every
/// listed parameter. `loss_fn` must evaluate the scalar loss from the current
/// parameter values (fresh tape per call).
inline GradCheckReport grad_check(std::vector<Parameter<double>*> params,
                                  const std::function<double()>& loss_fn,
                                  const std::function<void()>& backward_fn,
                                  double h = 1e-6) {
    for (auto* p : params) p->zero_grad();
    backward_fn();

    GradCheckReport rep;
    for (auto* p : params) {
        for (std::int64_t i = 0; i < p->value.numel(); ++i) {
            const double keep = p->value[i];
            p->value[i] = keep + h;
            const double lp = loss_fn();
            p->value[i] = keep - h;
            const double lm = loss_fn();
            p->value[i] = keep;
            const double fd = (lp - lm) / (2.0 * h);
            const double ad = p->grad[i];
            const double denom = std::max({std::abs(fd), std::abs(ad), 1e-3});
            const double rel = std::abs(fd - ad) / denom;
            ++rep.checked;
            if (rel > rep.max_rel_err) {
                rep.max_rel_err = rel;
                rep.worst = p->name + "[" + std::to_string(i) + "]";
            }
        }
    }
    return rep;
}

}  // namespace ccdnet
