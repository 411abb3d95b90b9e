#pragma once

#include "ccdnet/backbone/wmp.hpp"
#include "ccdnet/core/rng.hpp"

namespace testutil {

using namespace ccdnet;

/// Randomize every learnable and every running statistic of a block, the way
/// an arbitrary point mid-training would look.
template <typename T>
inline void randomize_wmp(WmpBlock<T>& blk, Rng& rng) {
    for (auto& br : blk.branches()) {
        if (br.kind != BranchKind::identity) rng.fill_uniform(br.conv.w.value, -1.0, 1.0);
        rng.fill_uniform(br.bn.gamma.value, 0.2, 2.0);
        rng.fill_uniform(br.bn.beta.value, -1.0, 1.0);
        rng.fill_uniform(br.bn.run_mean, -0.5, 0.5);
        rng.fill_uniform(br.bn.run_var, 0.05, 2.0);
        br.p.value[0] = static_cast<T>(rng.uniform(-1.5, 1.5));
    }
}

template <typename T>
inline Tensor<T> random_input(Rng& rng, int n, int c, int h, int w, double lo = -1.0,
                              double hi = 1.0) {
    Tensor<T> x({n, c, h, w});
    rng.fill_uniform(x, lo, hi);
    return x;
}

}  // namespace testutil
