#include <doctest.h>

#include "ccdnet/core/autodiff.hpp"
#include "ccdnet/core/gradcheck.hpp"
#include "ccdnet/core/image_ops.hpp"
#include "ccdnet/core/rng.hpp"
#include "oracles.hpp"

using namespace ccdnet;

namespace {

template <typename T>
Tensor<T> random_tensor(Rng& rng, std::vector<int> shape, double lo = -1.0, double hi = 1.0) {
    Tensor<T> t(std::move(shape));
    rng.fill_uniform(t, lo, hi);
    return t;
}

}  // namespace

TEST_CASE("conv2d forward matches direct-convolution oracle") {
    Rng rng(7);
    for (int trial = 0; trial < 8; ++trial) {
        const int stride = (trial % 2) + 1;
        const int k = (trial % 3 == 0) ? 1 : 3;
        const int pad = (k == 3) ? 1 : 0;
        auto x = random_tensor<double>(rng, {2, 3, 8, 8});
        auto w = random_tensor<double>(rng, {4, 3, k, k});
        auto b = random_tensor<double>(rng, {4});
        Tape<double> t;
        auto y = conv2d(t.constant(x), t.constant(w), t.constant(b), stride, pad);
        auto ref = oracle::conv2d(x, w, b, stride, pad);
        CHECK(max_abs_diff(y.val(), ref) < 1e-12);
    }
}

TEST_CASE("conv2d rejects channel mismatch") {
    Tape<double> t;
    auto x = t.constant(Tensor<double>({1, 3, 4, 4}));
    auto w = t.constant(Tensor<double>({2, 4, 3, 3}));
    CHECK_THROWS_AS(conv2d(x, w, Var<double>{}, 1, 1), ShapeError);
}

TEST_CASE("upsample matches oracle for both modes") {
    Rng rng(11);
    auto x = random_tensor<double>(rng, {1, 2, 5, 4});
    for (int f : {2, 4}) {
        Tape<double> t;
        auto xb = upsample(t.constant(x), f, Resample::bilinear);
        auto xn = upsample(t.constant(x), f, Resample::nearest);
        CHECK(max_abs_diff(xb.val(), oracle::upsample_bilinear(x, f)) < 1e-12);
        CHECK(max_abs_diff(xn.val(), oracle::upsample_nearest(x, f)) < 1e-12);
    }
}

TEST_CASE("batchnorm_frozen matches affine oracle and validates sigma") {
    Rng rng(3);
    auto x = random_tensor<double>(rng, {2, 3, 4, 4});
    std::vector<double> mu{0.1, -0.2, 0.3}, sigma{1.1, 0.7, 2.0}, gam{1.0, 2.0, 0.5},
        bet{0.0, -1.0, 0.25};
    Tape<double> t;
    Parameter<double> pg("g", Tensor<double>({3})), pb("b", Tensor<double>({3}));
    for (int c = 0; c < 3; ++c) {
        pg.value[c] = gam[c];
        pb.value[c] = bet[c];
    }
    Tensor<double> tm({3}), ts({3});
    for (int c = 0; c < 3; ++c) {
        tm[c] = mu[c];
        ts[c] = sigma[c];
    }
    auto y = batchnorm_frozen(t.constant(x), t.param(pg), t.param(pb), tm, ts);
    CHECK(max_abs_diff(y.val(), oracle::batchnorm_stats(x, mu, sigma, gam, bet)) < 1e-12);

    ts[1] = 0.0;
    CHECK_THROWS_AS(batchnorm_frozen(t.constant(x), t.param(pg), t.param(pb), tm, ts),
                    InvalidBnError);
}

TEST_CASE("gradients of core ops agree with central differences") {
    Rng rng(23);
    Parameter<double> w("w", random_tensor<double>(rng, {3, 2, 3, 3}));
    Parameter<double> b("b", random_tensor<double>(rng, {3}));
    Parameter<double> gam("gamma", random_tensor<double>(rng, {3}, 0.5, 1.5));
    Parameter<double> bet("beta", random_tensor<double>(rng, {3}, -0.5, 0.5));
    Parameter<double> lw("lw", random_tensor<double>(rng, {12, 5}));
    Parameter<double> lb("lb", random_tensor<double>(rng, {5}));
    auto x = random_tensor<double>(rng, {2, 2, 4, 4});
    Tensor<double> bce_targets({2, 5});
    rng.fill_uniform(bce_targets, 0.0, 1.0);

    auto forward = [&](Tape<double>& t) {
        auto xv = t.constant(x);
        auto h = conv2d(xv, t.param(w), t.param(b), 1, 1);
        h = batchnorm_batch(h, t.param(gam), t.param(bet), 1e-5);
        h = relu(h);
        h = upsample(h, 2, Resample::bilinear);
        h = spatial_softmax_scaled(h);
        auto pooled = global_avg_pool(mul(h, h));              // (2,3)
        auto flat = reshape(crop(h, 0, 0, 2, 2), {2, 12});     // (2,12)
        auto z = linear(flat, t.param(lw), t.param(lb));       // (2,5)
        auto sm = softmax_rows(z);
        auto l1 = bce_logits_sum(z, bce_targets);
        auto l2 = sum_all(mul(sm, sm));
        auto l3 = mean_all(vsqrt(add_const(mul(pooled, pooled), 0.1)));
        auto l4 = sum_all(vabs(sub(pooled, global_avg_pool(h))));
        auto range = sub(max_all(h), min_all(h));
        auto l5 = vlog(add_const(range, 1e-6));
        return add(add(add(l1, l2), add(l3, l4)), l5);
    };

    auto loss_value = [&]() {
        Tape<double> t;
        return forward(t).val()[0];
    };
    auto run_backward = [&]() {
        Tape<double> t;
        auto loss = forward(t);
        t.backward(loss);
    };

    auto rep = grad_check({&w, &b, &gam, &bet, &lw, &lb}, loss_value, run_backward, 1e-6);
    CAPTURE(rep.worst);
    CHECK(rep.max_rel_err < 1e-3);
}

TEST_CASE("deformable conv gradients agree with central differences") {
    Rng rng(41);
    Parameter<double> w("w", random_tensor<double>(rng, {2, 2, 3, 3}));
    Parameter<double> b("b", random_tensor<double>(rng, {2}));
    auto x = random_tensor<double>(rng, {1, 2, 5, 5});
    Parameter<double> off("off", random_tensor<double>(rng, {1, 18, 5, 5}, -0.7, 0.7));
    Parameter<double> mlog("mlog", random_tensor<double>(rng, {1, 9, 5, 5}, -1.0, 1.0));

    auto loss_fn = [&](bool do_backward) {
        Tape<double> t;
        auto y = deform_conv3x3(t.constant(x), t.param(off), sigmoid(t.param(mlog)), t.param(w),
                                t.param(b));
        auto loss = sum_all(mul(y, y));
        if (do_backward) t.backward(loss);
        return loss.val()[0];
    };
    auto rep = grad_check({&w, &b, &off, &mlog}, [&] { return loss_fn(false); },
                          [&] { loss_fn(true); }, 1e-6);
    CAPTURE(rep.worst);
    CHECK(rep.max_rel_err < 1e-3);
}

TEST_CASE("deformable conv with zero offsets and unit mask equals plain conv") {
    Rng rng(5);
    auto x = random_tensor<double>(rng, {2, 3, 6, 6});
    auto w = random_tensor<double>(rng, {4, 3, 3, 3});
    auto b = random_tensor<double>(rng, {4});
    Tape<double> t;
    auto off = t.constant(Tensor<double>({2, 18, 6, 6}));
    auto msk = t.constant(Tensor<double>::full({2, 9, 6, 6}, 1.0));
    auto y = deform_conv3x3(t.constant(x), off, msk, t.constant(w), t.constant(b));
    auto ref = oracle::conv2d(x, w, b, 1, 1);
    CHECK(max_abs_diff(y.val(), ref) < 1e-10);
}

TEST_CASE("roi_grid3x3 gradients and center sampling") {
    Rng rng(17);
    auto xr = random_tensor<double>(rng, {1, 2, 8, 8});
    Parameter<double> px("x", xr);

    auto loss_fn = [&](bool bk) {
        Tape<double> t;
        auto r = roi_grid3x3(t.param(px), 1.25, 2.0, 6.5, 7.25);
        auto loss = sum_all(mul(r, r));
        if (bk) t.backward(loss);
        return loss.val()[0];
    };
    auto rep = grad_check({&px}, [&] { return loss_fn(false); }, [&] { loss_fn(true); }, 1e-6);
    CHECK(rep.max_rel_err < 1e-3);

    // integer-aligned 3x3 box: grid centers land exactly on pixels
    Tape<double> t;
    auto r = roi_grid3x3(t.constant(xr), 2.5, 3.5, 5.5, 6.5);
    for (int c = 0; c < 2; ++c)
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                CHECK(r.val().at(0, c, i, j) == doctest::Approx(xr.at(0, c, 4 + i, 3 + j)));
}

TEST_CASE("spatial softmax weights have unit mean per channel") {
    Rng rng(9);
    auto x = random_tensor<double>(rng, {2, 3, 6, 5}, -3.0, 3.0);
    Tape<double> t;
    auto y = spatial_softmax_scaled(t.constant(x));
    for (int n = 0; n < 2; ++n)
        for (int c = 0; c < 3; ++c) {
            double s = 0;
            for (int h = 0; h < 6; ++h)
                for (int w = 0; w < 5; ++w) s += y.val().at(n, c, h, w);
            CHECK(s == doctest::Approx(30.0).epsilon(1e-10));
        }
    // uniform logits -> all-ones weights
    Tape<double> t2;
    auto u = spatial_softmax_scaled(t2.constant(Tensor<double>::full({1, 1, 4, 4}, 0.37)));
    CHECK(u.val().max_abs() == doctest::Approx(1.0));
    CHECK(max_abs_diff(u.val(), Tensor<double>::full({1, 1, 4, 4}, 1.0)) < 1e-12);
}
