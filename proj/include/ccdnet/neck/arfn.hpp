#pragma once

#include <algorithm>
#include <string>

#include "ccdnet/backbone/wmp.hpp"
#include "ccdnet/core/image_ops.hpp"
#include "ccdnet/nn/modules.hpp"

namespace ccdnet {

/// Squeeze-excitation channel refinement: global pooled descriptors pass a
/// two-layer bottleneck and gate every channel with a sigmoid in (0,1).
template <typename T>
struct ChannelRefine {
    Dense<T> fc1, fc2;

    ChannelRefine() = default;
    ChannelRefine(const std::string& name, int ch, Rng& rng, int reduction = 8) {
        const int hidden = std::max(4, ch / reduction);
        fc1 = Dense<T>(name + ".fc1", ch, hidden, rng);
        fc2 = Dense<T>(name + ".fc2", hidden, ch, rng);
    }

    Var<T> operator()(Tape<T>& t, Var<T> x) {
        auto g = global_avg_pool(x);
        g = relu(fc1(t, g));
        g = sigmoid(fc2(t, g));
        return channel_scale(x, g);
    }

    void collect(ParamList<T>& out) {
        fc1.collect(out);
        fc2.collect(out);
    }
};

/// Dynamic spatial refinement: deformable 3x3 (or a dilated 3x3 stand-in),
/// a 1x1 feed-forward pair, then a spatial softmax rescaled to unit mean that
/// gates the input map.
template <typename T>
struct DynamicSpatialRefine {
    Conv2d<T> offset_conv;  // 3x3 -> 18 offsets + 9 mask logits
    Parameter<T> dw, db;    // deformable kernel
    Conv2d<T> dilated;      // substitution path
    Conv2d<T> ffn1, ffn2;
    bool use_deform = true;

    DynamicSpatialRefine() = default;
    DynamicSpatialRefine(const std::string& name, int ch, Rng& rng, bool deform = true)
        : use_deform(deform) {
        offset_conv = Conv2d<T>(name + ".offset", ch, 27, 3, 1, 1, true, rng);
        // zero-start offsets: the deformable kernel begins as a plain 3x3 grid
        offset_conv.w.value.fill(T(0));
        Tensor<T> kw({ch, ch, 3, 3});
        rng.fill_normal(kw, 0.0, std::sqrt(2.0 / (9.0 * ch)));
        dw = Parameter<T>(name + ".deform.w", std::move(kw));
        db = Parameter<T>(name + ".deform.b", Tensor<T>({ch}));
        dilated = Conv2d<T>(name + ".dilated", ch, ch, 3, 1, 2, true, rng, 2);
        ffn1 = Conv2d<T>(name + ".ffn1", ch, ch, 1, 1, 0, true, rng);
        ffn2 = Conv2d<T>(name + ".ffn2", ch, ch, 1, 1, 0, true, rng);
    }

    /// The unit-mean spatial gate before it multiplies the input.
    Var<T> weight_map(Tape<T>& t, Var<T> x) {
        Var<T> feat;
        if (use_deform) {
            auto om = offset_conv(t, x);
            auto off = slice_channels(om, 0, 18);
            auto msk = sigmoid(slice_channels(om, 18, 9));
            feat = deform_conv3x3(x, off, msk, t.param(dw), t.param(db));
        } else {
            feat = dilated(t, x);
        }
        auto logits = ffn2(t, relu(ffn1(t, feat)));
        return spatial_softmax_scaled(logits);
    }

    Var<T> operator()(Tape<T>& t, Var<T> x) { return mul(weight_map(t, x), x); }

    void collect(ParamList<T>& out) {
        if (use_deform) {
            offset_conv.collect(out);
            out.push_back(&dw);
            out.push_back(&db);
        } else {
            dilated.collect(out);
        }
        ffn1.collect(out);
        ffn2.collect(out);
    }
};

struct NeckGeometry {
    std::array<int, 4> channels;  // per-level channel counts (F1..F4)
};

/// Aggregation-and-Refinement Fusion Neck. TBSG subtracts upsampled deep
/// background semantics from the shallow maps; BOSE gates the deep maps with
/// a spatially refined shallow structure map. Both read the original pyramid.
template <typename T>
class ArfnNeck {
public:
    ArfnNeck() = default;

    ArfnNeck(const NeckGeometry& geo, Rng& rng, bool use_deform = true,
             Resample up_mode = Resample::bilinear)
        : geo_(geo), up_mode_(up_mode) {
        const int cat_ch = geo.channels[2] + geo.channels[3];
        cr_ = ChannelRefine<T>("neck.cr", cat_ch, rng);
        // background projections ahead of the upsample; bias-free so a zero
        // background map passes straight through as zero
        proj2_ = Conv2d<T>("neck.tbsg.proj2", cat_ch, geo.channels[1], 1, 1, 0, false, rng);
        proj1_ = Conv2d<T>("neck.tbsg.proj1", cat_ch, geo.channels[0], 1, 1, 0, false, rng);

        down12_ = Conv2d<T>("neck.bose.down12", geo.channels[0], geo.channels[1], 3, 2, 1, true, rng);
        dsr_ = DynamicSpatialRefine<T>("neck.bose.dsr", geo.channels[1], rng, use_deform);
        down23_ = Conv2d<T>("neck.bose.down23", geo.channels[1], geo.channels[2], 3, 2, 1, true, rng);
        down24a_ = Conv2d<T>("neck.bose.down24a", geo.channels[1], geo.channels[1], 3, 2, 1, true, rng);
        down24b_ = Conv2d<T>("neck.bose.down24b", geo.channels[1], geo.channels[3], 3, 2, 1, true, rng);
    }

    /// Background semantics map shared by both TBSG outputs.
    Var<T> background(Tape<T>& t, const Pyramid<T>& p) {
        auto up4 = upsample(p.f[3], 2, up_mode_);
        return cr_(t, concat_channels(p.f[2], up4));
    }

    std::pair<Var<T>, Var<T>> tbsg(Tape<T>& t, const Pyramid<T>& p) {
        check_pyramid(p);
        auto bkg = background(t, p);
        auto out2 = sub(p.f[1], upsample(proj2_(t, bkg), 2, up_mode_));
        auto out1 = sub(p.f[0], upsample(proj1_(t, bkg), 4, up_mode_));
        return {out1, out2};
    }

    /// Spatially refined target-structure map shared by both BOSE outputs.
    Var<T> target_map(Tape<T>& t, const Pyramid<T>& p) {
        auto summed = add(p.f[1], down12_(t, p.f[0]));
        return dsr_(t, summed);
    }

    std::pair<Var<T>, Var<T>> bose(Tape<T>& t, const Pyramid<T>& p) {
        check_pyramid(p);
        auto tgt = target_map(t, p);
        auto out3 = mul(p.f[2], down23_(t, tgt));
        auto out4 = mul(p.f[3], down24b_(t, down24a_(t, tgt)));
        return {out3, out4};
    }

    Pyramid<T> forward(Tape<T>& t, const Pyramid<T>& p) {
        auto [o1, o2] = tbsg(t, p);
        auto [o3, o4] = bose(t, p);
        Pyramid<T> out;
        out.f = {o1, o2, o3, o4};
        return out;
    }

    void collect(ParamList<T>& out) {
        cr_.collect(out);
        proj2_.collect(out);
        proj1_.collect(out);
        down12_.collect(out);
        dsr_.collect(out);
        down23_.collect(out);
        down24a_.collect(out);
        down24b_.collect(out);
    }

    DynamicSpatialRefine<T>& dsr() { return dsr_; }
    ChannelRefine<T>& cr() { return cr_; }
    Conv2d<T>& proj1() { return proj1_; }
    Conv2d<T>& proj2() { return proj2_; }
    Conv2d<T>& down12() { return down12_; }
    Conv2d<T>& down23() { return down23_; }
    Conv2d<T>& down24a() { return down24a_; }
    Conv2d<T>& down24b() { return down24b_; }

    std::int64_t macs(std::array<std::pair<int, int>, 4> sizes) const {
        // sizes: per-level (H, W)
        std::int64_t m = 0;
        m += proj2_.macs(sizes[2].first, sizes[2].second);
        m += proj1_.macs(sizes[2].first, sizes[2].second);
        m += down12_.macs(sizes[1].first, sizes[1].second);
        m += dsr_.offset_conv.macs(sizes[1].first, sizes[1].second);
        m += static_cast<std::int64_t>(dsr_.dw.value.numel()) * sizes[1].first * sizes[1].second;
        m += dsr_.ffn1.macs(sizes[1].first, sizes[1].second);
        m += dsr_.ffn2.macs(sizes[1].first, sizes[1].second);
        m += down23_.macs(sizes[2].first, sizes[2].second);
        m += down24a_.macs(sizes[2].first, sizes[2].second);
        m += down24b_.macs(sizes[3].first, sizes[3].second);
        return m;
    }

private:
    void check_pyramid(const Pyramid<T>& p) const {
        for (int i = 0; i < 4; ++i) {
            if (!p.f[i].defined()) throw ShapeError("neck: missing pyramid level");
            if (p.f[i].val().dim(1) != geo_.channels[i])
                throw ShapeError("neck: level " + std::to_string(i + 1) + " has " +
                                 std::to_string(p.f[i].val().dim(1)) + " channels, expected " +
                                 std::to_string(geo_.channels[i]));
        }
        for (int i = 0; i < 3; ++i) {
            if (p.f[i].val().dim(2) != 2 * p.f[i + 1].val().dim(2) ||
                p.f[i].val().dim(3) != 2 * p.f[i + 1].val().dim(3))
                throw ShapeError("neck: pyramid levels are not 2x-spaced");
        }
    }

    NeckGeometry geo_;
    Resample up_mode_ = Resample::bilinear;
    ChannelRefine<T> cr_;
    Conv2d<T> proj2_, proj1_;
    Conv2d<T> down12_;
    DynamicSpatialRefine<T> dsr_;
    Conv2d<T> down23_, down24a_, down24b_;
};

}  // namespace ccdnet
