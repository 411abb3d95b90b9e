#pragma once

#include <array>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ccdnet/nn/modules.hpp"

namespace ccdnet {

// ---------------------------------------------------------------------------
// Kernel fusion algebra
// ---------------------------------------------------------------------------

/// Accumulated batch-norm statistics plus the learned affine pair.
template <typename T>
struct BnStats {
    Tensor<T> mean, sigma, gamma, beta;  // sigma is the standard deviation

    void validate(int out_ch) const {
        if (mean.numel() != out_ch || sigma.numel() != out_ch || gamma.numel() != out_ch ||
            beta.numel() != out_ch)
            throw ShapeError("BnStats: channel length mismatch");
        for (std::int64_t i = 0; i < sigma.numel(); ++i)
            if (!(sigma[i] > static_cast<T>(kBnEps)))
                throw InvalidBnError("BnStats: sigma <= eps at channel " + std::to_string(i));
    }
};

/// Absorb a batch norm into the preceding (bias-free) convolution:
/// Conv(x; k') + b' == BN(Conv(x; k)).
template <typename T>
inline std::pair<Tensor<T>, Tensor<T>> fold_conv_bn(const Tensor<T>& kernel,
                                                    const BnStats<T>& bn) {
    const int oc = kernel.dim(0);
    bn.validate(oc);
    Tensor<T> k = kernel;
    Tensor<T> b({oc});
    const std::int64_t per_oc = kernel.numel() / oc;
    for (int c = 0; c < oc; ++c) {
        const T s = bn.gamma[c] / bn.sigma[c];
        T* row = k.data() + static_cast<std::int64_t>(c) * per_oc;
        for (std::int64_t i = 0; i < per_oc; ++i) row[i] *= s;
        b[c] = bn.beta[c] - bn.gamma[c] * bn.mean[c] / bn.sigma[c];
    }
    return {std::move(k), std::move(b)};
}

/// Fold the branch conditioning scalar into kernel and bias:
/// Conv(x; p*k) + p*b == p * (Conv(x; k) + b) at every spatial location.
template <typename T>
inline std::pair<Tensor<T>, Tensor<T>> fuse_branch_scalar(const Tensor<T>& kernel,
                                                          const Tensor<T>& bias, T p) {
    if (!std::isfinite(static_cast<double>(p)))
        throw InvalidParamError("fuse_branch_scalar: non-finite conditioning scalar");
    Tensor<T> k = kernel;
    Tensor<T> b = bias;
    for (std::int64_t i = 0; i < k.numel(); ++i) k[i] *= p;
    for (std::int64_t i = 0; i < b.numel(); ++i) b[i] *= p;
    return {std::move(k), std::move(b)};
}

/// Zero-pad a 1x1 kernel into the center of a 3x3 kernel; 3x3 passes through.
template <typename T>
inline Tensor<T> pad_to_3x3(const Tensor<T>& kernel) {
    if (kernel.dim(2) == 3 && kernel.dim(3) == 3) return kernel;
    if (kernel.dim(2) != 1 || kernel.dim(3) != 1)
        throw ShapeError("pad_to_3x3: kernel must be 1x1 or 3x3");
    const int oc = kernel.dim(0), ic = kernel.dim(1);
    Tensor<T> out({oc, ic, 3, 3});
    for (int o = 0; o < oc; ++o)
        for (int i = 0; i < ic; ++i) out.at(o, i, 1, 1) = kernel.at(o, i, 0, 0);
    return out;
}

/// Per-channel delta kernel: the 3x3 form of an identity branch.
template <typename T>
inline Tensor<T> identity_kernel3x3(int in_ch, int out_ch) {
    if (in_ch != out_ch)
        throw InvalidParamError("identity branch requires in_ch == out_ch");
    Tensor<T> k({out_ch, in_ch, 3, 3});
    for (int c = 0; c < out_ch; ++c) k.at(c, c, 1, 1) = T(1);
    return k;
}

/// Sum already 3x3-aligned branch kernels and biases into one kernel.
template <typename T>
inline std::pair<Tensor<T>, Tensor<T>> merge_branches(
    const std::vector<std::pair<Tensor<T>, Tensor<T>>>& branches) {
    if (branches.empty()) throw InvalidParamError("merge_branches: no branches");
    Tensor<T> k = branches[0].first;
    Tensor<T> b = branches[0].second;
    for (std::size_t i = 1; i < branches.size(); ++i) {
        if (!branches[i].first.same_shape(k) || !branches[i].second.same_shape(b))
            throw ShapeError("merge_branches: branch shape mismatch");
        accumulate_into(k, branches[i].first);
        accumulate_into(b, branches[i].second);
    }
    return {std::move(k), std::move(b)};
}

// ---------------------------------------------------------------------------
// WMP block
// ---------------------------------------------------------------------------

enum class BranchKind { conv3x3, conv1x1, identity };

/// One branch: (conv | identity) -> BN, output conditioned by a learnable
/// scalar p.
template <typename T>
struct WmpBranch {
    BranchKind kind;
    Conv2d<T> conv;  // unused for identity
    BatchNorm2d<T> bn;
    Parameter<T> p;

    BnStats<T> bn_stats() const {
        return BnStats<T>{bn.run_mean, bn.sigma(), bn.gamma.value, bn.beta.value};
    }
};

/// Three-branch perceptron block with self-conditioned fusion. Train-time
/// structure is the branch sum; fuse() folds everything into one 3x3 kernel.
template <typename T>
class WmpBlock {
public:
    WmpBlock() = default;

    WmpBlock(const std::string& name, int in_ch, int out_ch, int stride, Rng& rng)
        : name_(name), in_ch_(in_ch), out_ch_(out_ch), stride_(stride) {
        const bool can_identity = (stride == 1 && in_ch == out_ch);
        make_branch(0, BranchKind::conv3x3, rng);
        make_branch(1, BranchKind::conv1x1, rng);
        make_branch(2, can_identity ? BranchKind::identity : BranchKind::conv1x1, rng);
    }

    int in_channels() const { return in_ch_; }
    int out_channels() const { return out_ch_; }
    int stride() const { return stride_; }
    const std::string& name() const { return name_; }
    std::array<WmpBranch<T>, 3>& branches() { return branches_; }

    /// Branch-sum forward. batch_stats selects live batch statistics (training
    /// steps) vs the stored running statistics (pure evaluation, what fusion
    /// reproduces).
    Var<T> forward(Tape<T>& t, Var<T> x, bool batch_stats, bool activation = true) {
        if (x.val().dim(1) != in_ch_)
            throw ShapeError(name_ + ": input has " + std::to_string(x.val().dim(1)) +
                             " channels, expected " + std::to_string(in_ch_));
        Var<T> acc;
        for (auto& br : branches_) {
            Var<T> h;
            switch (br.kind) {
                case BranchKind::conv3x3:
                case BranchKind::conv1x1:
                    h = br.conv(t, x);
                    break;
                case BranchKind::identity:
                    h = x;
                    break;
            }
            h = br.bn(t, h, batch_stats);
            h = scale_by(h, t.param(br.p));
            acc = acc.defined() ? add(acc, h) : h;
        }
        return activation ? relu(acc) : acc;
    }

    /// Single-conv forward; requires fuse() first.
    Var<T> forward_fused(Tape<T>& t, Var<T> x, bool activation = true) const {
        if (!fused_) throw InvalidParamError(name_ + ": block not fused");
        auto y = conv2d(x, t.constant(fused_w_), t.constant(fused_b_), stride_, 1);
        return activation ? relu(y) : y;
    }

    bool fused() const { return fused_; }
    const Tensor<T>& fused_kernel() const { return fused_w_; }
    const Tensor<T>& fused_bias() const { return fused_b_; }

    /// Fold conv+BN per branch, pad to 3x3, absorb the conditioning scalar,
    /// and merge the three kernels.
    void fuse() {
        try {
            fuse_impl();
        } catch (const InvalidBnError& e) {
            throw InvalidBnError(name_ + ": " + e.what());
        } catch (const InvalidParamError& e) {
            throw InvalidParamError(name_ + ": " + e.what());
        }
    }

private:
    void fuse_impl() {
        std::vector<std::pair<Tensor<T>, Tensor<T>>> parts;
        for (auto& br : branches_) {
            Tensor<T> k3;
            switch (br.kind) {
                case BranchKind::conv3x3: k3 = br.conv.w.value; break;
                case BranchKind::conv1x1: k3 = pad_to_3x3(br.conv.w.value); break;
                case BranchKind::identity: k3 = identity_kernel3x3<T>(in_ch_, out_ch_); break;
            }
            BnStats<T> stats = br.bn_stats();
            auto [fk, fb] = fold_conv_bn(k3, stats);
            parts.push_back(fuse_branch_scalar(fk, fb, br.p.value[0]));
        }
        auto [w, b] = merge_branches(parts);
        fused_w_ = std::move(w);
        fused_b_ = std::move(b);
        fused_ = true;
    }

public:
    void collect(ParamList<T>& out) {
        for (auto& br : branches_) {
            if (br.kind != BranchKind::identity) br.conv.collect(out);
            br.bn.collect(out);
            out.push_back(&br.p);
        }
    }

    /// Buffers that belong in a checkpoint but receive no gradients.
    std::vector<std::pair<std::string, Tensor<T>*>> buffers() {
        std::vector<std::pair<std::string, Tensor<T>*>> out;
        for (int i = 0; i < 3; ++i) {
            out.emplace_back(name_ + ".b" + std::to_string(i) + ".bn.run_mean",
                             &branches_[i].bn.run_mean);
            out.emplace_back(name_ + ".b" + std::to_string(i) + ".bn.run_var",
                             &branches_[i].bn.run_var);
        }
        if (fused_) {
            out.emplace_back(name_ + ".fused.w", &fused_w_);
            out.emplace_back(name_ + ".fused.b", &fused_b_);
        }
        return out;
    }

    void set_fused(Tensor<T> w, Tensor<T> b) {
        fused_w_ = std::move(w);
        fused_b_ = std::move(b);
        fused_ = true;
    }

    std::int64_t macs(int out_h, int out_w, bool fused_mode) const {
        const std::int64_t site = static_cast<std::int64_t>(out_h) * out_w;
        if (fused_mode) return static_cast<std::int64_t>(out_ch_) * in_ch_ * 9 * site;
        std::int64_t m = 0;
        for (const auto& br : branches_) {
            if (br.kind == BranchKind::conv3x3) m += static_cast<std::int64_t>(out_ch_) * in_ch_ * 9 * site;
            if (br.kind == BranchKind::conv1x1) m += static_cast<std::int64_t>(out_ch_) * in_ch_ * site;
        }
        return m;
    }

    std::int64_t learnable_count(bool fused_mode) const {
        if (fused_mode)
            return static_cast<std::int64_t>(out_ch_) * in_ch_ * 9 + out_ch_;
        std::int64_t n = 0;
        for (const auto& br : branches_) {
            if (br.kind != BranchKind::identity) n += br.conv.w.value.numel();
            n += 2 * out_ch_ + 1;  // gamma, beta, p
        }
        return n;
    }

private:
    void make_branch(int i, BranchKind kind, Rng& rng) {
        auto& br = branches_[i];
        br.kind = kind;
        const std::string bn = name_ + ".b" + std::to_string(i);
        if (kind == BranchKind::conv3x3)
            br.conv = Conv2d<T>(bn + ".conv", in_ch_, out_ch_, 3, stride_, 1, false, rng);
        else if (kind == BranchKind::conv1x1)
            br.conv = Conv2d<T>(bn + ".conv", in_ch_, out_ch_, 1, stride_, 0, false, rng);
        br.bn = BatchNorm2d<T>(bn + ".bn", out_ch_);
        br.p = Parameter<T>(bn + ".p", Tensor<T>::full({1}, T(1)));
    }

    std::string name_;
    int in_ch_ = 0, out_ch_ = 0, stride_ = 1;
    std::array<WmpBranch<T>, 3> branches_;
    bool fused_ = false;
    Tensor<T> fused_w_, fused_b_;
};

// ---------------------------------------------------------------------------
// Backbone
// ---------------------------------------------------------------------------

struct BackboneConfig {
    std::array<int, 4> stage_depths{1, 2, 2, 1};
    std::array<int, 4> stage_channels{16, 32, 64, 128};
    int stem_stride = 2;
    int in_channels = 1;

    int stride_of_level(int level_1based) const { return stem_stride << (level_1based - 1); }
};

template <typename T>
struct Pyramid {
    std::array<Var<T>, 4> f;  // F1..F4 at indexes 0..3
};

/// Four stages of WMP blocks after a stride-2 WMP stem. Consecutive stages
/// halve the spatial dims.
template <typename T>
class WmpBackbone {
public:
    WmpBackbone() = default;

    WmpBackbone(const BackboneConfig& cfg, Rng& rng) : cfg_(cfg) {
        stem_ = WmpBlock<T>("backbone.stem", cfg.in_channels, cfg.stage_channels[0],
                            cfg.stem_stride, rng);
        for (int s = 0; s < 4; ++s) {
            const int in_ch = (s == 0) ? cfg.stage_channels[0] : cfg.stage_channels[s - 1];
            std::vector<WmpBlock<T>> stage;
            for (int d = 0; d < cfg.stage_depths[s]; ++d) {
                const bool down = (s > 0 && d == 0);
                const int bi = (d == 0) ? in_ch : cfg.stage_channels[s];
                stage.emplace_back(
                    "backbone.s" + std::to_string(s + 1) + ".b" + std::to_string(d), bi,
                    cfg.stage_channels[s], down ? 2 : 1, rng);
            }
            stages_[s] = std::move(stage);
        }
    }

    const BackboneConfig& config() const { return cfg_; }

    /// Runs stem + 4 stages. fused_mode requires fuse() first.
    Pyramid<T> forward(Tape<T>& t, Var<T> x, bool fused_mode, bool batch_stats = false) {
        const int H = x.val().dim(2), W = x.val().dim(3);
        const int div = 8 * cfg_.stem_stride;
        if (H % div != 0 || W % div != 0)
            throw ShapeError("backbone: input " + std::to_string(H) + "x" + std::to_string(W) +
                             " not divisible by " + std::to_string(div));
        auto run = [&](WmpBlock<T>& blk, Var<T> in) {
            return fused_mode ? blk.forward_fused(t, in) : blk.forward(t, in, batch_stats);
        };
        Var<T> h = run(stem_, x);
        Pyramid<T> p;
        for (int s = 0; s < 4; ++s) {
            for (auto& blk : stages_[s]) h = run(blk, h);
            p.f[s] = h;
        }
        return p;
    }

    void fuse() {
        for_each_block([](WmpBlock<T>& b) { b.fuse(); });
        fused_ = true;
    }

    bool fused() const { return fused_; }
    void mark_fused(bool f) { fused_ = f; }

    template <typename Fn>
    void for_each_block(Fn&& fn) {
        fn(stem_);
        for (auto& st : stages_)
            for (auto& b : st) fn(b);
    }

    void collect(ParamList<T>& out) {
        for_each_block([&](WmpBlock<T>& b) { b.collect(out); });
    }

    std::vector<std::pair<std::string, Tensor<T>*>> buffers() {
        std::vector<std::pair<std::string, Tensor<T>*>> out;
        for_each_block([&](WmpBlock<T>& b) {
            auto bs = b.buffers();
            out.insert(out.end(), bs.begin(), bs.end());
        });
        return out;
    }

    std::int64_t macs(int in_h, int in_w, bool fused_mode) const {
        std::int64_t total = 0;
        int h = in_h / cfg_.stem_stride, w = in_w / cfg_.stem_stride;
        total += stem_.macs(h, w, fused_mode);
        for (int s = 0; s < 4; ++s) {
            if (s > 0) { h /= 2; w /= 2; }
            for (const auto& b : stages_[s]) total += b.macs(h, w, fused_mode);
        }
        return total;
    }

    std::int64_t learnable_count(bool fused_mode) const {
        std::int64_t n = stem_.learnable_count(fused_mode);
        for (const auto& st : stages_)
            for (const auto& b : st) n += b.learnable_count(fused_mode);
        return n;
    }

private:
    BackboneConfig cfg_;
    WmpBlock<T> stem_;
    std::array<std::vector<WmpBlock<T>>, 4> stages_;
    bool fused_ = false;
};

}  // namespace ccdnet
