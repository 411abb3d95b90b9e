#pragma once

#ifdef _OPENMP
#include <omp.h>
#endif

#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "ccdnet/core/conv_kernels.hpp"
#include "ccdnet/core/errors.hpp"
#include "ccdnet/core/tensor.hpp"

namespace ccdnet {

/// Learnable tensor with an accumulated gradient buffer.
template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;

    Parameter() = default;
    Parameter(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)) {
        grad = Tensor<T>::zeros(value.shape());
    }
    void zero_grad() { grad.fill(T(0)); }
};

template <typename T>
class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
template <typename T>
struct Var {
    Tape<T>* tape = nullptr;
    int id = -1;
    bool defined() const { return tape != nullptr && id >= 0; }
    const Tensor<T>& val() const;
};

/// Reverse-mode tape. Build a graph per forward pass, call backward() on a
/// scalar node, read gradients off Parameters afterwards.
template <typename T>
class Tape {
public:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;  // allocated on demand during backward
        bool needs_grad = false;
        std::function<void(Tape&, Node&)> backprop;
    };

    Var<T> constant(Tensor<T> v) {
        nodes_.push_back(Node{std::move(v), {}, false, nullptr});
        return {this, static_cast<int>(nodes_.size()) - 1};
    }

    Var<T> scalar_const(T v) { return constant(Tensor<T>::scalar(v)); }

    Var<T> param(Parameter<T>& p) {
        Parameter<T>* pp = &p;
        nodes_.push_back(Node{p.value, {}, true, [pp](Tape&, Node& self) {
                                   accumulate_into(pp->grad, self.grad);
                               }});
        return {this, static_cast<int>(nodes_.size()) - 1};
    }

    Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }
    const Tensor<T>& value(Var<T> v) const { return nodes_[static_cast<std::size_t>(v.id)].value; }

    Tensor<T>& ensure_grad(int id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (n.grad.empty()) n.grad = Tensor<T>::zeros(n.value.shape());
        return n.grad;
    }

    bool wants(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }

    Var<T> make(Tensor<T> value, std::vector<int> parents,
                std::function<void(Tape&, Node&)> backprop) {
        bool ng = false;
        for (int p : parents) ng = ng || wants(p);
        nodes_.push_back(Node{std::move(value), {}, ng, ng ? std::move(backprop) : nullptr});
        return {this, static_cast<int>(nodes_.size()) - 1};
    }

    /// Backprop from a scalar root. Only ancestors of the root receive grads.
    void backward(Var<T> root) {
        if (root.tape != this) throw std::logic_error("backward: foreign var");
        Node& r = nodes_[static_cast<std::size_t>(root.id)];
        if (r.value.numel() != 1) throw std::logic_error("backward: root must be scalar");
        ensure_grad(root.id).fill(T(1));
        for (int i = root.id; i >= 0; --i) {
            Node& n = nodes_[static_cast<std::size_t>(i)];
            if (!n.grad.empty() && n.backprop) n.backprop(*this, n);
        }
    }

    const Tensor<T>& grad(Var<T> v) { return ensure_grad(v.id); }

    std::size_t size() const { return nodes_.size(); }

private:
    std::vector<Node> nodes_;
};

template <typename T>
inline const Tensor<T>& Var<T>::val() const {
    return tape->value(*this);
}

namespace detail {
template <typename T>
inline void check_same_tape(Var<T> a, Var<T> b, const char* op) {
    if (a.tape != b.tape) throw std::logic_error(std::string(op) + ": vars from different tapes");
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

template <typename T>
inline Var<T> add(Var<T> a, Var<T> b) {
    detail::check_same_tape(a, b, "add");
    Tape<T>& t = *a.tape;
    const Tensor<T>&va = t.value(a), &vb = t.value(b);
    if (!va.same_shape(vb)) throw ShapeError("add: shape mismatch " + va.shape_str() + " vs " + vb.shape_str());
    Tensor<T> out = va;
    accumulate_into(out, vb);
    const int ai = a.id, bi = b.id;
    return t.make(std::move(out), {ai, bi}, [ai, bi](Tape<T>& t, auto& self) {
        if (t.wants(ai)) accumulate_into(t.ensure_grad(ai), self.grad);
        if (t.wants(bi)) accumulate_into(t.ensure_grad(bi), self.grad);
    });
}

template <typename T>
inline Var<T> sub(Var<T> a, Var<T> b) {
    detail::check_same_tape(a, b, "sub");
    Tape<T>& t = *a.tape;
    const Tensor<T>&va = t.value(a), &vb = t.value(b);
    if (!va.same_shape(vb)) throw ShapeError("sub: shape mismatch " + va.shape_str() + " vs " + vb.shape_str());
    Tensor<T> out = va;
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] -= vb[i];
    const int ai = a.id, bi = b.id;
    return t.make(std::move(out), {ai, bi}, [ai, bi](Tape<T>& t, auto& self) {
        if (t.wants(ai)) accumulate_into(t.ensure_grad(ai), self.grad);
        if (t.wants(bi)) {
            Tensor<T>& g = t.ensure_grad(bi);
            for (std::int64_t i = 0; i < g.numel(); ++i) g[i] -= self.grad[i];
        }
    });
}

template <typename T>
inline Var<T> mul(Var<T> a, Var<T> b) {
    detail::check_same_tape(a, b, "mul");
    Tape<T>& t = *a.tape;
    const Tensor<T>&va = t.value(a), &vb = t.value(b);
    if (!va.same_shape(vb)) throw ShapeError("mul: shape mismatch " + va.shape_str() + " vs " + vb.shape_str());
    Tensor<T> out = va;
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= vb[i];
    const int ai = a.id, bi = b.id;
    return t.make(std::move(out), {ai, bi}, [ai, bi](Tape<T>& t, auto& self) {
        const Tensor<T>&va = t.node(ai).value, &vb = t.node(bi).value;
        if (t.wants(ai)) {
            Tensor<T>& g = t.ensure_grad(ai);
            for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * vb[i];
        }
        if (t.wants(bi)) {
            Tensor<T>& g = t.ensure_grad(bi);
            for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * va[i];
        }
    });
}

template <typename T>
inline Var<T> scale(Var<T> a, T s) {
    Tape<T>& t = *a.tape;
    Tensor<T> out = t.value(a);
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= s;
    const int ai = a.id;
    return t.make(std::move(out), {ai}, [ai, s](Tape<T>& t, auto& self) {
        if (!t.wants(ai)) return;
        Tensor<T>& g = t.ensure_grad(ai);
        for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * s;
    });
}

template <typename T>
inline Var<T> add_const(Var<T> a, T c) {
    Tape<T>& t = *a.tape;
    Tensor<T> out = t.value(a);
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += c;
    const int ai = a.id;
    return t.make(std::move(out), {ai}, [ai](Tape<T>& t, auto& self) {
        if (t.wants(ai)) accumulate_into(t.ensure_grad(ai), self.grad);
    });
}

/// Broadcast-multiply a tensor by a 1-element Var.
template <typename T>
inline Var<T> scale_by(Var<T> a, Var<T> s) {
    detail::check_same_tape(a, s, "scale_by");
    Tape<T>& t = *a.tape;
    if (t.value(s).numel() != 1) throw ShapeError("scale_by: scalar var required");
    const T sv = t.value(s)[0];
    Tensor<T> out = t.value(a);
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= sv;
    const int ai = a.id, si = s.id;
    return t.make(std::move(out), {ai, si}, [ai, si, sv](Tape<T>& t, auto& self) {
        if (t.wants(ai)) {
            Tensor<T>& g = t.ensure_grad(ai);
            for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * sv;
        }
        if (t.wants(si)) {
            const Tensor<T>& va = t.node(ai).value;
            T acc = T(0);
            for (std::int64_t i = 0; i < va.numel(); ++i) acc += self.grad[i] * va[i];
            t.ensure_grad(si)[0] += acc;
        }
    });
}

template <typename T, typename FwdFn, typename GradFn>
inline Var<T> unary_elementwise(Var<T> a, FwdFn f, GradFn dfdx_from_xy) {
    Tape<T>& t = *a.tape;
    Tensor<T> out = t.value(a);
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = f(out[i]);
    const int ai = a.id;
    return t.make(std::move(out), {ai}, [ai, dfdx_from_xy](Tape<T>& t, auto& self) {
        if (!t.wants(ai)) return;
        Tensor<T>& g = t.ensure_grad(ai);
        const Tensor<T>& x = t.node(ai).value;
        for (std::int64_t i = 0; i < g.numel(); ++i)
            g[i] += self.grad[i] * dfdx_from_xy(x[i], self.value[i]);
    });
}

template <typename T>
inline Var<T> relu(Var<T> a) {
    return unary_elementwise(
        a, [](T x) { return x > T(0) ? x : T(0); },
        [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
inline Var<T> sigmoid(Var<T> a) {
    return unary_elementwise(
        a, [](T x) { return T(1) / (T(1) + std::exp(-x)); },
        [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
inline Var<T> vexp(Var<T> a) {
    return unary_elementwise(a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
inline Var<T> vlog(Var<T> a) {
    return unary_elementwise(
        a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
inline Var<T> vsqrt(Var<T> a) {
    return unary_elementwise(
        a, [](T x) { return std::sqrt(x); },
        [](T, T y) { return y > T(0) ? T(1) / (T(2) * y) : T(0); });
}

/// min(x, cap) elementwise; keeps exp() finite on unbounded logits.
template <typename T>
inline Var<T> clamp_max(Var<T> a, T cap) {
    return unary_elementwise(
        a, [cap](T x) { return x < cap ? x : cap; },
        [cap](T x, T) { return x < cap ? T(1) : T(0); });
}

template <typename T>
inline Var<T> vabs(Var<T> a) {
    return unary_elementwise(
        a, [](T x) { return std::abs(x); },
        [](T x, T) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename T>
inline Var<T> sum_all(Var<T> a) {
    Tape<T>& t = *a.tape;
    const Tensor<T>& v = t.value(a);
    T s = T(0);
    for (std::int64_t i = 0; i < v.numel(); ++i) s += v[i];
    const int ai = a.id;
    return t.make(Tensor<T>::scalar(s), {ai}, [ai](Tape<T>& t, auto& self) {
        if (!t.wants(ai)) return;
        Tensor<T>& g = t.ensure_grad(ai);
        const T gv = self.grad[0];
        for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += gv;
    });
}

template <typename T>
inline Var<T> mean_all(Var<T> a) {
    const std::int64_t n = a.val().numel();
    return scale(sum_all(a), T(1) / static_cast<T>(n));
}

/// (N,C,H,W) -> (N,1,H,W), summing over channels.
template <typename T>
inline Var<T> sum_channels(Var<T> a) {
    Tape<T>& t = *a.tape;
    const Tensor<T>& v = t.value(a);
    if (v.ndim() != 4) throw ShapeError("sum_channels: rank-4 required");
    const int N = v.dim(0), C = v.dim(1), H = v.dim(2), W = v.dim(3);
    Tensor<T> out({N, 1, H, W});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const T* src = v.data() + v.idx4(n, c, 0, 0);
            T* dst = out.data() + out.idx4(n, 0, 0, 0);
            for (int i = 0; i < H * W; ++i) dst[i] += src[i];
        }
    const int ai = a.id;
    return t.make(std::move(out), {ai}, [ai, C](Tape<T>& t, auto& self) {
        if (!t.wants(ai)) return;
        Tensor<T>& g = t.ensure_grad(ai);
        const int N = g.dim(0), H = g.dim(2), W = g.dim(3);
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                T* dst = g.data() + g.idx4(n, c, 0, 0);
                const T* src = self.grad.data() + self.grad.idx4(n, 0, 0, 0);
                for (int i = 0; i < H * W; ++i) dst[i] += src[i];
            }
    });
}

template <typename T>
inline Var<T> max_all(Var<T> a) {
    Tape<T>& t = *a.tape;
    const Tensor<T>& v = t.value(a);
    std::int64_t arg = 0;
    for (std::int64_t i = 1; i < v.numel(); ++i)
        if (v[i] > v[arg]) arg = i;
    const int ai = a.id;
    return t.make(Tensor<T>::scalar(v[arg]), {ai}, [ai, arg](Tape<T>& t, auto& self) {
        if (t.wants(ai)) t.ensure_grad(ai)[arg] += self.grad[0];
    });
}

template <typename T>
inline Var<T> min_all(Var<T> a) {
    Tape<T>& t = *a.tape;
    const Tensor<T>& v = t.value(a);
    std::int64_t arg = 0;
    for (std::int64_t i = 1; i < v.numel(); ++i)
        if (v[i] < v[arg]) arg = i;
    const int ai = a.id;
    return t.make(Tensor<T>::scalar(v[arg]), {ai}, [ai, arg](Tape<T>& t, auto& self) {
        if (t.wants(ai)) t.ensure_grad(ai)[arg] += self.grad[0];
    });
}

/// max of two scalars (ties route to the first argument).
template <typename T>
inline Var<T> vmax(Var<T> a, Var<T> b) {
    detail::check_same_tape(a, b, "vmax");
    Tape<T>& t = *a.tape;
    const T va = t.value(a)[0], vb = t.value(b)[0];
    const bool pick_a = va >= vb;
    const int ai = a.id, bi = b.id;
    return t.make(Tensor<T>::scalar(pick_a ? va : vb), {ai, bi},
                  [ai, bi, pick_a](Tape<T>& t, auto& self) {
                      const int tgt = pick_a ? ai : bi;
                      if (t.wants(tgt)) t.ensure_grad(tgt)[0] += self.grad[0];
                  });
}

template <typename T>
inline Var<T> vmin(Var<T> a, Var<T> b) {
    detail::check_same_tape(a, b, "vmin");
    Tape<T>& t = *a.tape;
    const T va = t.value(a)[0], vb = t.value(b)[0];
    const bool pick_a = va <= vb;
    const int ai = a.id, bi = b.id;
    return t.make(Tensor<T>::scalar(pick_a ? va : vb), {ai, bi},
                  [ai, bi, pick_a](Tape<T>& t, auto& self) {
                      const int tgt = pick_a ? ai : bi;
                      if (t.wants(tgt)) t.ensure_grad(tgt)[0] += self.grad[0];
                  });
}

// ---------------------------------------------------------------------------
// Structure ops
// ---------------------------------------------------------------------------

template <typename T>
inline Var<T> reshape(Var<T> a, std::vector<int> shape) {
    Tape<T>& t = *a.tape;
    Tensor<T> out = t.value(a).reshaped(shape);
    const int ai = a.id;
    return t.make(std::move(out), {ai}, [ai](Tape<T>& t, auto& self) {
        if (!t.wants(ai)) return;
        Tensor<T>& g = t.ensure_grad(ai);
        for (std::int64_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    });
}

template <typename T>
inline Var<T> concat_channels(Var<T> a, Var<T> b) {
    detail::check_same_tape(a, b, "concat_channels");
    Tape<T>& t = *a.tape;
    const Tensor<T>&va = t.value(a), &vb = t.value(b);
    if (va.ndim() != 4 || vb.ndim() != 4 || va.dim(0) != vb.dim(0) || va.dim(2) != vb.dim(2) ||
        va.dim(3) != vb.dim(3))
        throw ShapeError("concat_channels: incompatible shapes " + va.shape_str() + " vs " + vb.shape_str());
    const int N = va.dim(0), Ca = va.dim(1), Cb = vb.dim(1), H = va.dim(2), W = va.dim(3);
    Tensor<T> out({N, Ca + Cb, H, W});
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    for (int n = 0; n < N; ++n) {
        std::copy(va.data() + va.idx4(n, 0, 0, 0), va.data() + va.idx4(n, 0, 0, 0) + Ca * plane,
                  out.data() + out.idx4(n, 0, 0, 0));
        std::copy(vb.data() + vb.idx4(n, 0, 0, 0), vb.data() + vb.idx4(n, 0, 0, 0) + Cb * plane,
                  out.data() + out.idx4(n, Ca, 0, 0));
    }
    const int ai = a.id, bi = b.id;
    return t.make(std::move(out), {ai, bi}, [ai, bi, Ca, Cb, plane](Tape<T>& t, auto& self) {
        const int N = self.grad.dim(0);
        if (t.wants(ai)) {
            Tensor<T>& g = t.ensure_grad(ai);
            for (int n = 0; n < N; ++n) {
                const T* src = self.grad.data() + self.grad.idx4(n, 0, 0, 0);
                T* dst = g.data() + g.idx4(n, 0, 0, 0);
                for (std::size_t i = 0; i < Ca * plane; ++i) dst[i] += src[i];
            }
        }
        if (t.wants(bi)) {
            Tensor<T>& g = t.ensure_grad(bi);
            for (int n = 0; n < N; ++n) {
                const T* src = self.grad.data() + self.grad.idx4(n, Ca, 0, 0);
                T* dst = g.data() + g.idx4(n, 0, 0, 0);
                for (std::size_t i = 0; i < Cb * plane; ++i) dst[i] += src[i];
            }
        }
    });
}

/// Spatial crop: keeps all batch items and channels, window (y0,x0,h,w).
template <typename T>
inline Var<T> crop(Var<T> a, int y0, int x0, int h, int w) {
    Tape<T>& t = *a.tape;
    const Tensor<T>& v = t.value(a);
    if (v.ndim() != 4) throw ShapeError("crop: rank-4 required");
    const int N = v.dim(0), C = v.dim(1), H = v.dim(2), W = v.dim(3);
    if (y0 < 0 || x0 < 0 || y0 + h > H || x0 + w > W) throw ShapeError("crop: window out of bounds");
    Tensor<T> out({N, C, h, w});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < h; ++y)
                std::copy(v.data() + v.idx4(n, c, y0 + y, x0),
                          v.data() + v.idx4(n, c, y0 + y, x0) + w,
                          out.data() + out.idx4(n, c, y, 0));
    const int ai = a.id;
    return t.make(std::move(out), {ai}, [ai, y0, x0, h, w](Tape<T>& t, auto& self) {
        if (!t.wants(ai)) return;
        Tensor<T>& g = t.ensure_grad(ai);
        const int N = g.dim(0), C = g.dim(1);
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c)
                for (int y = 0; y < h; ++y) {
                    const T* src = self.grad.data() + self.grad.idx4(n, c, y, 0);
                    T* dst = g.data() + g.idx4(n, c, y0 + y, x0);
                    for (int x = 0; x < w; ++x) dst[x] += src[x];
                }
    });
}

/// Single-image view (1,C,H,W) of batch element n.
template <typename T>
inline Var<T> slice_image(Var<T> a, int n) {
    Tape<T>& t = *a.tape;
    const Tensor<T>& v = t.value(a);
    if (v.ndim() != 4 || n < 0 || n >= v.dim(0)) throw ShapeError("slice_image: index out of range");
    const int C = v.dim(1), H = v.dim(2), W = v.dim(3);
    const std::size_t sz = static_cast<std::size_t>(C) * H * W;
    Tensor<T> out({1, C, H, W});
    std::copy(v.data() + v.idx4(n, 0, 0, 0), v.data() + v.idx4(n, 0, 0, 0) + sz, out.data());
    const int ai = a.id;
    return t.make(std::move(out), {ai}, [ai, n, sz](Tape<T>& t, auto& self) {
        if (!t.wants(ai)) return;
        Tensor<T>& g = t.ensure_grad(ai);
        T* dst = g.data() + g.idx4(n, 0, 0, 0);
        for (std::size_t i = 0; i < sz; ++i) dst[i] += self.grad[static_cast<std::int64_t>(i)];
    });
}

/// Tile nine equally shaped (N,C,h,w) maps into a (N,C,3h,3w) grid, row-major.
template <typename T>
inline Var<T> assemble_grid3(const std::array<Var<T>, 9>& regions) {
    Tape<T>& t = *regions[0].tape;
    const Tensor<T>& r0 = t.value(regions[0]);
    const int N = r0.dim(0), C = r0.dim(1), h = r0.dim(2), w = r0.dim(3);
    for (const auto& r : regions)
        if (!t.value(r).same_shape(r0)) throw ShapeError("assemble_grid3: region shape mismatch");
    Tensor<T> out({N, C, 3 * h, 3 * w});
    std::vector<int> parents;
    for (int i = 0; i < 9; ++i) {
        const Tensor<T>& v = t.value(regions[i]);
        const int gy = (i / 3) * h, gx = (i % 3) * w;
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c)
                for (int y = 0; y < h; ++y)
                    std::copy(v.data() + v.idx4(n, c, y, 0), v.data() + v.idx4(n, c, y, 0) + w,
                              out.data() + out.idx4(n, c, gy + y, gx));
        parents.push_back(regions[i].id);
    }
    std::array<int, 9> pid{};
    for (int i = 0; i < 9; ++i) pid[i] = regions[i].id;
    return t.make(std::move(out), parents, [pid, h, w](Tape<T>& t, auto& self) {
        for (int i = 0; i < 9; ++i) {
            if (!t.wants(pid[i])) continue;
            Tensor<T>& g = t.ensure_grad(pid[i]);
            const int gy = (i / 3) * h, gx = (i % 3) * w;
            const int N = g.dim(0), C = g.dim(1);
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c)
                    for (int y = 0; y < h; ++y) {
                        const T* src = self.grad.data() + self.grad.idx4(n, c, gy + y, gx);
                        T* dst = g.data() + g.idx4(n, c, y, 0);
                        for (int x = 0; x < w; ++x) dst[x] += src[x];
                    }
        }
    });
}

/// Pack K scalar vars into a (1,K) row vector.
template <typename T>
inline Var<T> stack_scalars(const std::vector<Var<T>>& xs) {
    Tape<T>& t = *xs.at(0).tape;
    const int K = static_cast<int>(xs.size());
    Tensor<T> out({1, K});
    std::vector<int> pid(xs.size());
    std::vector<int> parents;
    for (int i = 0; i < K; ++i) {
        if (t.value(xs[i]).numel() != 1) throw ShapeError("stack_scalars: scalar vars required");
        out[i] = t.value(xs[i])[0];
        pid[i] = xs[i].id;
        parents.push_back(xs[i].id);
    }
    return t.make(std::move(out), parents, [pid](Tape<T>& t, auto& self) {
        for (std::size_t i = 0; i < pid.size(); ++i)
            if (t.wants(pid[i])) t.ensure_grad(pid[i])[0] += self.grad[static_cast<std::int64_t>(i)];
    });
}

/// Extract element k of a (1,K) row as a scalar var.
template <typename T>
inline Var<T> pick(Var<T> a, int k) {
    Tape<T>& t = *a.tape;
    const Tensor<T>& v = t.value(a);
    if (k < 0 || k >= v.numel()) throw ShapeError("pick: index out of range");
    const int ai = a.id;
    return t.make(Tensor<T>::scalar(v[k]), {ai}, [ai, k](Tape<T>& t, auto& self) {
        if (t.wants(ai)) t.ensure_grad(ai)[k] += self.grad[0];
    });
}

// ---------------------------------------------------------------------------
// Linear algebra / NN ops
// ---------------------------------------------------------------------------

/// y = x * W + b with x (N,K), W (K,M), b (M) or empty var.
template <typename T>
inline Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
    detail::check_same_tape(x, w, "linear");
    Tape<T>& t = *x.tape;
    const Tensor<T>&vx = t.value(x), &vw = t.value(w);
    if (vx.ndim() != 2 || vw.ndim() != 2 || vx.dim(1) != vw.dim(0))
        throw ShapeError("linear: shape mismatch " + vx.shape_str() + " x " + vw.shape_str());
    const int N = vx.dim(0), K = vx.dim(1), M = vw.dim(1);
    Tensor<T> out({N, M});
    CMapRM<T> X(vx.data(), N, K);
    CMapRM<T> W(vw.data(), K, M);
    MapRM<T> Y(out.data(), N, M);
    Y.noalias() = X * W;
    const bool has_b = b.defined();
    if (has_b) {
        const Tensor<T>& vb = t.value(b);
        if (vb.numel() != M) throw ShapeError("linear: bias length mismatch");
        for (int n = 0; n < N; ++n)
            for (int m = 0; m < M; ++m) out.at(n, m) += vb[m];
    }
    const int xi = x.id, wi = w.id, bi = has_b ? b.id : -1;
    std::vector<int> parents{xi, wi};
    if (has_b) parents.push_back(bi);
    return t.make(std::move(out), parents, [xi, wi, bi, N, K, M](Tape<T>& t, auto& self) {
        CMapRM<T> G(self.grad.data(), N, M);
        if (t.wants(xi)) {
            MapRM<T> GX(t.ensure_grad(xi).data(), N, K);
            CMapRM<T> W(t.node(wi).value.data(), K, M);
            GX.noalias() += G * W.transpose();
        }
        if (t.wants(wi)) {
            MapRM<T> GW(t.ensure_grad(wi).data(), K, M);
            CMapRM<T> X(t.node(xi).value.data(), N, K);
            GW.noalias() += X.transpose() * G;
        }
        if (bi >= 0 && t.wants(bi)) {
            Tensor<T>& gb = t.ensure_grad(bi);
            for (int n = 0; n < N; ++n)
                for (int m = 0; m < M; ++m) gb[m] += self.grad[static_cast<std::int64_t>(n) * M + m];
        }
    });
}

/// Row-wise softmax on (N,K).
template <typename T>
inline Var<T> softmax_rows(Var<T> x) {
    Tape<T>& t = *x.tape;
    const Tensor<T>& v = t.value(x);
    if (v.ndim() != 2) throw ShapeError("softmax_rows: rank-2 required");
    const int N = v.dim(0), K = v.dim(1);
    Tensor<T> out({N, K});
    for (int n = 0; n < N; ++n) {
        T mx = v.at(n, 0);
        for (int k = 1; k < K; ++k) mx = std::max(mx, v.at(n, k));
        T s = T(0);
        for (int k = 0; k < K; ++k) {
            out.at(n, k) = std::exp(v.at(n, k) - mx);
            s += out.at(n, k);
        }
        for (int k = 0; k < K; ++k) out.at(n, k) /= s;
    }
    const int xi = x.id;
    return t.make(std::move(out), {xi}, [xi, N, K](Tape<T>& t, auto& self) {
        if (!t.wants(xi)) return;
        Tensor<T>& g = t.ensure_grad(xi);
        for (int n = 0; n < N; ++n) {
            T dot = T(0);
            for (int k = 0; k < K; ++k) dot += self.grad.at(n, k) * self.value.at(n, k);
            for (int k = 0; k < K; ++k)
                g.at(n, k) += self.value.at(n, k) * (self.grad.at(n, k) - dot);
        }
    });
}

/// Per (n,c): softmax over the H*W positions, rescaled by H*W so the map has
/// unit mean. A constant plane maps to all-ones.
template <typename T>
inline Var<T> spatial_softmax_scaled(Var<T> x) {
    Tape<T>& t = *x.tape;
    const Tensor<T>& v = t.value(x);
    if (v.ndim() != 4) throw ShapeError("spatial_softmax_scaled: rank-4 required");
    const int N = v.dim(0), C = v.dim(1), H = v.dim(2), W = v.dim(3);
    const int M = H * W;
    Tensor<T> out(v.shape());
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const T* src = v.data() + v.idx4(n, c, 0, 0);
            T* dst = out.data() + out.idx4(n, c, 0, 0);
            T mx = src[0];
            for (int i = 1; i < M; ++i) mx = std::max(mx, src[i]);
            T s = T(0);
            for (int i = 0; i < M; ++i) {
                dst[i] = std::exp(src[i] - mx);
                s += dst[i];
            }
            const T k = static_cast<T>(M) / s;
            for (int i = 0; i < M; ++i) dst[i] *= k;
        }
    const int xi = x.id;
    return t.make(std::move(out), {xi}, [xi, M](Tape<T>& t, auto& self) {
        if (!t.wants(xi)) return;
        Tensor<T>& g = t.ensure_grad(xi);
        const int N = g.dim(0), C = g.dim(1);
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                const T* y = self.value.data() + self.value.idx4(n, c, 0, 0);
                const T* gy = self.grad.data() + self.grad.idx4(n, c, 0, 0);
                T* gx = g.data() + g.idx4(n, c, 0, 0);
                // y = M * p, p = softmax. dx_i = p_i*(gy_i*M - sum_j gy_j*y_j)
                T dot = T(0);
                for (int i = 0; i < M; ++i) dot += gy[i] * y[i];
                for (int i = 0; i < M; ++i) gx[i] += (y[i] / static_cast<T>(M)) * (gy[i] * static_cast<T>(M) - dot);
            }
    });
}

/// (N,C,H,W) -> (N,C) mean over spatial positions.
template <typename T>
inline Var<T> global_avg_pool(Var<T> x) {
    Tape<T>& t = *x.tape;
    const Tensor<T>& v = t.value(x);
    if (v.ndim() != 4) throw ShapeError("global_avg_pool: rank-4 required");
    const int N = v.dim(0), C = v.dim(1), H = v.dim(2), W = v.dim(3);
    const int M = H * W;
    Tensor<T> out({N, C});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const T* src = v.data() + v.idx4(n, c, 0, 0);
            T s = T(0);
            for (int i = 0; i < M; ++i) s += src[i];
            out.at(n, c) = s / static_cast<T>(M);
        }
    const int xi = x.id;
    return t.make(std::move(out), {xi}, [xi, M](Tape<T>& t, auto& self) {
        if (!t.wants(xi)) return;
        Tensor<T>& g = t.ensure_grad(xi);
        const int N = g.dim(0), C = g.dim(1);
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                const T gv = self.grad.at(n, c) / static_cast<T>(M);
                T* dst = g.data() + g.idx4(n, c, 0, 0);
                for (int i = 0; i < M; ++i) dst[i] += gv;
            }
    });
}

/// Multiply (N,C,H,W) features by per-channel gates (N,C).
template <typename T>
inline Var<T> channel_scale(Var<T> x, Var<T> gates) {
    detail::check_same_tape(x, gates, "channel_scale");
    Tape<T>& t = *x.tape;
    const Tensor<T>&v = t.value(x), &gv = t.value(gates);
    if (v.ndim() != 4 || gv.ndim() != 2 || gv.dim(0) != v.dim(0) || gv.dim(1) != v.dim(1))
        throw ShapeError("channel_scale: shape mismatch");
    const int N = v.dim(0), C = v.dim(1), H = v.dim(2), W = v.dim(3);
    const int M = H * W;
    Tensor<T> out(v.shape());
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const T s = gv.at(n, c);
            const T* src = v.data() + v.idx4(n, c, 0, 0);
            T* dst = out.data() + out.idx4(n, c, 0, 0);
            for (int i = 0; i < M; ++i) dst[i] = src[i] * s;
        }
    const int xi = x.id, gi = gates.id;
    return t.make(std::move(out), {xi, gi}, [xi, gi, M](Tape<T>& t, auto& self) {
        const Tensor<T>&v = t.node(xi).value, &gv = t.node(gi).value;
        const int N = v.dim(0), C = v.dim(1);
        if (t.wants(xi)) {
            Tensor<T>& g = t.ensure_grad(xi);
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) {
                    const T s = gv.at(n, c);
                    const T* src = self.grad.data() + self.grad.idx4(n, c, 0, 0);
                    T* dst = g.data() + g.idx4(n, c, 0, 0);
                    for (int i = 0; i < M; ++i) dst[i] += src[i] * s;
                }
        }
        if (t.wants(gi)) {
            Tensor<T>& g = t.ensure_grad(gi);
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) {
                    const T* gr = self.grad.data() + self.grad.idx4(n, c, 0, 0);
                    const T* xv = v.data() + v.idx4(n, c, 0, 0);
                    T s = T(0);
                    for (int i = 0; i < M; ++i) s += gr[i] * xv[i];
                    g.at(n, c) += s;
                }
        }
    });
}

// ---------------------------------------------------------------------------
// Convolution / batch norm / resampling
// ---------------------------------------------------------------------------

template <typename T>
inline Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, int stride, int pad, int dilation = 1) {
    detail::check_same_tape(x, w, "conv2d");
    Tape<T>& t = *x.tape;
    const bool has_b = b.defined();
    Tensor<T> out = conv2d_forward(t.value(x), t.value(w), has_b ? t.value(b) : Tensor<T>(),
                                   stride, pad, dilation);
    const int xi = x.id, wi = w.id, bi = has_b ? b.id : -1;
    std::vector<int> parents{xi, wi};
    if (has_b) parents.push_back(bi);
    return t.make(std::move(out), parents,
                  [xi, wi, bi, stride, pad, dilation](Tape<T>& t, auto& self) {
        const Tensor<T>&vx = t.node(xi).value, &vw = t.node(wi).value;
        Tensor<T>* gx = t.wants(xi) ? &t.ensure_grad(xi) : nullptr;
        Tensor<T>* gw = t.wants(wi) ? &t.ensure_grad(wi) : nullptr;
        Tensor<T>* gb = (bi >= 0 && t.wants(bi)) ? &t.ensure_grad(bi) : nullptr;
        conv2d_backward(vx, vw, self.grad, stride, pad, gx, gw, gb, dilation);
    });
}

/// Channel slice [c0, c0+len) of a rank-4 tensor.
template <typename T>
inline Var<T> slice_channels(Var<T> a, int c0, int len) {
    Tape<T>& t = *a.tape;
    const Tensor<T>& v = t.value(a);
    if (v.ndim() != 4 || c0 < 0 || c0 + len > v.dim(1))
        throw ShapeError("slice_channels: range out of bounds");
    const int N = v.dim(0), H = v.dim(2), W = v.dim(3);
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    Tensor<T> out({N, len, H, W});
    for (int n = 0; n < N; ++n)
        std::copy(v.data() + v.idx4(n, c0, 0, 0), v.data() + v.idx4(n, c0, 0, 0) + len * plane,
                  out.data() + out.idx4(n, 0, 0, 0));
    const int ai = a.id;
    return t.make(std::move(out), {ai}, [ai, c0, len, plane](Tape<T>& t, auto& self) {
        if (!t.wants(ai)) return;
        Tensor<T>& g = t.ensure_grad(ai);
        const int N = g.dim(0);
        for (int n = 0; n < N; ++n) {
            const T* src = self.grad.data() + self.grad.idx4(n, 0, 0, 0);
            T* dst = g.data() + g.idx4(n, c0, 0, 0);
            for (std::size_t i = 0; i < len * plane; ++i) dst[i] += src[i];
        }
    });
}

/// Batch-statistics normalization: y = gamma * (x - mu_B) / sqrt(var_B + eps) + beta.
/// Batch mean/var are computed per channel over (N,H,W); when `running` is
/// given, it is EMA-updated as a side effect (value semantics stay pure for
/// the graph: the update never feeds back into this forward).
template <typename T>
struct BnRunning {
    Tensor<T>* mean = nullptr;
    Tensor<T>* var = nullptr;
    T momentum = T(0.1);
};

template <typename T>
inline Var<T> batchnorm_batch(Var<T> x, Var<T> gamma, Var<T> beta, T eps,
                              BnRunning<T> running = {}) {
    Tape<T>& t = *x.tape;
    const Tensor<T>& v = t.value(x);
    if (v.ndim() != 4) throw ShapeError("batchnorm: rank-4 required");
    const int N = v.dim(0), C = v.dim(1), H = v.dim(2), W = v.dim(3);
    if (t.value(gamma).numel() != C || t.value(beta).numel() != C)
        throw ShapeError("batchnorm: affine length mismatch");
    const std::int64_t M = static_cast<std::int64_t>(N) * H * W;

    Tensor<T> mu({C}), var({C});
#pragma omp parallel for schedule(static)
    for (int c = 0; c < C; ++c) {
        T s = T(0);
        for (int n = 0; n < N; ++n) {
            const T* p = v.data() + v.idx4(n, c, 0, 0);
            for (int i = 0; i < H * W; ++i) s += p[i];
        }
        mu[c] = s / static_cast<T>(M);
        T q = T(0);
        for (int n = 0; n < N; ++n) {
            const T* p = v.data() + v.idx4(n, c, 0, 0);
            for (int i = 0; i < H * W; ++i) {
                const T d = p[i] - mu[c];
                q += d * d;
            }
        }
        var[c] = q / static_cast<T>(M);
    }
    if (running.mean && running.var) {
        for (int c = 0; c < C; ++c) {
            (*running.mean)[c] = (T(1) - running.momentum) * (*running.mean)[c] + running.momentum * mu[c];
            (*running.var)[c] = (T(1) - running.momentum) * (*running.var)[c] + running.momentum * var[c];
        }
    }

    Tensor<T> inv_sigma({C});
    for (int c = 0; c < C; ++c) inv_sigma[c] = T(1) / std::sqrt(var[c] + eps);

    const Tensor<T>& gam = t.value(gamma);
    const Tensor<T>& bet = t.value(beta);
    Tensor<T> out(v.shape());
#pragma omp parallel for schedule(static) collapse(2)
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const T* src = v.data() + v.idx4(n, c, 0, 0);
            T* dst = out.data() + out.idx4(n, c, 0, 0);
            const T a = gam[c] * inv_sigma[c];
            const T bb = bet[c] - gam[c] * mu[c] * inv_sigma[c];
            for (int i = 0; i < H * W; ++i) dst[i] = a * src[i] + bb;
        }

    const int xi = x.id, gi = gamma.id, bi = beta.id;
    return t.make(std::move(out), {xi, gi, bi},
                  [xi, gi, bi, mu, inv_sigma, M](Tape<T>& t, auto& self) {
        const Tensor<T>& v = t.node(xi).value;
        const Tensor<T>& gam = t.node(gi).value;
        const int N = v.dim(0), C = v.dim(1), H = v.dim(2), W = v.dim(3);
        // accumulate per-channel sums of g and g*xhat
        std::vector<T> sg(C, T(0)), sgx(C, T(0));
#pragma omp parallel for schedule(static)
        for (int c = 0; c < C; ++c)
            for (int n = 0; n < N; ++n) {
                const T* gp = self.grad.data() + self.grad.idx4(n, c, 0, 0);
                const T* xp = v.data() + v.idx4(n, c, 0, 0);
                T a = T(0), bacc = T(0);
                for (int i = 0; i < H * W; ++i) {
                    a += gp[i];
                    bacc += gp[i] * (xp[i] - mu[c]) * inv_sigma[c];
                }
                sg[c] += a;
                sgx[c] += bacc;
            }
        if (t.wants(bi)) {
            Tensor<T>& g = t.ensure_grad(bi);
            for (int c = 0; c < C; ++c) g[c] += sg[c];
        }
        if (t.wants(gi)) {
            Tensor<T>& g = t.ensure_grad(gi);
            for (int c = 0; c < C; ++c) g[c] += sgx[c];
        }
        if (t.wants(xi)) {
            Tensor<T>& g = t.ensure_grad(xi);
#pragma omp parallel for schedule(static) collapse(2)
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) {
                    const T* gp = self.grad.data() + self.grad.idx4(n, c, 0, 0);
                    const T* xp = v.data() + v.idx4(n, c, 0, 0);
                    T* gd = g.data() + g.idx4(n, c, 0, 0);
                    const T k = gam[c] * inv_sigma[c];
                    for (int i = 0; i < H * W; ++i) {
                        const T xhat = (xp[i] - mu[c]) * inv_sigma[c];
                        gd[i] += k * (gp[i] - sg[c] / static_cast<T>(M) -
                                      xhat * sgx[c] / static_cast<T>(M));
                    }
                }
        }
    });
}

/// Normalization with externally supplied per-channel statistics:
/// y = gamma * (x - mu) / sigma + beta. mu/sigma are constants on the graph.
template <typename T>
inline Var<T> batchnorm_frozen(Var<T> x, Var<T> gamma, Var<T> beta, const Tensor<T>& mu,
                               const Tensor<T>& sigma) {
    Tape<T>& t = *x.tape;
    const Tensor<T>& v = t.value(x);
    if (v.ndim() != 4) throw ShapeError("batchnorm_frozen: rank-4 required");
    const int N = v.dim(0), C = v.dim(1), H = v.dim(2), W = v.dim(3);
    if (mu.numel() != C || sigma.numel() != C || t.value(gamma).numel() != C ||
        t.value(beta).numel() != C)
        throw ShapeError("batchnorm_frozen: channel mismatch");
    for (int c = 0; c < C; ++c)
        if (!(sigma[c] > T(1e-5))) throw InvalidBnError("batchnorm_frozen: sigma <= eps");
    const Tensor<T>& gam = t.value(gamma);
    const Tensor<T>& bet = t.value(beta);
    Tensor<T> out(v.shape());
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const T a = gam[c] / sigma[c];
            const T bb = bet[c] - gam[c] * mu[c] / sigma[c];
            const T* src = v.data() + v.idx4(n, c, 0, 0);
            T* dst = out.data() + out.idx4(n, c, 0, 0);
            for (int i = 0; i < H * W; ++i) dst[i] = a * src[i] + bb;
        }
    const int xi = x.id, gi = gamma.id, bi = beta.id;
    return t.make(std::move(out), {xi, gi, bi}, [xi, gi, bi, mu, sigma](Tape<T>& t, auto& self) {
        const Tensor<T>& v = t.node(xi).value;
        const Tensor<T>& gam = t.node(gi).value;
        const int N = v.dim(0), C = v.dim(1), H = v.dim(2), W = v.dim(3);
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                const T* gp = self.grad.data() + self.grad.idx4(n, c, 0, 0);
                const T* xp = v.data() + v.idx4(n, c, 0, 0);
                if (t.wants(xi)) {
                    T* gd = t.ensure_grad(xi).data() + t.ensure_grad(xi).idx4(n, c, 0, 0);
                    const T k = gam[c] / sigma[c];
                    for (int i = 0; i < H * W; ++i) gd[i] += gp[i] * k;
                }
                if (t.wants(gi)) {
                    T s = T(0);
                    for (int i = 0; i < H * W; ++i) s += gp[i] * (xp[i] - mu[c]) / sigma[c];
                    t.ensure_grad(gi)[c] += s;
                }
                if (t.wants(bi)) {
                    T s = T(0);
                    for (int i = 0; i < H * W; ++i) s += gp[i];
                    t.ensure_grad(bi)[c] += s;
                }
            }
    });
}

enum class Resample { bilinear, nearest };

/// Integer-factor upsampling, half-pixel centers for the bilinear mode.
template <typename T>
inline Var<T> upsample(Var<T> x, int factor, Resample mode) {
    Tape<T>& t = *x.tape;
    const Tensor<T>& v = t.value(x);
    if (v.ndim() != 4) throw ShapeError("upsample: rank-4 required");
    const int N = v.dim(0), C = v.dim(1), H = v.dim(2), W = v.dim(3);
    const int OH = H * factor, OW = W * factor;

    // Precompute the 1-d sampling taps once; both axes share them.
    struct Tap { int i0, i1; T w0, w1; };
    auto make_taps = [&](int in, int out) {
        std::vector<Tap> taps(static_cast<std::size_t>(out));
        for (int o = 0; o < out; ++o) {
            if (mode == Resample::nearest) {
                int i = o / factor;
                taps[o] = {i, i, T(1), T(0)};
            } else {
                const double src = (o + 0.5) / factor - 0.5;
                double f = std::floor(src);
                int i0 = static_cast<int>(f);
                T w1 = static_cast<T>(src - f);
                int i1 = i0 + 1;
                if (i0 < 0) { i0 = 0; i1 = 0; w1 = T(0); }
                if (i1 >= in) { i1 = in - 1; if (i0 >= in) i0 = in - 1; }
                taps[o] = {i0, i1, T(1) - w1, w1};
            }
        }
        return taps;
    };
    auto ty = make_taps(H, OH);
    auto tx = make_taps(W, OW);

    Tensor<T> out({N, C, OH, OW});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const T* src = v.data() + v.idx4(n, c, 0, 0);
            T* dst = out.data() + out.idx4(n, c, 0, 0);
            for (int oy = 0; oy < OH; ++oy)
                for (int ox = 0; ox < OW; ++ox) {
                    const auto&a = ty[oy], &b = tx[ox];
                    dst[oy * OW + ox] =
                        a.w0 * (b.w0 * src[a.i0 * W + b.i0] + b.w1 * src[a.i0 * W + b.i1]) +
                        a.w1 * (b.w0 * src[a.i1 * W + b.i0] + b.w1 * src[a.i1 * W + b.i1]);
                }
        }
    const int xi = x.id;
    return t.make(std::move(out), {xi}, [xi, ty, tx, W, OW](Tape<T>& t, auto& self) {
        if (!t.wants(xi)) return;
        Tensor<T>& g = t.ensure_grad(xi);
        const int N = g.dim(0), C = g.dim(1);
        const int OH = self.grad.dim(2);
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                const T* gs = self.grad.data() + self.grad.idx4(n, c, 0, 0);
                T* gd = g.data() + g.idx4(n, c, 0, 0);
                for (int oy = 0; oy < OH; ++oy)
                    for (int ox = 0; ox < OW; ++ox) {
                        const auto&a = ty[oy], &b = tx[ox];
                        const T gv = gs[oy * OW + ox];
                        gd[a.i0 * W + b.i0] += gv * a.w0 * b.w0;
                        if (b.w1 != T(0)) gd[a.i0 * W + b.i1] += gv * a.w0 * b.w1;
                        if (a.w1 != T(0)) {
                            gd[a.i1 * W + b.i0] += gv * a.w1 * b.w0;
                            if (b.w1 != T(0)) gd[a.i1 * W + b.i1] += gv * a.w1 * b.w1;
                        }
                    }
            }
    });
}

// ---------------------------------------------------------------------------
// Losses / vector helpers
// ---------------------------------------------------------------------------

/// Numerically stable sum of elementwise binary cross-entropy with logits.
template <typename T>
inline Var<T> bce_logits_sum(Var<T> logits, const Tensor<T>& targets) {
    Tape<T>& t = *logits.tape;
    const Tensor<T>& v = t.value(logits);
    if (!v.same_shape(targets)) throw ShapeError("bce_logits_sum: target shape mismatch");
    T total = T(0);
    for (std::int64_t i = 0; i < v.numel(); ++i) {
        const T x = v[i], z = targets[i];
        total += std::max(x, T(0)) - x * z + std::log1p(std::exp(-std::abs(x)));
    }
    const int xi = logits.id;
    Tensor<T> tcopy = targets;
    return t.make(Tensor<T>::scalar(total), {xi}, [xi, tcopy](Tape<T>& t, auto& self) {
        if (!t.wants(xi)) return;
        Tensor<T>& g = t.ensure_grad(xi);
        const Tensor<T>& v = t.node(xi).value;
        const T gv = self.grad[0];
        for (std::int64_t i = 0; i < g.numel(); ++i) {
            const T s = T(1) / (T(1) + std::exp(-v[i]));
            g[i] += gv * (s - tcopy[i]);
        }
    });
}

/// Unit-normalize a (1,K) row vector.
template <typename T>
inline Var<T> l2_normalize(Var<T> x) {
    Tape<T>& t = *x.tape;
    const Tensor<T>& v = t.value(x);
    T nrm = T(0);
    for (std::int64_t i = 0; i < v.numel(); ++i) nrm += v[i] * v[i];
    nrm = std::sqrt(std::max(nrm, T(1e-24)));
    Tensor<T> out = v;
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] /= nrm;
    const int xi = x.id;
    return t.make(std::move(out), {xi}, [xi, nrm](Tape<T>& t, auto& self) {
        if (!t.wants(xi)) return;
        Tensor<T>& g = t.ensure_grad(xi);
        T dot = T(0);
        for (std::int64_t i = 0; i < g.numel(); ++i) dot += self.grad[i] * self.value[i];
        for (std::int64_t i = 0; i < g.numel(); ++i)
            g[i] += (self.grad[i] - self.value[i] * dot) / nrm;
    });
}

/// Scalar dot product of two same-shape vars.
template <typename T>
inline Var<T> dotv(Var<T> a, Var<T> b) {
    return sum_all(mul(a, b));
}

}  // namespace ccdnet
