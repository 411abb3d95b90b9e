#pragma once

#include <cmath>

#include "ccdnet/core/autodiff.hpp"

namespace ccdnet {

namespace detail {

/// Bilinear sample with zero padding outside the plane (sampling support
/// extends one pixel past the border, as in modulated deformable conv).
template <typename T>
inline T bilinear_zero(const T* plane, int H, int W, T y, T x) {
    if (y <= T(-1) || y >= static_cast<T>(H) || x <= T(-1) || x >= static_cast<T>(W)) return T(0);
    const int y0 = static_cast<int>(std::floor(y));
    const int x0 = static_cast<int>(std::floor(x));
    const T ly = y - static_cast<T>(y0), lx = x - static_cast<T>(x0);
    const T hy = T(1) - ly, hx = T(1) - lx;
    auto v = [&](int yy, int xx) -> T {
        return (yy >= 0 && yy < H && xx >= 0 && xx < W) ? plane[yy * W + xx] : T(0);
    };
    return hy * (hx * v(y0, x0) + lx * v(y0, x0 + 1)) +
           ly * (hx * v(y0 + 1, x0) + lx * v(y0 + 1, x0 + 1));
}

/// d(sample)/dy and d(sample)/dx at (y, x), zero-padded like bilinear_zero.
template <typename T>
inline void bilinear_zero_coord_grad(const T* plane, int H, int W, T y, T x, T& dy, T& dx) {
    dy = T(0);
    dx = T(0);
    if (y <= T(-1) || y >= static_cast<T>(H) || x <= T(-1) || x >= static_cast<T>(W)) return;
    const int y0 = static_cast<int>(std::floor(y));
    const int x0 = static_cast<int>(std::floor(x));
    const T ly = y - static_cast<T>(y0), lx = x - static_cast<T>(x0);
    auto v = [&](int yy, int xx) -> T {
        return (yy >= 0 && yy < H && xx >= 0 && xx < W) ? plane[yy * W + xx] : T(0);
    };
    const T v00 = v(y0, x0), v01 = v(y0, x0 + 1), v10 = v(y0 + 1, x0), v11 = v(y0 + 1, x0 + 1);
    dy = (T(1) - lx) * (v10 - v00) + lx * (v11 - v01);
    dx = (T(1) - ly) * (v01 - v00) + ly * (v11 - v10);
}

/// Scatter g into the (up to) four corners around (y, x).
template <typename T>
inline void bilinear_zero_scatter(T* plane, int H, int W, T y, T x, T g) {
    if (y <= T(-1) || y >= static_cast<T>(H) || x <= T(-1) || x >= static_cast<T>(W)) return;
    const int y0 = static_cast<int>(std::floor(y));
    const int x0 = static_cast<int>(std::floor(x));
    const T ly = y - static_cast<T>(y0), lx = x - static_cast<T>(x0);
    const T hy = T(1) - ly, hx = T(1) - lx;
    auto addv = [&](int yy, int xx, T w) {
        if (yy >= 0 && yy < H && xx >= 0 && xx < W) plane[yy * W + xx] += w * g;
    };
    addv(y0, x0, hy * hx);
    addv(y0, x0 + 1, hy * lx);
    addv(y0 + 1, x0, ly * hx);
    addv(y0 + 1, x0 + 1, ly * lx);
}

/// Deformable 3x3 patch matrix: col((c*9+k), p) = mask_k(p) * sample_k(c, p).
template <typename T>
inline void dcn_im2col(const Tensor<T>& x, const Tensor<T>& offset, const Tensor<T>& mask, int n,
                       T* col) {
    const int C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int M = H * W;
    for (int c = 0; c < C; ++c) {
        const T* plane = x.data() + x.idx4(n, c, 0, 0);
        for (int k = 0; k < 9; ++k) {
            const int ky = k / 3, kx = k % 3;
            const T* off_y = offset.data() + offset.idx4(n, 2 * k, 0, 0);
            const T* off_x = offset.data() + offset.idx4(n, 2 * k + 1, 0, 0);
            const T* mk = mask.data() + mask.idx4(n, k, 0, 0);
            T* row = col + (static_cast<std::size_t>(c) * 9 + k) * M;
            for (int p = 0; p < M; ++p) {
                const int py = p / W, px = p % W;
                const T sy = static_cast<T>(py + ky - 1) + off_y[p];
                const T sx = static_cast<T>(px + kx - 1) + off_x[p];
                row[p] = mk[p] * bilinear_zero(plane, H, W, sy, sx);
            }
        }
    }
}

}  // namespace detail

/// Modulated deformable 3x3 convolution, stride 1, padding 1.
/// offset: (N,18,H,W) interleaved (dy,dx) per tap; mask: (N,9,H,W), already in (0,1).
template <typename T>
inline Var<T> deform_conv3x3(Var<T> x, Var<T> offset, Var<T> mask, Var<T> w, Var<T> b) {
    Tape<T>& t = *x.tape;
    const Tensor<T>&vx = t.value(x), &vo = t.value(offset), &vm = t.value(mask), &vw = t.value(w);
    const int N = vx.dim(0), C = vx.dim(1), H = vx.dim(2), W = vx.dim(3);
    if (vo.dim(1) != 18 || vm.dim(1) != 9 || vo.dim(2) != H || vm.dim(2) != H)
        throw ShapeError("deform_conv3x3: offset/mask geometry mismatch");
    if (vw.dim(1) != C || vw.dim(2) != 3 || vw.dim(3) != 3)
        throw ShapeError("deform_conv3x3: kernel mismatch");
    const int OC = vw.dim(0);
    const int K = C * 9, M = H * W;

    Tensor<T> out({N, OC, H, W});
    std::vector<T> col(static_cast<std::size_t>(K) * M);
    CMapRM<T> Wm(vw.data(), OC, K);
    for (int n = 0; n < N; ++n) {
        detail::dcn_im2col(vx, vo, vm, n, col.data());
        CMapRM<T> Cm(col.data(), K, M);
        MapRM<T> Ym(out.data() + out.idx4(n, 0, 0, 0), OC, M);
        Ym.noalias() = Wm * Cm;
    }
    const bool has_b = b.defined();
    if (has_b) {
        const Tensor<T>& vb = t.value(b);
        for (int n = 0; n < N; ++n)
            for (int oc = 0; oc < OC; ++oc) {
                T* p = out.data() + out.idx4(n, oc, 0, 0);
                for (int i = 0; i < M; ++i) p[i] += vb[oc];
            }
    }

    const int xi = x.id, oi = offset.id, mi = mask.id, wi = w.id, bi = has_b ? b.id : -1;
    std::vector<int> parents{xi, oi, mi, wi};
    if (has_b) parents.push_back(bi);
    return t.make(std::move(out), parents, [xi, oi, mi, wi, bi](Tape<T>& t, auto& self) {
        const Tensor<T>&vx = t.node(xi).value, &vo = t.node(oi).value, &vm = t.node(mi).value,
                       &vw = t.node(wi).value;
        const int N = vx.dim(0), C = vx.dim(1), H = vx.dim(2), W = vx.dim(3);
        const int OC = vw.dim(0), K = C * 9, M = H * W;
        CMapRM<T> Wm(vw.data(), OC, K);
        std::vector<T> col(static_cast<std::size_t>(K) * M);
        std::vector<T> colg(static_cast<std::size_t>(K) * M);

        Tensor<T>* gx = t.wants(xi) ? &t.ensure_grad(xi) : nullptr;
        Tensor<T>* go = t.wants(oi) ? &t.ensure_grad(oi) : nullptr;
        Tensor<T>* gm = t.wants(mi) ? &t.ensure_grad(mi) : nullptr;
        Tensor<T>* gw = t.wants(wi) ? &t.ensure_grad(wi) : nullptr;
        Tensor<T>* gb = (bi >= 0 && t.wants(bi)) ? &t.ensure_grad(bi) : nullptr;

        for (int n = 0; n < N; ++n) {
            CMapRM<T> Gm(self.grad.data() + self.grad.idx4(n, 0, 0, 0), OC, M);
            if (gw) {
                detail::dcn_im2col(vx, vo, vm, n, col.data());
                CMapRM<T> Cm(col.data(), K, M);
                MapRM<T> GW(gw->data(), OC, K);
                GW.noalias() += Gm * Cm.transpose();
            }
            if (gb) {
                for (int oc = 0; oc < OC; ++oc) {
                    const T* p = self.grad.data() + self.grad.idx4(n, oc, 0, 0);
                    T s = T(0);
                    for (int i = 0; i < M; ++i) s += p[i];
                    (*gb)[oc] += s;
                }
            }
            if (gx || go || gm) {
                MapRM<T> CG(colg.data(), K, M);
                CG.noalias() = Wm.transpose() * Gm;
                for (int c = 0; c < C; ++c) {
                    const T* plane = vx.data() + vx.idx4(n, c, 0, 0);
                    T* gplane = gx ? gx->data() + gx->idx4(n, c, 0, 0) : nullptr;
                    for (int k = 0; k < 9; ++k) {
                        const int ky = k / 3, kx = k % 3;
                        const T* off_y = vo.data() + vo.idx4(n, 2 * k, 0, 0);
                        const T* off_x = vo.data() + vo.idx4(n, 2 * k + 1, 0, 0);
                        const T* mk = vm.data() + vm.idx4(n, k, 0, 0);
                        const T* gcol = colg.data() + (static_cast<std::size_t>(c) * 9 + k) * M;
                        for (int p = 0; p < M; ++p) {
                            const T g = gcol[p];
                            if (g == T(0)) continue;
                            const int py = p / W, px = p % W;
                            const T sy = static_cast<T>(py + ky - 1) + off_y[p];
                            const T sx = static_cast<T>(px + kx - 1) + off_x[p];
                            if (gm) {
                                (*gm).data()[gm->idx4(n, k, 0, 0) + p] +=
                                    g * detail::bilinear_zero(plane, H, W, sy, sx);
                            }
                            const T gs = g * mk[p];
                            if (gplane) detail::bilinear_zero_scatter(gplane, H, W, sy, sx, gs);
                            if (go) {
                                T dsy, dsx;
                                detail::bilinear_zero_coord_grad(plane, H, W, sy, sx, dsy, dsx);
                                (*go).data()[go->idx4(n, 2 * k, 0, 0) + p] += gs * dsy;
                                (*go).data()[go->idx4(n, 2 * k + 1, 0, 0) + p] += gs * dsx;
                            }
                        }
                    }
                }
            }
        }
    });
}

/// Resample a rectangular window of a (1,C,H,W) map onto a fixed 3x3 grid.
/// One bilinear sample per output cell, taken at the cell center; coordinates
/// are clamped to the map border.
template <typename T>
inline Var<T> roi_grid3x3(Var<T> x, double bx0, double by0, double bx1, double by1) {
    Tape<T>& t = *x.tape;
    const Tensor<T>& v = t.value(x);
    if (v.ndim() != 4 || v.dim(0) != 1) throw ShapeError("roi_grid3x3: (1,C,H,W) required");
    const int C = v.dim(1), H = v.dim(2), W = v.dim(3);
    if (!(bx1 > bx0) || !(by1 > by0)) throw ShapeError("roi_grid3x3: degenerate box");
    const double bw = bx1 - bx0, bh = by1 - by0;

    std::array<T, 9> ys{}, xs{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double sy = by0 + (i + 0.5) * bh / 3.0;
            double sx = bx0 + (j + 0.5) * bw / 3.0;
            sy = std::min(std::max(sy, 0.0), static_cast<double>(H - 1));
            sx = std::min(std::max(sx, 0.0), static_cast<double>(W - 1));
            ys[i * 3 + j] = static_cast<T>(sy);
            xs[i * 3 + j] = static_cast<T>(sx);
        }

    Tensor<T> out({1, C, 3, 3});
    for (int c = 0; c < C; ++c) {
        const T* plane = v.data() + v.idx4(0, c, 0, 0);
        for (int g = 0; g < 9; ++g)
            out.data()[c * 9 + g] = detail::bilinear_zero(plane, H, W, ys[g], xs[g]);
    }
    const int xi = x.id;
    return t.make(std::move(out), {xi}, [xi, ys, xs](Tape<T>& t, auto& self) {
        if (!t.wants(xi)) return;
        Tensor<T>& g = t.ensure_grad(xi);
        const int C = g.dim(1), H = g.dim(2), W = g.dim(3);
        for (int c = 0; c < C; ++c) {
            T* plane = g.data() + g.idx4(0, c, 0, 0);
            for (int k = 0; k < 9; ++k)
                detail::bilinear_zero_scatter(plane, H, W, ys[k], xs[k], self.grad[c * 9 + k]);
        }
    });
}

}  // namespace ccdnet
