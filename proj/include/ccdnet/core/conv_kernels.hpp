#pragma once

#include <Eigen/Dense>
#ifdef _OPENMP
#include <omp.h>
#endif

#include "ccdnet/core/errors.hpp"
#include "ccdnet/core/tensor.hpp"

namespace ccdnet {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRM = Eigen::Map<MatRM<T>>;
template <typename T>
using CMapRM = Eigen::Map<const MatRM<T>>;

inline int conv_out_dim(int in, int k, int stride, int pad, int dilation = 1) {
    const int eff = dilation * (k - 1) + 1;
    return (in + 2 * pad - eff) / stride + 1;
}

/// Unpack one image (C,H,W) into a (C*kh*kw) x (OH*OW) patch matrix.
template <typename T>
inline void im2col(const T* x, int C, int H, int W, int kh, int kw, int stride, int pad,
                   int OH, int OW, T* col, int dilation = 1) {
    const int M = OH * OW;
    for (int c = 0; c < C; ++c) {
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
                T* row = col + (static_cast<std::size_t>(c) * kh * kw + ky * kw + kx) * M;
                for (int oh = 0; oh < OH; ++oh) {
                    const int ih = oh * stride - pad + ky * dilation;
                    if (ih < 0 || ih >= H) {
                        for (int ow = 0; ow < OW; ++ow) row[oh * OW + ow] = T(0);
                        continue;
                    }
                    const T* src = x + (static_cast<std::size_t>(c) * H + ih) * W;
                    for (int ow = 0; ow < OW; ++ow) {
                        const int iw = ow * stride - pad + kx * dilation;
                        row[oh * OW + ow] = (iw >= 0 && iw < W) ? src[iw] : T(0);
                    }
                }
            }
        }
    }
}

/// Transpose of im2col: scatter-add a patch matrix back into (C,H,W).
template <typename T>
inline void col2im_add(const T* col, int C, int H, int W, int kh, int kw, int stride, int pad,
                       int OH, int OW, T* x, int dilation = 1) {
    const int M = OH * OW;
    for (int c = 0; c < C; ++c) {
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
                const T* row = col + (static_cast<std::size_t>(c) * kh * kw + ky * kw + kx) * M;
                for (int oh = 0; oh < OH; ++oh) {
                    const int ih = oh * stride - pad + ky * dilation;
                    if (ih < 0 || ih >= H) continue;
                    T* dst = x + (static_cast<std::size_t>(c) * H + ih) * W;
                    for (int ow = 0; ow < OW; ++ow) {
                        const int iw = ow * stride - pad + kx * dilation;
                        if (iw >= 0 && iw < W) dst[iw] += row[oh * OW + ow];
                    }
                }
            }
        }
    }
}

/// y = conv(x, w) + b. x (N,C,H,W), w (OC,IC,kh,kw), b (OC) or empty.
template <typename T>
inline Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                                int stride, int pad, int dilation = 1) {
    if (x.ndim() != 4 || w.ndim() != 4) throw ShapeError("conv2d: rank-4 tensors required");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int OC = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    if (w.dim(1) != C)
        throw ShapeError("conv2d: input has " + std::to_string(C) + " channels, kernel expects " +
                         std::to_string(w.dim(1)));
    const int OH = conv_out_dim(H, kh, stride, pad, dilation);
    const int OW = conv_out_dim(W, kw, stride, pad, dilation);
    if (OH <= 0 || OW <= 0) throw ShapeError("conv2d: empty output");

    Tensor<T> y({N, OC, OH, OW});
    const int K = C * kh * kw;
    const int M = OH * OW;
    CMapRM<T> Wm(w.data(), OC, K);
#pragma omp parallel
    {
        std::vector<T> col(static_cast<std::size_t>(K) * M);
#pragma omp for schedule(static)
        for (int n = 0; n < N; ++n) {
            im2col(x.data() + x.idx4(n, 0, 0, 0), C, H, W, kh, kw, stride, pad, OH, OW, col.data(),
                   dilation);
            CMapRM<T> Cm(col.data(), K, M);
            MapRM<T> Ym(y.data() + y.idx4(n, 0, 0, 0), OC, M);
            Ym.noalias() = Wm * Cm;
        }
    }
    if (!b.empty()) {
        if (b.numel() != OC) throw ShapeError("conv2d: bias length mismatch");
        for (int n = 0; n < N; ++n)
            for (int oc = 0; oc < OC; ++oc) {
                T* p = y.data() + y.idx4(n, oc, 0, 0);
                const T bv = b[oc];
                for (int m = 0; m < M; ++m) p[m] += bv;
            }
    }
    return y;
}

/// Accumulates input/weight/bias gradients for conv2d. Null outputs are skipped.
template <typename T>
inline void conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& gy,
                            int stride, int pad, Tensor<T>* gx, Tensor<T>* gw, Tensor<T>* gb,
                            int dilation = 1) {
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int OC = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const int OH = gy.dim(2), OW = gy.dim(3);
    const int K = C * kh * kw;
    const int M = OH * OW;
    CMapRM<T> Wm(w.data(), OC, K);

    const int max_threads =
#ifdef _OPENMP
        omp_get_max_threads();
#else
        1;
#endif
    std::vector<Tensor<T>> gw_part, gb_part;
    if (gw) gw_part.assign(static_cast<std::size_t>(max_threads), Tensor<T>::zeros(w.shape()));
    if (gb) gb_part.assign(static_cast<std::size_t>(max_threads), Tensor<T>({OC}));

#pragma omp parallel
    {
        const int tid =
#ifdef _OPENMP
            omp_get_thread_num();
#else
            0;
#endif
        std::vector<T> col;
        std::vector<T> colg;
        if (gw) col.resize(static_cast<std::size_t>(K) * M);
        if (gx) colg.resize(static_cast<std::size_t>(K) * M);
#pragma omp for schedule(static)
        for (int n = 0; n < N; ++n) {
            CMapRM<T> Gm(gy.data() + gy.idx4(n, 0, 0, 0), OC, M);
            if (gw) {
                im2col(x.data() + x.idx4(n, 0, 0, 0), C, H, W, kh, kw, stride, pad, OH, OW,
                       col.data(), dilation);
                CMapRM<T> Cm(col.data(), K, M);
                MapRM<T> GW(gw_part[static_cast<std::size_t>(tid)].data(), OC, K);
                GW.noalias() += Gm * Cm.transpose();
            }
            if (gx) {
                MapRM<T> CG(colg.data(), K, M);
                CG.noalias() = Wm.transpose() * Gm;
                col2im_add(colg.data(), C, H, W, kh, kw, stride, pad, OH, OW,
                           gx->data() + gx->idx4(n, 0, 0, 0), dilation);
            }
            if (gb) {
                for (int oc = 0; oc < OC; ++oc) {
                    const T* p = gy.data() + gy.idx4(n, oc, 0, 0);
                    T s = T(0);
                    for (int m = 0; m < M; ++m) s += p[m];
                    gb_part[static_cast<std::size_t>(tid)][oc] += s;
                }
            }
        }
    }
    if (gw)
        for (auto& part : gw_part) accumulate_into(*gw, part);
    if (gb)
        for (auto& part : gb_part) accumulate_into(*gb, part);
}

}  // namespace ccdnet
