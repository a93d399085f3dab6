#pragma once

#include "enaet/tensor.hpp"

// Compute kernels. enaet::kern holds the OpenMP-parallel implementations used
// by the layers; enaet::kern::ref holds plain serial reference implementations
// kept for correctness tests and the kernel benchmark. Parallel kernels assign
// each output element to exactly one iteration with a fixed inner summation
// order, so results do not depend on the thread count.

namespace enaet::kern {

// C[M,N] = (accumulate ? C : 0) + A[M,K] * B[K,N], row-major.
template <typename T>
void gemm_ab(int M, int N, int K, const T* A, const T* B, T* C, bool accumulate);

// C[M,N] = (accumulate ? C : 0) + A[M,K] * B[N,K]^T, row-major.
template <typename T>
void gemm_abt(int M, int N, int K, const T* A, const T* B, T* C, bool accumulate);

template <typename T>
void transpose(int rows, int cols, const T* src, T* dst);

// col has shape [C*kh*kw, Ho*Wo] for one image.
template <typename T>
void im2col(const T* src, int C, int H, int W, int kh, int kw, int stride, int pad, T* col);

template <typename T>
void col2im_add(const T* col, int C, int H, int W, int kh, int kw, int stride, int pad, T* dst);

// x: [N,C,H,W], w: [Co, C*kh*kw], y: [N,Co,Ho,Wo]
template <typename T>
void conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, Tensor<T>& y, int kh, int kw,
                    int stride, int pad);

// dx must carry the input shape on entry (the output shape alone does not
// determine it when stride > 1); it is zeroed and overwritten.
template <typename T>
void conv2d_backward_data(const Tensor<T>& dy, const Tensor<T>& w, Tensor<T>& dx, int kh, int kw,
                          int stride, int pad);

// Accumulates into dw.
template <typename T>
void conv2d_backward_weights(const Tensor<T>& x, const Tensor<T>& dy, Tensor<T>& dw, int kh,
                             int kw, int stride, int pad);

// Per-channel mean and biased variance over (N,H,W).
template <typename T>
void bn_stats(const Tensor<T>& x, Tensor<T>& mean, Tensor<T>& var);

// xhat = (x - mean) * invstd; y = gamma * xhat + beta.
template <typename T>
void bn_forward_train(const Tensor<T>& x, const Tensor<T>& mean, const Tensor<T>& invstd,
                      const Tensor<T>& gamma, const Tensor<T>& beta, Tensor<T>& y,
                      Tensor<T>& xhat);

template <typename T>
void bn_forward_eval(const Tensor<T>& x, const Tensor<T>& running_mean,
                     const Tensor<T>& running_var, T eps, const Tensor<T>& gamma,
                     const Tensor<T>& beta, Tensor<T>& y);

// Batch-statistics backward. dgamma/dbeta accumulate.
template <typename T>
void bn_backward(const Tensor<T>& dy, const Tensor<T>& xhat, const Tensor<T>& invstd,
                 const Tensor<T>& gamma, Tensor<T>& dx, Tensor<T>& dgamma, Tensor<T>& dbeta);

template <typename T>
void relu_forward(const Tensor<T>& x, Tensor<T>& y);

// Uses the forward output as the mask (y > 0 iff x > 0).
template <typename T>
void relu_backward(const Tensor<T>& y, const Tensor<T>& dy, Tensor<T>& dx);

template <typename T>
void add_inplace(Tensor<T>& y, const Tensor<T>& x);

// [N,C,H,W] -> [N,C]
template <typename T>
void global_avg_pool_forward(const Tensor<T>& x, Tensor<T>& y);

template <typename T>
void global_avg_pool_backward(const Tensor<T>& dy, int H, int W, Tensor<T>& dx);

// Inverse-warps src with the 3x3 homography minv mapping output normalized
// coordinates to input normalized coordinates ((2c+1)/W - 1 pixel centers,
// y down). Bilinear sampling, zero outside the input.
template <typename T>
void warp_bilinear(const Tensor<T>& src, const double minv[9], Tensor<T>& dst);

// Half-pixel-center bilinear resize of one CHW image, clamp-to-edge.
template <typename T>
void resize_bilinear(const T* src, int C, int H, int W, T* dst, int oh, int ow);

// Saturation, contrast, brightness scaling then unsharp-mask sharpening.
// Factors of exactly 1 (and sharpness 0) are pass-through; the result is
// clamped to [0,1] at the end.
template <typename T>
void photometric_apply(const Tensor<T>& src, double color, double contrast, double brightness,
                       double sharpness, Tensor<T>& dst);

namespace ref {

template <typename T>
void gemm_ab(int M, int N, int K, const T* A, const T* B, T* C, bool accumulate);
template <typename T>
void gemm_abt(int M, int N, int K, const T* A, const T* B, T* C, bool accumulate);
template <typename T>
void conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, Tensor<T>& y, int kh, int kw,
                    int stride, int pad);
template <typename T>
void conv2d_backward_data(const Tensor<T>& dy, const Tensor<T>& w, Tensor<T>& dx, int kh, int kw,
                          int stride, int pad);
template <typename T>
void conv2d_backward_weights(const Tensor<T>& x, const Tensor<T>& dy, Tensor<T>& dw, int kh,
                             int kw, int stride, int pad);
template <typename T>
void bn_stats(const Tensor<T>& x, Tensor<T>& mean, Tensor<T>& var);
template <typename T>
void bn_forward_train(const Tensor<T>& x, const Tensor<T>& mean, const Tensor<T>& invstd,
                      const Tensor<T>& gamma, const Tensor<T>& beta, Tensor<T>& y,
                      Tensor<T>& xhat);
template <typename T>
void bn_backward(const Tensor<T>& dy, const Tensor<T>& xhat, const Tensor<T>& invstd,
                 const Tensor<T>& gamma, Tensor<T>& dx, Tensor<T>& dgamma, Tensor<T>& dbeta);
template <typename T>
void warp_bilinear(const Tensor<T>& src, const double minv[9], Tensor<T>& dst);
template <typename T>
void photometric_apply(const Tensor<T>& src, double color, double contrast, double brightness,
                       double sharpness, Tensor<T>& dst);
template <typename T>
void global_avg_pool_forward(const Tensor<T>& x, Tensor<T>& y);

}  // namespace ref

}  // namespace enaet::kern
