#include <algorithm>
#include <cstring>
#include <vector>

#include "enaet/kernels.hpp"

namespace enaet::kern {

namespace {

inline int out_extent(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

// im2col for one image into a column block with leading dimension ld,
// starting at column offset coff.
template <typename T>
void im2col_strided(const T* src, int C, int H, int W, int kh, int kw, int stride, int pad,
                    T* col, std::size_t ld, std::size_t coff) {
  const int ho = out_extent(H, kh, stride, pad);
  const int wo = out_extent(W, kw, stride, pad);
  for (int c = 0; c < C; ++c)
    for (int ky = 0; ky < kh; ++ky)
      for (int kx = 0; kx < kw; ++kx) {
        const std::size_t row = (static_cast<std::size_t>(c) * kh + ky) * kw + kx;
        T* out = col + row * ld + coff;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= H) {
            for (int ox = 0; ox < wo; ++ox) out[static_cast<std::size_t>(oy) * wo + ox] = T(0);
            continue;
          }
          const T* in = src + (static_cast<std::size_t>(c) * H + iy) * W;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            out[static_cast<std::size_t>(oy) * wo + ox] =
                (ix >= 0 && ix < W) ? in[ix] : T(0);
          }
        }
      }
}

template <typename T>
void col2im_add_strided(const T* col, int C, int H, int W, int kh, int kw, int stride, int pad,
                        T* dst, std::size_t ld, std::size_t coff) {
  const int ho = out_extent(H, kh, stride, pad);
  const int wo = out_extent(W, kw, stride, pad);
  for (int c = 0; c < C; ++c)
    for (int ky = 0; ky < kh; ++ky)
      for (int kx = 0; kx < kw; ++kx) {
        const std::size_t row = (static_cast<std::size_t>(c) * kh + ky) * kw + kx;
        const T* in = col + row * ld + coff;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= H) continue;
          T* out = dst + (static_cast<std::size_t>(c) * H + iy) * W;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < W) out[ix] += in[static_cast<std::size_t>(oy) * wo + ox];
          }
        }
      }
}

// Images per im2col chunk: grow the GEMM N dimension for small feature maps
// while keeping the column buffer bounded.
inline int chunk_images(int batch, int pixels, int krows, std::size_t elem_size) {
  int chunk = std::max(1, 4096 / std::max(1, pixels));
  chunk = std::min(chunk, batch);
  const std::size_t budget = 8u << 20;
  while (chunk > 1 &&
         static_cast<std::size_t>(chunk) * pixels * krows * elem_size > budget)
    chunk /= 2;
  return chunk;
}

}  // namespace

template <typename T>
void im2col(const T* src, int C, int H, int W, int kh, int kw, int stride, int pad, T* col) {
  const std::size_t pixels =
      static_cast<std::size_t>(out_extent(H, kh, stride, pad)) * out_extent(W, kw, stride, pad);
  im2col_strided(src, C, H, W, kh, kw, stride, pad, col, pixels, 0);
}

template <typename T>
void col2im_add(const T* col, int C, int H, int W, int kh, int kw, int stride, int pad, T* dst) {
  const std::size_t pixels =
      static_cast<std::size_t>(out_extent(H, kh, stride, pad)) * out_extent(W, kw, stride, pad);
  col2im_add_strided(col, C, H, W, kh, kw, stride, pad, dst, pixels, 0);
}

template <typename T>
void conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, Tensor<T>& y, int kh, int kw,
                    int stride, int pad) {
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Co = w.dim(0);
  const int ho = out_extent(H, kh, stride, pad), wo = out_extent(W, kw, stride, pad);
  const int P = ho * wo;
  const int K = C * kh * kw;
  y.resize({N, Co, ho, wo});

  const int chunk = chunk_images(N, P, K, sizeof(T));
  std::vector<T> col(static_cast<std::size_t>(K) * chunk * P);
  std::vector<T> ybuf(static_cast<std::size_t>(Co) * chunk * P);
  for (int n0 = 0; n0 < N; n0 += chunk) {
    const int nc = std::min(chunk, N - n0);
    const std::size_t cols = static_cast<std::size_t>(nc) * P;
#pragma omp parallel for schedule(static)
    for (int i = 0; i < nc; ++i)
      im2col_strided(x.data() + static_cast<std::size_t>(n0 + i) * C * H * W, C, H, W, kh, kw,
                     stride, pad, col.data(), cols, static_cast<std::size_t>(i) * P);
    gemm_ab(Co, static_cast<int>(cols), K, w.data(), col.data(), ybuf.data(), false);
#pragma omp parallel for collapse(2) schedule(static)
    for (int i = 0; i < nc; ++i)
      for (int co = 0; co < Co; ++co)
        std::memcpy(&y.at(n0 + i, co, 0, 0), ybuf.data() + static_cast<std::size_t>(co) * cols +
                                                 static_cast<std::size_t>(i) * P,
                    sizeof(T) * P);
  }
}

template <typename T>
void conv2d_backward_data(const Tensor<T>& dy, const Tensor<T>& w, Tensor<T>& dx, int kh, int kw,
                          int stride, int pad) {
  const int N = dx.dim(0), C = dx.dim(1), H = dx.dim(2), W = dx.dim(3);
  const int Co = w.dim(0);
  const int ho = dy.dim(2), wo = dy.dim(3);
  const int P = ho * wo;
  const int K = C * kh * kw;
  dx.zero();

  std::vector<T> wT(static_cast<std::size_t>(K) * Co);
  transpose(Co, K, w.data(), wT.data());

  const int chunk = chunk_images(N, P, K, sizeof(T));
  std::vector<T> dybuf(static_cast<std::size_t>(Co) * chunk * P);
  std::vector<T> dcol(static_cast<std::size_t>(K) * chunk * P);
  for (int n0 = 0; n0 < N; n0 += chunk) {
    const int nc = std::min(chunk, N - n0);
    const std::size_t cols = static_cast<std::size_t>(nc) * P;
#pragma omp parallel for collapse(2) schedule(static)
    for (int i = 0; i < nc; ++i)
      for (int co = 0; co < Co; ++co)
        std::memcpy(dybuf.data() + static_cast<std::size_t>(co) * cols +
                        static_cast<std::size_t>(i) * P,
                    &dy.at(n0 + i, co, 0, 0), sizeof(T) * P);
    gemm_ab(K, static_cast<int>(cols), Co, wT.data(), dybuf.data(), dcol.data(), false);
#pragma omp parallel for schedule(static)
    for (int i = 0; i < nc; ++i)
      col2im_add_strided(dcol.data(), C, H, W, kh, kw, stride, pad,
                         dx.data() + static_cast<std::size_t>(n0 + i) * C * H * W, cols,
                         static_cast<std::size_t>(i) * P);
  }
}

template <typename T>
void conv2d_backward_weights(const Tensor<T>& x, const Tensor<T>& dy, Tensor<T>& dw, int kh,
                             int kw, int stride, int pad) {
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Co = dw.dim(0);
  const int ho = dy.dim(2), wo = dy.dim(3);
  const int P = ho * wo;
  const int K = C * kh * kw;

  const int chunk = chunk_images(N, P, K, sizeof(T));
  std::vector<T> col(static_cast<std::size_t>(K) * chunk * P);
  std::vector<T> dybuf(static_cast<std::size_t>(Co) * chunk * P);
  // chunk loop stays serial so dw accumulation order is fixed
  for (int n0 = 0; n0 < N; n0 += chunk) {
    const int nc = std::min(chunk, N - n0);
    const std::size_t cols = static_cast<std::size_t>(nc) * P;
#pragma omp parallel for schedule(static)
    for (int i = 0; i < nc; ++i)
      im2col_strided(x.data() + static_cast<std::size_t>(n0 + i) * C * H * W, C, H, W, kh, kw,
                     stride, pad, col.data(), cols, static_cast<std::size_t>(i) * P);
#pragma omp parallel for collapse(2) schedule(static)
    for (int i = 0; i < nc; ++i)
      for (int co = 0; co < Co; ++co)
        std::memcpy(dybuf.data() + static_cast<std::size_t>(co) * cols +
                        static_cast<std::size_t>(i) * P,
                    &dy.at(n0 + i, co, 0, 0), sizeof(T) * P);
    gemm_abt(Co, K, static_cast<int>(cols), dybuf.data(), col.data(), dw.data(), true);
  }
}

template void im2col<float>(const float*, int, int, int, int, int, int, int, float*);
template void im2col<double>(const double*, int, int, int, int, int, int, int, double*);
template void col2im_add<float>(const float*, int, int, int, int, int, int, int, float*);
template void col2im_add<double>(const double*, int, int, int, int, int, int, int, double*);
template void conv2d_forward<float>(const Tensor<float>&, const Tensor<float>&, Tensor<float>&,
                                    int, int, int, int);
template void conv2d_forward<double>(const Tensor<double>&, const Tensor<double>&,
                                     Tensor<double>&, int, int, int, int);
template void conv2d_backward_data<float>(const Tensor<float>&, const Tensor<float>&,
                                          Tensor<float>&, int, int, int, int);
template void conv2d_backward_data<double>(const Tensor<double>&, const Tensor<double>&,
                                           Tensor<double>&, int, int, int, int);
template void conv2d_backward_weights<float>(const Tensor<float>&, const Tensor<float>&,
                                             Tensor<float>&, int, int, int, int);
template void conv2d_backward_weights<double>(const Tensor<double>&, const Tensor<double>&,
                                              Tensor<double>&, int, int, int, int);

}  // namespace enaet::kern
