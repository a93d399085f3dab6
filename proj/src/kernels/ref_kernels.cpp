#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "enaet/kernels.hpp"

// Naive serial implementations. These trade all speed for obviousness; the
// parallel kernels are tested against them.

namespace enaet::kern::ref {

template <typename T>
void gemm_ab(int M, int N, int K, const T* A, const T* B, T* C, bool accumulate) {
  for (int i = 0; i < M; ++i)
    for (int j = 0; j < N; ++j) {
      double s = accumulate ? static_cast<double>(C[static_cast<std::size_t>(i) * N + j]) : 0.0;
      for (int k = 0; k < K; ++k)
        s += static_cast<double>(A[static_cast<std::size_t>(i) * K + k]) *
             static_cast<double>(B[static_cast<std::size_t>(k) * N + j]);
      C[static_cast<std::size_t>(i) * N + j] = static_cast<T>(s);
    }
}

template <typename T>
void gemm_abt(int M, int N, int K, const T* A, const T* B, T* C, bool accumulate) {
  for (int i = 0; i < M; ++i)
    for (int j = 0; j < N; ++j) {
      double s = accumulate ? static_cast<double>(C[static_cast<std::size_t>(i) * N + j]) : 0.0;
      for (int k = 0; k < K; ++k)
        s += static_cast<double>(A[static_cast<std::size_t>(i) * K + k]) *
             static_cast<double>(B[static_cast<std::size_t>(j) * K + k]);
      C[static_cast<std::size_t>(i) * N + j] = static_cast<T>(s);
    }
}

template <typename T>
void conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, Tensor<T>& y, int kh, int kw,
                    int stride, int pad) {
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Co = w.dim(0);
  const int Ho = (H + 2 * pad - kh) / stride + 1;
  const int Wo = (W + 2 * pad - kw) / stride + 1;
  y.resize({N, Co, Ho, Wo});
  for (int n = 0; n < N; ++n)
    for (int co = 0; co < Co; ++co)
      for (int oy = 0; oy < Ho; ++oy)
        for (int ox = 0; ox < Wo; ++ox) {
          double s = 0;
          for (int c = 0; c < C; ++c)
            for (int ky = 0; ky < kh; ++ky)
              for (int kx = 0; kx < kw; ++kx) {
                const int iy = oy * stride - pad + ky;
                const int ix = ox * stride - pad + kx;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                s += static_cast<double>(x.at(n, c, iy, ix)) *
                     static_cast<double>(w.at(co, (c * kh + ky) * kw + kx));
              }
          y.at(n, co, oy, ox) = static_cast<T>(s);
        }
}

template <typename T>
void conv2d_backward_data(const Tensor<T>& dy, const Tensor<T>& w, Tensor<T>& dx, int kh, int kw,
                          int stride, int pad) {
  const int N = dx.dim(0), C = dx.dim(1), H = dx.dim(2), W = dx.dim(3);
  const int Co = dy.dim(1), Ho = dy.dim(2), Wo = dy.dim(3);
  dx.zero();
  for (int n = 0; n < N; ++n)
    for (int co = 0; co < Co; ++co)
      for (int oy = 0; oy < Ho; ++oy)
        for (int ox = 0; ox < Wo; ++ox) {
          const T g = dy.at(n, co, oy, ox);
          for (int c = 0; c < C; ++c)
            for (int ky = 0; ky < kh; ++ky)
              for (int kx = 0; kx < kw; ++kx) {
                const int iy = oy * stride - pad + ky;
                const int ix = ox * stride - pad + kx;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                dx.at(n, c, iy, ix) += g * w.at(co, (c * kh + ky) * kw + kx);
              }
        }
}

template <typename T>
void conv2d_backward_weights(const Tensor<T>& x, const Tensor<T>& dy, Tensor<T>& dw, int kh,
                             int kw, int stride, int pad) {
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Co = dy.dim(1), Ho = dy.dim(2), Wo = dy.dim(3);
  for (int co = 0; co < Co; ++co)
    for (int c = 0; c < C; ++c)
      for (int ky = 0; ky < kh; ++ky)
        for (int kx = 0; kx < kw; ++kx) {
          double s = 0;
          for (int n = 0; n < N; ++n)
            for (int oy = 0; oy < Ho; ++oy)
              for (int ox = 0; ox < Wo; ++ox) {
                const int iy = oy * stride - pad + ky;
                const int ix = ox * stride - pad + kx;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                s += static_cast<double>(x.at(n, c, iy, ix)) *
                     static_cast<double>(dy.at(n, co, oy, ox));
              }
          dw.at(co, (c * kh + ky) * kw + kx) += static_cast<T>(s);
        }
}

template <typename T>
void bn_stats(const Tensor<T>& x, Tensor<T>& mean, Tensor<T>& var) {
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const double m = static_cast<double>(N) * H * W;
  mean.resize({C});
  var.resize({C});
  for (int c = 0; c < C; ++c) {
    double s = 0;
    for (int n = 0; n < N; ++n)
      for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < W; ++xx) s += x.at(n, c, y, xx);
    const double mu = s / m;
    double v = 0;
    for (int n = 0; n < N; ++n)
      for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < W; ++xx) {
          const double d = x.at(n, c, y, xx) - mu;
          v += d * d;
        }
    mean[c] = static_cast<T>(mu);
    var[c] = static_cast<T>(v / m);
  }
}

template <typename T>
void bn_forward_train(const Tensor<T>& x, const Tensor<T>& mean, const Tensor<T>& invstd,
                      const Tensor<T>& gamma, const Tensor<T>& beta, Tensor<T>& y,
                      Tensor<T>& xhat) {
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  y.resize(x.dims());
  xhat.resize(x.dims());
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int yy = 0; yy < H; ++yy)
        for (int xx = 0; xx < W; ++xx) {
          const T h = (x.at(n, c, yy, xx) - mean[c]) * invstd[c];
          xhat.at(n, c, yy, xx) = h;
          y.at(n, c, yy, xx) = gamma[c] * h + beta[c];
        }
}

template <typename T>
void bn_backward(const Tensor<T>& dy, const Tensor<T>& xhat, const Tensor<T>& invstd,
                 const Tensor<T>& gamma, Tensor<T>& dx, Tensor<T>& dgamma, Tensor<T>& dbeta) {
  const int N = dy.dim(0), C = dy.dim(1), H = dy.dim(2), W = dy.dim(3);
  const double m = static_cast<double>(N) * H * W;
  dx.resize(dy.dims());
  for (int c = 0; c < C; ++c) {
    double sum_dy = 0, sum_dy_xhat = 0;
    for (int n = 0; n < N; ++n)
      for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < W; ++xx) {
          sum_dy += dy.at(n, c, y, xx);
          sum_dy_xhat += static_cast<double>(dy.at(n, c, y, xx)) * xhat.at(n, c, y, xx);
        }
    const double k = static_cast<double>(gamma[c]) * invstd[c] / m;
    for (int n = 0; n < N; ++n)
      for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < W; ++xx)
          dx.at(n, c, y, xx) = static_cast<T>(
              k * (m * dy.at(n, c, y, xx) - sum_dy - xhat.at(n, c, y, xx) * sum_dy_xhat));
    dgamma[c] += static_cast<T>(sum_dy_xhat);
    dbeta[c] += static_cast<T>(sum_dy);
  }
}

template <typename T>
void warp_bilinear(const Tensor<T>& src, const double minv[9], Tensor<T>& dst) {
  const int N = src.dim(0), C = src.dim(1), H = src.dim(2), W = src.dim(3);
  dst.resize(src.dims());
  auto tap = [&](int n, int c, int y, int x) -> double {
    if (y < 0 || y >= H || x < 0 || x >= W) return 0.0;
    return src.at(n, c, y, x);
  };
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int oy = 0; oy < H; ++oy)
        for (int ox = 0; ox < W; ++ox) {
          const double nx = (2.0 * ox + 1.0) / W - 1.0;
          const double ny = (2.0 * oy + 1.0) / H - 1.0;
          const double u = minv[0] * nx + minv[1] * ny + minv[2];
          const double v = minv[3] * nx + minv[4] * ny + minv[5];
          const double w = minv[6] * nx + minv[7] * ny + minv[8];
          if (std::abs(w) <= 1e-12) {
            dst.at(n, c, oy, ox) = T(0);
            continue;
          }
          const double sx = (u / w + 1.0) * W / 2.0 - 0.5;
          const double sy = (v / w + 1.0) * H / 2.0 - 0.5;
          const int x0 = static_cast<int>(std::floor(sx));
          const int y0 = static_cast<int>(std::floor(sy));
          const double fx = sx - x0, fy = sy - y0;
          const double val = tap(n, c, y0, x0) * (1 - fx) * (1 - fy) +
                             tap(n, c, y0, x0 + 1) * fx * (1 - fy) +
                             tap(n, c, y0 + 1, x0) * (1 - fx) * fy +
                             tap(n, c, y0 + 1, x0 + 1) * fx * fy;
          dst.at(n, c, oy, ox) = static_cast<T>(val);
        }
}

template <typename T>
void photometric_apply(const Tensor<T>& src, double color, double contrast, double brightness,
                       double sharpness, Tensor<T>& dst) {
  const int N = src.dim(0), C = src.dim(1), H = src.dim(2), W = src.dim(3);
  const std::size_t HW = static_cast<std::size_t>(H) * W;
  dst.resize(src.dims());
  std::vector<double> img(C * HW), gray(HW), blur(HW);
  for (int n = 0; n < N; ++n) {
    for (std::size_t i = 0; i < C * HW; ++i)
      img[i] = src.data()[static_cast<std::size_t>(n) * C * HW + i];
    if (color != 1.0) {
      for (std::size_t i = 0; i < HW; ++i)
        gray[i] = 0.299 * img[i] + 0.587 * img[HW + i] + 0.114 * img[2 * HW + i];
      for (int c = 0; c < C; ++c)
        for (std::size_t i = 0; i < HW; ++i)
          img[c * HW + i] = gray[i] + color * (img[c * HW + i] - gray[i]);
    }
    if (contrast != 1.0) {
      double mean = 0;
      for (std::size_t i = 0; i < HW; ++i)
        mean += 0.299 * img[i] + 0.587 * img[HW + i] + 0.114 * img[2 * HW + i];
      mean /= static_cast<double>(HW);
      for (std::size_t i = 0; i < C * HW; ++i) img[i] = mean + contrast * (img[i] - mean);
    }
    if (brightness != 1.0)
      for (std::size_t i = 0; i < C * HW; ++i) img[i] *= brightness;
    if (sharpness != 0.0) {
      for (int c = 0; c < C; ++c) {
        for (int y = 0; y < H; ++y)
          for (int x = 0; x < W; ++x) {
            double s = 0;
            for (int dy = -1; dy <= 1; ++dy)
              for (int dx = -1; dx <= 1; ++dx)
                s += img[c * HW + static_cast<std::size_t>(std::clamp(y + dy, 0, H - 1)) * W +
                         std::clamp(x + dx, 0, W - 1)];
            blur[static_cast<std::size_t>(y) * W + x] = s / 9.0;
          }
        for (std::size_t i = 0; i < HW; ++i)
          img[c * HW + i] += sharpness * (img[c * HW + i] - blur[i]);
      }
    }
    for (std::size_t i = 0; i < C * HW; ++i)
      dst.data()[static_cast<std::size_t>(n) * C * HW + i] =
          static_cast<T>(std::clamp(img[i], 0.0, 1.0));
  }
}

template <typename T>
void global_avg_pool_forward(const Tensor<T>& x, Tensor<T>& y) {
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  y.resize({N, C});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      double s = 0;
      for (int yy = 0; yy < H; ++yy)
        for (int xx = 0; xx < W; ++xx) s += x.at(n, c, yy, xx);
      y.at(n, c) = static_cast<T>(s / (static_cast<double>(H) * W));
    }
}

#define ENAET_REF_INST(T)                                                                        \
  template void gemm_ab<T>(int, int, int, const T*, const T*, T*, bool);                         \
  template void gemm_abt<T>(int, int, int, const T*, const T*, T*, bool);                        \
  template void conv2d_forward<T>(const Tensor<T>&, const Tensor<T>&, Tensor<T>&, int, int, int, \
                                  int);                                                          \
  template void conv2d_backward_data<T>(const Tensor<T>&, const Tensor<T>&, Tensor<T>&, int,     \
                                        int, int, int);                                          \
  template void conv2d_backward_weights<T>(const Tensor<T>&, const Tensor<T>&, Tensor<T>&, int,  \
                                           int, int, int);                                       \
  template void bn_stats<T>(const Tensor<T>&, Tensor<T>&, Tensor<T>&);                           \
  template void bn_forward_train<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,        \
                                    const Tensor<T>&, const Tensor<T>&, Tensor<T>&, Tensor<T>&); \
  template void bn_backward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,             \
                               const Tensor<T>&, Tensor<T>&, Tensor<T>&, Tensor<T>&);            \
  template void warp_bilinear<T>(const Tensor<T>&, const double[9], Tensor<T>&);                 \
  template void photometric_apply<T>(const Tensor<T>&, double, double, double, double,           \
                                     Tensor<T>&);                                                \
  template void global_avg_pool_forward<T>(const Tensor<T>&, Tensor<T>&);

ENAET_REF_INST(float)
ENAET_REF_INST(double)

#undef ENAET_REF_INST

}  // namespace enaet::kern::ref
