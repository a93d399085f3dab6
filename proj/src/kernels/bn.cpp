#include <cmath>

#include "enaet/kernels.hpp"

namespace enaet::kern {

// Channel loops are the parallel dimension; the per-channel reductions run in
// a fixed order with double accumulators, so results are thread-count
// independent.

template <typename T>
void bn_stats(const Tensor<T>& x, Tensor<T>& mean, Tensor<T>& var) {
  const int N = x.dim(0), C = x.dim(1);
  const std::size_t HW = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  mean.resize({C});
  var.resize({C});
  const double m = static_cast<double>(N) * HW;
#pragma omp parallel for schedule(static)
  for (int c = 0; c < C; ++c) {
    double sum = 0;
    for (int n = 0; n < N; ++n) {
      const T* p = x.data() + (static_cast<std::size_t>(n) * C + c) * HW;
      for (std::size_t i = 0; i < HW; ++i) sum += p[i];
    }
    const double mu = sum / m;
    double sq = 0;
    for (int n = 0; n < N; ++n) {
      const T* p = x.data() + (static_cast<std::size_t>(n) * C + c) * HW;
      for (std::size_t i = 0; i < HW; ++i) {
        const double d = p[i] - mu;
        sq += d * d;
      }
    }
    mean[c] = static_cast<T>(mu);
    var[c] = static_cast<T>(sq / m);
  }
}

template <typename T>
void bn_forward_train(const Tensor<T>& x, const Tensor<T>& mean, const Tensor<T>& invstd,
                      const Tensor<T>& gamma, const Tensor<T>& beta, Tensor<T>& y,
                      Tensor<T>& xhat) {
  const int N = x.dim(0), C = x.dim(1);
  const std::size_t HW = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  y.resize(x.dims());
  xhat.resize(x.dims());
#pragma omp parallel for schedule(static)
  for (int c = 0; c < C; ++c) {
    const T mu = mean[c], is = invstd[c], g = gamma[c], b = beta[c];
    for (int n = 0; n < N; ++n) {
      const std::size_t off = (static_cast<std::size_t>(n) * C + c) * HW;
      const T* px = x.data() + off;
      T* ph = xhat.data() + off;
      T* py = y.data() + off;
      for (std::size_t i = 0; i < HW; ++i) {
        const T h = (px[i] - mu) * is;
        ph[i] = h;
        py[i] = g * h + b;
      }
    }
  }
}

template <typename T>
void bn_forward_eval(const Tensor<T>& x, const Tensor<T>& running_mean,
                     const Tensor<T>& running_var, T eps, const Tensor<T>& gamma,
                     const Tensor<T>& beta, Tensor<T>& y) {
  const int N = x.dim(0), C = x.dim(1);
  const std::size_t HW = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  y.resize(x.dims());
#pragma omp parallel for schedule(static)
  for (int c = 0; c < C; ++c) {
    const T mu = running_mean[c];
    const T is = T(1) / std::sqrt(running_var[c] + eps);
    const T g = gamma[c], b = beta[c];
    for (int n = 0; n < N; ++n) {
      const std::size_t off = (static_cast<std::size_t>(n) * C + c) * HW;
      const T* px = x.data() + off;
      T* py = y.data() + off;
      for (std::size_t i = 0; i < HW; ++i) py[i] = g * (px[i] - mu) * is + b;
    }
  }
}

template <typename T>
void bn_backward(const Tensor<T>& dy, const Tensor<T>& xhat, const Tensor<T>& invstd,
                 const Tensor<T>& gamma, Tensor<T>& dx, Tensor<T>& dgamma, Tensor<T>& dbeta) {
  const int N = dy.dim(0), C = dy.dim(1);
  const std::size_t HW = static_cast<std::size_t>(dy.dim(2)) * dy.dim(3);
  dx.resize(dy.dims());
  const double m = static_cast<double>(N) * HW;
#pragma omp parallel for schedule(static)
  for (int c = 0; c < C; ++c) {
    double sum_dy = 0, sum_dy_xhat = 0;
    for (int n = 0; n < N; ++n) {
      const std::size_t off = (static_cast<std::size_t>(n) * C + c) * HW;
      const T* pdy = dy.data() + off;
      const T* ph = xhat.data() + off;
      for (std::size_t i = 0; i < HW; ++i) {
        sum_dy += pdy[i];
        sum_dy_xhat += static_cast<double>(pdy[i]) * ph[i];
      }
    }
    dgamma[c] += static_cast<T>(sum_dy_xhat);
    dbeta[c] += static_cast<T>(sum_dy);
    const T g_is_m = static_cast<T>(gamma[c] * invstd[c] / m);
    const T sdy = static_cast<T>(sum_dy), sdyh = static_cast<T>(sum_dy_xhat);
    for (int n = 0; n < N; ++n) {
      const std::size_t off = (static_cast<std::size_t>(n) * C + c) * HW;
      const T* pdy = dy.data() + off;
      const T* ph = xhat.data() + off;
      T* pdx = dx.data() + off;
      for (std::size_t i = 0; i < HW; ++i)
        pdx[i] = g_is_m * (static_cast<T>(m) * pdy[i] - sdy - ph[i] * sdyh);
    }
  }
}

template void bn_stats<float>(const Tensor<float>&, Tensor<float>&, Tensor<float>&);
template void bn_stats<double>(const Tensor<double>&, Tensor<double>&, Tensor<double>&);
template void bn_forward_train<float>(const Tensor<float>&, const Tensor<float>&,
                                      const Tensor<float>&, const Tensor<float>&,
                                      const Tensor<float>&, Tensor<float>&, Tensor<float>&);
template void bn_forward_train<double>(const Tensor<double>&, const Tensor<double>&,
                                       const Tensor<double>&, const Tensor<double>&,
                                       const Tensor<double>&, Tensor<double>&, Tensor<double>&);
template void bn_forward_eval<float>(const Tensor<float>&, const Tensor<float>&,
                                     const Tensor<float>&, float, const Tensor<float>&,
                                     const Tensor<float>&, Tensor<float>&);
template void bn_forward_eval<double>(const Tensor<double>&, const Tensor<double>&,
                                      const Tensor<double>&, double, const Tensor<double>&,
                                      const Tensor<double>&, Tensor<double>&);
template void bn_backward<float>(const Tensor<float>&, const Tensor<float>&,
                                 const Tensor<float>&, const Tensor<float>&, Tensor<float>&,
                                 Tensor<float>&, Tensor<float>&);
template void bn_backward<double>(const Tensor<double>&, const Tensor<double>&,
                                  const Tensor<double>&, const Tensor<double>&, Tensor<double>&,
                                  Tensor<double>&, Tensor<double>&);

}  // namespace enaet::kern
