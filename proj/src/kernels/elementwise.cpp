#include "enaet/kernels.hpp"

namespace enaet::kern {

template <typename T>
void relu_forward(const Tensor<T>& x, Tensor<T>& y) {
  y.resize(x.dims());
  const std::int64_t n = x.numel();
  const T* px = x.data();
  T* py = y.data();
#pragma omp parallel for simd schedule(static)
  for (std::int64_t i = 0; i < n; ++i) py[i] = px[i] > T(0) ? px[i] : T(0);
}

template <typename T>
void relu_backward(const Tensor<T>& y, const Tensor<T>& dy, Tensor<T>& dx) {
  dx.resize(dy.dims());
  const std::int64_t n = dy.numel();
  const T* py = y.data();
  const T* pdy = dy.data();
  T* pdx = dx.data();
#pragma omp parallel for simd schedule(static)
  for (std::int64_t i = 0; i < n; ++i) pdx[i] = py[i] > T(0) ? pdy[i] : T(0);
}

template <typename T>
void add_inplace(Tensor<T>& y, const Tensor<T>& x) {
  check_same_shape(y, x, "add_inplace");
  const std::int64_t n = y.numel();
  T* py = y.data();
  const T* px = x.data();
#pragma omp parallel for simd schedule(static)
  for (std::int64_t i = 0; i < n; ++i) py[i] += px[i];
}

template <typename T>
void global_avg_pool_forward(const Tensor<T>& x, Tensor<T>& y) {
  const int N = x.dim(0), C = x.dim(1);
  const std::size_t HW = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  y.resize({N, C});
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T* p = x.data() + (static_cast<std::size_t>(n) * C + c) * HW;
      double s = 0;
      for (std::size_t i = 0; i < HW; ++i) s += p[i];
      y.at(n, c) = static_cast<T>(s / static_cast<double>(HW));
    }
}

template <typename T>
void global_avg_pool_backward(const Tensor<T>& dy, int H, int W, Tensor<T>& dx) {
  const int N = dy.dim(0), C = dy.dim(1);
  const std::size_t HW = static_cast<std::size_t>(H) * W;
  dx.resize({N, C, H, W});
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T g = dy.at(n, c) / static_cast<T>(HW);
      T* p = dx.data() + (static_cast<std::size_t>(n) * C + c) * HW;
      for (std::size_t i = 0; i < HW; ++i) p[i] = g;
    }
}

template void relu_forward<float>(const Tensor<float>&, Tensor<float>&);
template void relu_forward<double>(const Tensor<double>&, Tensor<double>&);
template void relu_backward<float>(const Tensor<float>&, const Tensor<float>&, Tensor<float>&);
template void relu_backward<double>(const Tensor<double>&, const Tensor<double>&,
                                    Tensor<double>&);
template void add_inplace<float>(Tensor<float>&, const Tensor<float>&);
template void add_inplace<double>(Tensor<double>&, const Tensor<double>&);
template void global_avg_pool_forward<float>(const Tensor<float>&, Tensor<float>&);
template void global_avg_pool_forward<double>(const Tensor<double>&, Tensor<double>&);
template void global_avg_pool_backward<float>(const Tensor<float>&, int, int, Tensor<float>&);
template void global_avg_pool_backward<double>(const Tensor<double>&, int, int, Tensor<double>&);

}  // namespace enaet::kern
