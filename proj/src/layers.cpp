#include "enaet/layers.hpp"

#include <cmath>
#include <vector>

#include "enaet/kernels.hpp"

namespace enaet {

template <typename T>
void Conv2d<T>::init(int in_channels, int out_channels, int kernel, int stride_, int pad_,
                     SeedStream& rng) {
  in_ch = in_channels;
  out_ch = out_channels;
  k = kernel;
  stride = stride_;
  pad = pad_;
  w.resize({out_ch, in_ch * k * k});
  dw.resize(w.dims());
  const double std = std::sqrt(2.0 / (in_ch * k * k));
  for (std::size_t i = 0; i < w.numel(); ++i) w[i] = static_cast<T>(rng.normal(0.0, std));
}

template <typename T>
void Conv2d<T>::forward(const Tensor<T>& x, Tensor<T>& y) {
  x_ = x;
  kern::conv2d_forward(x, w, y, k, k, stride, pad);
}

template <typename T>
void Conv2d<T>::backward(const Tensor<T>& dy, Tensor<T>& dx) {
  kern::conv2d_backward_weights(x_, dy, dw, k, k, stride, pad);
  dx.resize(x_.dims());
  kern::conv2d_backward_data(dy, w, dx, k, k, stride, pad);
}

template <typename T>
void BatchNorm2d<T>::init(int channels) {
  ch = channels;
  gamma.resize({ch});
  gamma.fill(T(1));
  beta.resize({ch});
  dgamma.resize({ch});
  dbeta.resize({ch});
  running_mean.resize({ch});
  running_var.resize({ch});
  running_var.fill(T(1));
}

template <typename T>
void BatchNorm2d<T>::forward(const Tensor<T>& x, Tensor<T>& y, bool train) {
  if (!train) {
    kern::bn_forward_eval(x, running_mean, running_var, eps, gamma, beta, y);
    return;
  }
  Tensor<T> mean, var;
  kern::bn_stats(x, mean, var);
  invstd_.resize({ch});
  for (int c = 0; c < ch; ++c) {
    invstd_[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(var[c]) + eps));
    running_mean[c] = (T(1) - momentum) * running_mean[c] + momentum * mean[c];
    running_var[c] = (T(1) - momentum) * running_var[c] + momentum * var[c];
  }
  kern::bn_forward_train(x, mean, invstd_, gamma, beta, y, xhat_);
}

template <typename T>
void BatchNorm2d<T>::backward(const Tensor<T>& dy, Tensor<T>& dx) {
  kern::bn_backward(dy, xhat_, invstd_, gamma, dx, dgamma, dbeta);
}

template <typename T>
void Linear<T>::init(int in, int out, SeedStream& rng) {
  in_dim = in;
  out_dim = out;
  w.resize({out, in});
  b.resize({out});
  dw.resize(w.dims());
  db.resize(b.dims());
  const double std = std::sqrt(2.0 / in);
  for (std::size_t i = 0; i < w.numel(); ++i) w[i] = static_cast<T>(rng.normal(0.0, std));
}

template <typename T>
void Linear<T>::forward(const Tensor<T>& x, Tensor<T>& y) {
  x_ = x;
  const int N = x.dim(0);
  y.resize({N, out_dim});
  kern::gemm_abt(N, out_dim, in_dim, x.data(), w.data(), y.data(), false);
  for (int n = 0; n < N; ++n)
    for (int o = 0; o < out_dim; ++o) y.at(n, o) += b[o];
}

template <typename T>
void Linear<T>::backward(const Tensor<T>& dy, Tensor<T>& dx) {
  const int N = dy.dim(0);
  // dw += dy^T x
  std::vector<T> dyT(static_cast<std::size_t>(out_dim) * N);
  kern::transpose(N, out_dim, dy.data(), dyT.data());
  kern::gemm_ab(out_dim, in_dim, N, dyT.data(), x_.data(), dw.data(), true);
  for (int n = 0; n < N; ++n)
    for (int o = 0; o < out_dim; ++o) db[o] += dy.at(n, o);
  dx.resize({N, in_dim});
  kern::gemm_ab(N, in_dim, out_dim, dy.data(), w.data(), dx.data(), false);
}

template struct Conv2d<float>;
template struct Conv2d<double>;
template struct BatchNorm2d<float>;
template struct BatchNorm2d<double>;
template struct Linear<float>;
template struct Linear<double>;

}  // namespace enaet
