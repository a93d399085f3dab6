#pragma once

#include <string>

#include "enaet/rng.hpp"
#include "enaet/tensor.hpp"

// Trainable layers with explicit forward/backward. Each layer caches what its
// backward needs, so a layer instance serves exactly one in-flight forward at
// a time. Gradients accumulate across backward calls until zero_grad().

namespace enaet {

template <typename T>
struct Conv2d {
  int in_ch = 0, out_ch = 0, k = 3, stride = 1, pad = 1;
  Tensor<T> w;   // [out_ch, in_ch*k*k], no bias (batch norm follows)
  Tensor<T> dw;

  void init(int in_channels, int out_channels, int kernel, int stride_, int pad_,
            SeedStream& rng);
  void forward(const Tensor<T>& x, Tensor<T>& y);
  // Accumulates dw; dx gets the input shape.
  void backward(const Tensor<T>& dy, Tensor<T>& dx);
  void zero_grad() { dw.zero(); }

 private:
  Tensor<T> x_;
};

template <typename T>
struct BatchNorm2d {
  int ch = 0;
  T eps = static_cast<T>(1e-5);
  T momentum = static_cast<T>(0.1);  // running = (1-m)*running + m*batch
  Tensor<T> gamma, beta, dgamma, dbeta;
  Tensor<T> running_mean, running_var;  // biased variance

  void init(int channels);
  void forward(const Tensor<T>& x, Tensor<T>& y, bool train);
  void backward(const Tensor<T>& dy, Tensor<T>& dx);
  void zero_grad() {
    dgamma.zero();
    dbeta.zero();
  }

 private:
  Tensor<T> xhat_, invstd_;
};

template <typename T>
struct Linear {
  int in_dim = 0, out_dim = 0;
  Tensor<T> w;  // [out, in]
  Tensor<T> b;  // [out]
  Tensor<T> dw, db;

  void init(int in, int out, SeedStream& rng);
  void forward(const Tensor<T>& x, Tensor<T>& y);
  void backward(const Tensor<T>& dy, Tensor<T>& dx);
  void zero_grad() {
    dw.zero();
    db.zero();
  }

 private:
  Tensor<T> x_;
};

}  // namespace enaet
